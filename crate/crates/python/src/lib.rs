//! Python bindings: corpus generation, tokenizer, CTC loss, WER, batch
//! planning, and training and decoding of recognizers.

use std::path::PathBuf;

use ctxasr::corpus::{generate_corpus, CorpusSet, FeatureSpec, GeneratorConfig, Split};
use ctxasr::decode::{decode_split, pooled_wer, BeamConfig, Recognizer as CoreRecognizer, WerStats as CoreWer};
use ctxasr::model::{AsrModel, ContextMode, ContextSource, LanguageModel};
use ctxasr::tokenizer::Tokenizer as CoreTokenizer;
use ctxasr::train::{bootstrap, new_model, prepare, train_recognizer, TrainConfig};
use ctxasr::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Parse { .. } | Error::Incompatible(_) | Error::UnknownWord { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

#[pyclass(name = "Tokenizer", module = "ctxasr_py")]
struct Tokenizer {
    inner: CoreTokenizer,
}

#[pymethods]
impl Tokenizer {
    #[staticmethod]
    #[pyo3(signature = (transcripts, merges = 200))]
    fn learn(transcripts: Vec<Vec<String>>, merges: usize) -> PyResult<Self> {
        let inner = CoreTokenizer::learn(&transcripts, merges).map_err(py_err)?;
        Ok(Tokenizer { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Tokenizer {
            inner: CoreTokenizer::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.bpe.save(&path).map_err(py_err)
    }

    fn encode(&self, words: Vec<String>) -> Vec<usize> {
        self.inner.encode(&words)
    }

    fn decode(&self, ids: Vec<usize>) -> PyResult<Vec<String>> {
        self.inner.decode(&ids).map_err(py_err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
}

#[pyclass(name = "Corpus", module = "ctxasr_py")]
struct Corpus {
    inner: CorpusSet,
}

#[pymethods]
impl Corpus {
    /// Synthetic corpus from the default generator with optional overrides.
    #[staticmethod]
    #[pyo3(signature = (seed = 1, train_conversations = None, dev_conversations = None, eval_conversations = None, lexicon_size = None))]
    fn generate(
        seed: u64,
        train_conversations: Option<usize>,
        dev_conversations: Option<usize>,
        eval_conversations: Option<usize>,
        lexicon_size: Option<usize>,
    ) -> PyResult<Self> {
        let d = GeneratorConfig::default();
        let g = GeneratorConfig {
            seed,
            train_conversations: train_conversations.unwrap_or(d.train_conversations),
            dev_conversations: dev_conversations.unwrap_or(d.dev_conversations),
            eval_conversations: eval_conversations.unwrap_or(d.eval_conversations),
            lexicon_size: lexicon_size.unwrap_or(d.lexicon_size),
            ..d
        };
        Ok(Corpus {
            inner: generate_corpus(&g, &FeatureSpec::default()).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Corpus {
            inner: CorpusSet::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[pyo3(signature = (split = "train"))]
    fn transcripts(&self, split: &str) -> PyResult<Vec<Vec<String>>> {
        Ok(self.inner.transcripts(parse::<Split>(split)?))
    }

    #[pyo3(signature = (split = "train"))]
    fn conversation_ids(&self, split: &str) -> PyResult<Vec<String>> {
        Ok(self
            .inner
            .split(parse::<Split>(split)?)
            .iter()
            .map(|c| c.conv_id.clone())
            .collect())
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_spec.feature_dim
    }
}

#[pyclass(name = "WerStats", module = "ctxasr_py", get_all, frozen)]
struct WerStats {
    wer: f64,
    subs: usize,
    ins: usize,
    dels: usize,
    ref_len: usize,
}

impl From<CoreWer> for WerStats {
    fn from(w: CoreWer) -> Self {
        WerStats {
            wer: w.wer,
            subs: w.subs,
            ins: w.ins,
            dels: w.dels,
            ref_len: w.ref_len,
        }
    }
}

#[pymethods]
impl WerStats {
    fn __repr__(&self) -> String {
        format!(
            "WerStats(wer={:.4}, subs={}, ins={}, dels={}, ref_len={})",
            self.wer, self.subs, self.ins, self.dels, self.ref_len
        )
    }
}

#[pyfunction]
fn wer(reference: Vec<String>, hypothesis: Vec<String>) -> WerStats {
    ctxasr::decode::wer(&reference, &hypothesis).into()
}

/// Negative log-likelihood and its gradient with respect to the logits.
#[pyfunction]
#[pyo3(signature = (log_post, target, blank = 0))]
fn ctc_loss(log_post: Vec<Vec<f64>>, target: Vec<usize>, blank: usize) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let r = ctxasr::ctc::ctc_loss(&log_post, &target, blank).map_err(py_err)?;
    Ok((r.nll, r.grad_logits))
}

/// Batches as lists of `(conversation id, sentence index)`.
#[pyfunction]
fn plan_batches(
    conv_ids: Vec<String>,
    lengths: Vec<usize>,
    batch_size: usize,
    seed: u64,
) -> PyResult<Vec<Vec<(String, usize)>>> {
    let ids: Vec<&str> = conv_ids.iter().map(String::as_str).collect();
    let plan = ctxasr::train::plan_batches(&ids, &lengths, batch_size, seed).map_err(py_err)?;
    Ok(plan
        .batches
        .into_iter()
        .map(|b| b.into_iter().map(|it| (it.conv_id, it.sentence)).collect())
        .collect())
}

#[pyclass(name = "Recognizer", module = "ctxasr_py")]
struct Recognizer {
    model: AsrModel,
    tokenizer: CoreTokenizer,
    lm: Option<LanguageModel>,
}

#[pymethods]
impl Recognizer {
    /// Trains on the corpus' train split, using its dev split for model
    /// selection. `init` bootstraps a context model from a baseline.
    #[staticmethod]
    #[pyo3(signature = (corpus, tokenizer, mode = "baseline", epochs = 5, seed = 1, init = None))]
    fn train(
        py: Python<'_>,
        corpus: &Corpus,
        tokenizer: &Tokenizer,
        mode: &str,
        epochs: usize,
        seed: u64,
        init: Option<&Recognizer>,
    ) -> PyResult<Self> {
        let cfg = TrainConfig {
            mode: parse::<ContextMode>(mode)?,
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let tok = tokenizer.inner.clone();
        let base = init.map(|r| r.model.clone());
        let corpus = &corpus.inner;
        let model = py
            .detach(|| -> ctxasr::Result<AsrModel> {
                let tr = prepare(corpus, Split::Train, &tok);
                let dv = prepare(corpus, Split::Dev, &tok);
                let mut m = match &base {
                    Some(b) => bootstrap(b, &cfg, &tr)?,
                    None => new_model(&cfg, &tok, corpus.feature_spec.feature_dim, &tr)?,
                };
                train_recognizer(&mut m, &tr, &dv, &cfg)?;
                Ok(m)
            })
            .map_err(py_err)?;
        Ok(Recognizer {
            model,
            tokenizer: tok,
            lm: None,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (model, bpe, lm = None))]
    fn load(model: PathBuf, bpe: PathBuf, lm: Option<PathBuf>) -> PyResult<Self> {
        Ok(Recognizer {
            model: AsrModel::load(&model).map_err(py_err)?,
            tokenizer: CoreTokenizer::load(&bpe).map_err(py_err)?,
            lm: lm.map(|p| LanguageModel::load(&p)).transpose().map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path).map_err(py_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.model.mode().as_str()
    }

    /// n-best `(words, score)` for one utterance.
    #[pyo3(signature = (features, prev_words = None, beam = 10, alpha = None, beta = None, penalty = None))]
    fn recognize(
        &self,
        features: Vec<Vec<f64>>,
        prev_words: Option<Vec<String>>,
        beam: usize,
        alpha: Option<f64>,
        beta: Option<f64>,
        penalty: Option<f64>,
    ) -> PyResult<Vec<(Vec<String>, f64)>> {
        let rec = self.core(beam, alpha, beta, penalty)?;
        let nbest = rec.recognize(&features, prev_words.as_deref()).map_err(py_err)?;
        nbest
            .iter()
            .map(|h| Ok((rec.words(h).map_err(py_err)?, h.score)))
            .collect()
    }

    /// Pooled WER of a split decoded with one context source.
    #[pyo3(signature = (corpus, split = "eval", context_source = "zero", seed = 1, beam = 10))]
    fn evaluate(
        &self,
        py: Python<'_>,
        corpus: &Corpus,
        split: &str,
        context_source: &str,
        seed: u64,
        beam: usize,
    ) -> PyResult<WerStats> {
        let split = parse::<Split>(split)?;
        let source = parse::<ContextSource>(context_source)?;
        let rec = self.core(beam, None, None, None)?;
        let corpus = &corpus.inner;
        let stats = py
            .detach(|| {
                let convs = prepare(corpus, split, &self.tokenizer);
                decode_split(&rec, &convs, source, seed).map(|d| pooled_wer(&d))
            })
            .map_err(py_err)?;
        Ok(stats.into())
    }
}

impl Recognizer {
    fn core(
        &self,
        beam: usize,
        alpha: Option<f64>,
        beta: Option<f64>,
        penalty: Option<f64>,
    ) -> PyResult<CoreRecognizer<'_>> {
        let d = BeamConfig::default();
        let cfg = BeamConfig {
            beam,
            alpha: alpha.unwrap_or(d.alpha),
            beta: beta.unwrap_or(d.beta),
            penalty: penalty.unwrap_or(d.penalty),
            max_len: None,
        };
        cfg.validate().map_err(py_err)?;
        Ok(CoreRecognizer {
            model: &self.model,
            lm: self.lm.as_ref(),
            tokenizer: &self.tokenizer,
            beam: cfg,
        })
    }
}

#[pymodule]
fn ctxasr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tokenizer>()?;
    m.add_class::<Corpus>()?;
    m.add_class::<WerStats>()?;
    m.add_class::<Recognizer>()?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(plan_batches, m)?)?;
    Ok(())
}
