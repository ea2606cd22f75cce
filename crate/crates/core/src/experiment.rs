//! Desk-scale experiment: per training seed, a sentence-level baseline, a
//! context model bootstrapped from it, a baseline with decoder pre-training,
//! and baseline and conversational language models, all scored on the eval
//! split of one corpus.

use crate::corpus::{generate_corpus, CorpusSet, FeatureSpec, GeneratorConfig, Split};
use crate::decode::{decode_split, perplexity, pooled_wer, BeamConfig, PplRow, Recognizer, WerRow};
use crate::error::Result;
use crate::model::{AsrModel, ContextMode, ContextSource, LanguageModel, LmConfig};
use crate::tokenizer::{Tokenizer, DEFAULT_MERGES};
use crate::train::{
    bootstrap, context_vocabulary, new_model, prepare, pretrain_decoder, train, train_lm, EpochRecord,
    PreparedConversation, TrainConfig,
};

pub const BASELINE_LABEL: &str = "baseline";
pub const PRETRAINED_LABEL: &str = "pretrained";
pub const CONVERSATIONAL_LM_LABEL: &str = "conversational";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub features: FeatureSpec,
    pub merges: usize,
    /// Shared optimizer settings; `mode` and `seed` are set per model.
    pub train: TrainConfig,
    /// Baseline epochs before the context model is bootstrapped.
    pub baseline_epochs: usize,
    /// Further epochs for both the baseline and the bootstrapped model.
    pub context_epochs: usize,
    pub lm_epochs: usize,
    pub context_mode: ContextMode,
    pub beam: BeamConfig,
    pub with_pretrain: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig {
            eps: 1e-5,
            patience: 100,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            generator: GeneratorConfig::default(),
            features: FeatureSpec::default(),
            merges: DEFAULT_MERGES,
            train,
            baseline_epochs: 10,
            context_epochs: 10,
            lm_epochs: 10,
            context_mode: ContextMode::Mean,
            beam: BeamConfig::default(),
            with_pretrain: true,
        }
    }
}

/// Corpus, tokenizer and prepared splits shared by every seed.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub corpus: CorpusSet,
    pub tokenizer: Tokenizer,
    pub train: Vec<PreparedConversation>,
    pub dev: Vec<PreparedConversation>,
    pub eval: Vec<PreparedConversation>,
}

impl ExperimentData {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let corpus = generate_corpus(&cfg.generator, &cfg.features)?;
        let tokenizer = Tokenizer::learn(&corpus.transcripts(Split::Train), cfg.merges)?;
        let train = prepare(&corpus, Split::Train, &tokenizer);
        let dev = prepare(&corpus, Split::Dev, &tokenizer);
        let eval = prepare(&corpus, Split::Eval, &tokenizer);
        Ok(ExperimentData {
            corpus,
            tokenizer,
            train,
            dev,
            eval,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.corpus.feature_spec.feature_dim
    }
}

#[derive(Debug, Clone)]
pub struct SeedModels {
    pub baseline: AsrModel,
    pub context: AsrModel,
    pub pretrained: Option<AsrModel>,
    pub lm: LanguageModel,
    pub conversational_lm: LanguageModel,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub wer_rows: Vec<WerRow>,
    pub ppl_rows: Vec<PplRow>,
    pub traces: Vec<(String, Vec<EpochRecord>)>,
    pub models: SeedModels,
}

impl SeedOutcome {
    pub fn wer(&self, mode: &str, source: ContextSource) -> Option<f64> {
        self.wer_rows
            .iter()
            .find(|r| r.mode == mode && r.context_source == source.as_str())
            .map(|r| r.wer)
    }

    pub fn ppl(&self, lm: &str) -> Option<f64> {
        self.ppl_rows.iter().find(|r| r.lm == lm).map(|r| r.ppl)
    }
}

/// Joins traces of consecutive `train` calls into one epoch numbering.
fn chain(parts: Vec<Vec<EpochRecord>>) -> Vec<EpochRecord> {
    let mut out: Vec<EpochRecord> = Vec::new();
    for part in parts {
        let offset = out.last().map_or(0, |r| r.epoch);
        out.extend(part.into_iter().map(|r| EpochRecord {
            epoch: r.epoch + offset,
            ..r
        }));
    }
    out
}

fn seeded(cfg: &ExperimentConfig, mode: ContextMode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        ..cfg.train.clone()
    }
}

/// Trains every model for one seed and scores it on the eval split. The
/// baseline and the bootstrapped context model see the same number of
/// epochs; language models fuse with weight `beam.beta` using the
/// sentence-level LM for every recognizer.
pub fn run_seed(data: &ExperimentData, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let (tr, dv) = (&data.train, &data.dev);
    let mut traces = Vec::new();

    let base_cfg = seeded(cfg, ContextMode::Baseline, seed);
    let mut baseline = new_model(&base_cfg, &data.tokenizer, data.feature_dim(), tr)?;
    let first = train(&mut baseline, tr, dv, &base_cfg, cfg.baseline_epochs)?;
    let snapshot = baseline.clone();
    let second = train(&mut baseline, tr, dv, &base_cfg, cfg.context_epochs)?;
    traces.push((BASELINE_LABEL.to_string(), chain(vec![first.trace, second.trace])));

    let ctx_cfg = seeded(cfg, cfg.context_mode, seed);
    let mut context = bootstrap(&snapshot, &ctx_cfg, tr)?;
    let o = train(&mut context, tr, dv, &ctx_cfg, cfg.context_epochs)?;
    traces.push((cfg.context_mode.as_str().to_string(), o.trace));

    let pretrained = if cfg.with_pretrain {
        let mut m = new_model(&base_cfg, &data.tokenizer, data.feature_dim(), tr)?;
        let p = pretrain_decoder(&mut m, tr, dv, &base_cfg)?;
        let a = train(&mut m, tr, dv, &base_cfg, cfg.baseline_epochs)?;
        let b = train(&mut m, tr, dv, &base_cfg, cfg.context_epochs)?;
        traces.push((format!("{PRETRAINED_LABEL}-decoder"), p.trace));
        traces.push((PRETRAINED_LABEL.to_string(), chain(vec![a.trace, b.trace])));
        Some(m)
    } else {
        None
    };

    let lm_cfg = TrainConfig {
        epochs: cfg.lm_epochs,
        ..base_cfg.clone()
    };
    let mut lm = LanguageModel::new(LmConfig::new(data.tokenizer.vocab_size(), false), seed)?;
    traces.push((
        format!("lm-{BASELINE_LABEL}"),
        train_lm(&mut lm, tr, dv, &lm_cfg)?.trace,
    ));
    let mut conv_cfg = LmConfig::new(data.tokenizer.vocab_size(), true);
    conv_cfg.context_words = context_vocabulary(tr).0;
    let mut conversational_lm = LanguageModel::new(conv_cfg, seed)?;
    traces.push((
        format!("lm-{CONVERSATIONAL_LM_LABEL}"),
        train_lm(&mut conversational_lm, tr, dv, &lm_cfg)?.trace,
    ));

    let ppl_rows = vec![
        PplRow {
            lm: BASELINE_LABEL.to_string(),
            split: Split::Eval.as_str().to_string(),
            ppl: perplexity(&lm, &data.eval, false)?,
            seed,
        },
        PplRow {
            lm: CONVERSATIONAL_LM_LABEL.to_string(),
            split: Split::Eval.as_str().to_string(),
            ppl: perplexity(&conversational_lm, &data.eval, true)?,
            seed,
        },
    ];

    let mut wer_rows = Vec::new();
    let mut score = |label: &str, model: &AsrModel, sources: &[ContextSource]| -> Result<()> {
        let rec = Recognizer {
            model,
            lm: Some(&lm),
            tokenizer: &data.tokenizer,
            beam: cfg.beam,
        };
        for &source in sources {
            let w = pooled_wer(&decode_split(&rec, &data.eval, source, seed)?);
            wer_rows.push(WerRow {
                mode: label.to_string(),
                context_source: source.as_str().to_string(),
                split: Split::Eval.as_str().to_string(),
                wer: w.wer,
                subs: w.subs,
                ins: w.ins,
                dels: w.dels,
                seed,
            });
        }
        Ok(())
    };
    score(BASELINE_LABEL, &baseline, &[ContextSource::Zero])?;
    score(cfg.context_mode.as_str(), &context, &ContextSource::ALL)?;
    if let Some(m) = &pretrained {
        score(PRETRAINED_LABEL, m, &[ContextSource::Zero])?;
    }

    Ok(SeedOutcome {
        seed,
        wer_rows,
        ppl_rows,
        traces,
        models: SeedModels {
            baseline,
            context,
            pretrained,
            lm,
            conversational_lm,
        },
    })
}
