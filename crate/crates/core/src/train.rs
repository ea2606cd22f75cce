//! Conversation-serialized batching and the training loops.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Conversation, CorpusSet, Split};
use crate::error::{Error, Result};
use crate::model::{AsrModel, ContextMode, LanguageModel, ModelConfig, Utterance};
use crate::numcore::{clip_grad_norm, AdaDeltaState, Grads, ParamId, ParamSet};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct BatchItem {
    /// Position of the conversation in the planned slice.
    pub conv: usize,
    pub conv_id: String,
    pub sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<BatchItem>>,
    pub seed: u64,
}

impl BatchPlan {
    pub fn num_items(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Plans one epoch. Conversations are shuffled by `seed`; each minibatch
/// holds the next sentence of up to `batch_size` active conversations, and a
/// finished conversation's slot is refilled by the next unstarted one.
/// Items within a minibatch are sorted by conversation id.
pub fn plan_batches(conv_ids: &[&str], lengths: &[usize], batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if conv_ids.len() != lengths.len() {
        return Err(Error::Shape("one length per conversation is required".into()));
    }
    let mut order: Vec<usize> = (0..conv_ids.len()).filter(|&i| lengths[i] > 0).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut pending = order.into_iter();
    let mut active: Vec<(usize, usize)> = Vec::with_capacity(batch_size);
    let mut batches = Vec::new();
    loop {
        while active.len() < batch_size {
            match pending.next() {
                Some(c) => active.push((c, 0)),
                None => break,
            }
        }
        if active.is_empty() {
            break;
        }
        let mut batch: Vec<BatchItem> = active
            .iter()
            .map(|&(c, k)| BatchItem {
                conv: c,
                conv_id: conv_ids[c].to_string(),
                sentence: k,
            })
            .collect();
        batch.sort_by(|a, b| a.conv_id.cmp(&b.conv_id).then(a.conv.cmp(&b.conv)));
        batches.push(batch);
        for slot in &mut active {
            slot.1 += 1;
        }
        active.retain(|&(c, k)| k < lengths[c]);
    }
    Ok(BatchPlan { batches, seed })
}

pub fn make_batch_plan(conversations: &[Conversation], batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if conversations.is_empty() {
        return Err(Error::EmptyCorpus("no conversations to batch".into()));
    }
    let ids: Vec<&str> = conversations.iter().map(|c| c.conv_id.as_str()).collect();
    let lens: Vec<usize> = conversations.iter().map(|c| c.sentences.len()).collect();
    plan_batches(&ids, &lens, batch_size, seed)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip: f64,
    pub rho: f64,
    pub eps: f64,
    pub seed: u64,
    pub mode: ContextMode,
    pub pretrain: bool,
    pub pretrain_epochs: usize,
    pub bootstrap: Option<String>,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            gamma: 0.1,
            epochs: 20,
            batch_size: 8,
            clip: 5.0,
            rho: 0.95,
            eps: 1e-8,
            seed: 1,
            mode: ContextMode::Baseline,
            pretrain: false,
            pretrain_epochs: 5,
            bootstrap: None,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 13] = [
        "lambda",
        "gamma",
        "epochs",
        "batch_size",
        "clip",
        "rho",
        "eps",
        "seed",
        "mode",
        "pretrain",
        "pretrain_epochs",
        "bootstrap",
        "patience",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{key}` cannot be `{v}`")))
        }
        match key {
            "lambda" => self.lambda = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "pretrain" => self.pretrain = num(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = num(key, value)?,
            "bootstrap" => self.bootstrap = (!value.is_empty()).then(|| value.to_string()),
            "patience" => self.patience = num(key, value)?,
            other => return Err(Error::Config(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "clip = {}", self.clip);
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "pretrain = {}", self.pretrain);
        let _ = writeln!(s, "pretrain_epochs = {}", self.pretrain_epochs);
        let _ = writeln!(s, "bootstrap = {}", self.bootstrap.as_deref().unwrap_or(""));
        let _ = writeln!(s, "patience = {}", self.patience);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.gamma >= 0.0 && self.clip > 0.0 && self.rho > 0.0 && self.rho < 1.0 && self.eps > 0.0) {
            return Err(Error::Config(
                "gamma ≥ 0, clip > 0, 0 < rho < 1 and eps > 0 are required".into(),
            ));
        }
        Ok(())
    }
}

/// A sentence with its unit targets and word transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSentence {
    pub index: usize,
    pub features: Vec<Vec<f64>>,
    pub units: Vec<usize>,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedConversation {
    pub conv_id: String,
    pub sentences: Vec<PreparedSentence>,
}

pub fn prepare(corpus: &CorpusSet, split: Split, tokenizer: &Tokenizer) -> Vec<PreparedConversation> {
    corpus
        .split(split)
        .iter()
        .map(|c| PreparedConversation {
            conv_id: c.conv_id.clone(),
            sentences: c
                .sentences
                .iter()
                .map(|s| {
                    let words = corpus.words_of(&s.words);
                    PreparedSentence {
                        index: s.index,
                        features: s.features.clone(),
                        units: tokenizer.encode(&words),
                        words,
                    }
                })
                .collect(),
        })
        .collect()
}

/// Word types of the training transcripts and the sorted training
/// conversation ids.
pub fn context_vocabulary(train: &[PreparedConversation]) -> (Vec<String>, Vec<String>) {
    let words: BTreeSet<&String> = train.iter().flat_map(|c| &c.sentences).flat_map(|s| &s.words).collect();
    let ids: BTreeSet<&String> = train.iter().map(|c| &c.conv_id).collect();
    (words.into_iter().cloned().collect(), ids.into_iter().cloned().collect())
}

/// Fresh recognizer sized for `tokenizer` and configured from `cfg`.
pub fn new_model(
    cfg: &TrainConfig,
    tokenizer: &Tokenizer,
    feature_dim: usize,
    train: &[PreparedConversation],
) -> Result<AsrModel> {
    let mut mc = ModelConfig::new(cfg.mode, tokenizer.vocab_size(), feature_dim);
    mc.lambda = cfg.lambda;
    mc.gamma = cfg.gamma;
    if cfg.mode.uses_context() {
        let (words, ids) = context_vocabulary(train);
        mc.context_words = words;
        mc.conv_ids = ids;
    }
    AsrModel::new(mc, cfg.seed)
}

/// Context model initialized from a baseline checkpoint.
pub fn bootstrap(base: &AsrModel, cfg: &TrainConfig, train: &[PreparedConversation]) -> Result<AsrModel> {
    let (words, ids) = context_vocabulary(train);
    let mut model = AsrModel::bootstrap(base, cfg.mode, words, ids, cfg.seed)?;
    model.config.lambda = cfg.lambda;
    model.config.gamma = cfg.gamma;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceLoss {
    /// Objective value for this sentence.
    pub loss: f64,
    /// Unit-level negative log-likelihood used for perplexity.
    pub nll: f64,
    pub tokens: usize,
}

/// Something trainable sentence by sentence.
pub trait Objective: Sync {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Parameters the optimizer may change; `None` means all.
    fn trainable(&self) -> Option<Vec<ParamId>> {
        None
    }
    fn sentence(&self, conv: &PreparedConversation, k: usize, grads: Option<&mut Grads>) -> Result<SentenceLoss>;
}

fn prev_words(conv: &PreparedConversation, k: usize) -> Option<&[String]> {
    (k > 0).then(|| conv.sentences[k - 1].words.as_slice())
}

impl Objective for AsrModel {
    fn params(&self) -> &ParamSet {
        &self.ps
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.ps
    }

    fn sentence(&self, conv: &PreparedConversation, k: usize, grads: Option<&mut Grads>) -> Result<SentenceLoss> {
        let s = &conv.sentences[k];
        let u = Utterance {
            features: &s.features,
            target: &s.units,
            prev_words: prev_words(conv, k),
            conv_id: Some(&conv.conv_id),
        };
        let l = self.loss(&u, grads)?;
        Ok(SentenceLoss {
            loss: l.total,
            nll: l.att,
            tokens: l.att_steps,
        })
    }
}

impl Objective for LanguageModel {
    fn params(&self) -> &ParamSet {
        &self.ps
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.ps
    }

    fn sentence(&self, conv: &PreparedConversation, k: usize, grads: Option<&mut Grads>) -> Result<SentenceLoss> {
        let (nll, tokens) = self.sentence_loss(&conv.sentences[k].units, prev_words(conv, k), grads)?;
        Ok(SentenceLoss { loss: nll, nll, tokens })
    }
}

/// The recognizer's decoder trained alone as a unit-level language model.
pub struct DecoderAsLm<'a>(pub &'a mut AsrModel);

impl Objective for DecoderAsLm<'_> {
    fn params(&self) -> &ParamSet {
        &self.0.ps
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.0.ps
    }

    fn trainable(&self) -> Option<Vec<ParamId>> {
        Some(self.0.decoder_lm_params())
    }

    fn sentence(&self, conv: &PreparedConversation, k: usize, grads: Option<&mut Grads>) -> Result<SentenceLoss> {
        let (nll, tokens) = self.0.decoder.lm_loss(&self.0.ps, &conv.sentences[k].units, grads)?;
        Ok(SentenceLoss { loss: nll, nll, tokens })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub ppl: f64,
}

pub fn trace_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,split,loss,ppl\n");
    for r in records {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.epoch, r.split.as_str(), r.loss, r.ppl);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<EpochRecord>,
    pub steps: usize,
    /// Epoch whose parameters were kept (best dev loss, or the last one).
    pub best_epoch: usize,
}

/// Mean loss and perplexity over every sentence of `convs`.
pub fn evaluate<O: Objective + ?Sized>(obj: &O, convs: &[PreparedConversation]) -> Result<(f64, f64)> {
    let items: Vec<(usize, usize)> = convs
        .iter()
        .enumerate()
        .flat_map(|(c, conv)| (0..conv.sentences.len()).map(move |k| (c, k)))
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyCorpus("nothing to evaluate".into()));
    }
    let losses: Vec<SentenceLoss> = items
        .par_iter()
        .map(|&(c, k)| obj.sentence(&convs[c], k, None))
        .collect::<Result<_>>()?;
    let total: f64 = losses.iter().map(|l| l.loss).sum();
    let nll: f64 = losses.iter().map(|l| l.nll).sum();
    let tokens: usize = losses.iter().map(|l| l.tokens).sum();
    Ok((total / items.len() as f64, (nll / tokens.max(1) as f64).exp()))
}

/// Trains `obj` with AdaDelta and global-norm clipping on conversation-
/// serialized minibatches. With a non-empty dev set, training stops after
/// `patience` epochs without dev improvement and the best parameters are kept.
pub fn train<O: Objective>(
    obj: &mut O,
    train_set: &[PreparedConversation],
    dev_set: &[PreparedConversation],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.iter().all(|c| c.sentences.is_empty()) {
        return Err(Error::EmptyCorpus("training split has no sentences".into()));
    }
    let ids: Vec<&str> = train_set.iter().map(|c| c.conv_id.as_str()).collect();
    let lens: Vec<usize> = train_set.iter().map(|c| c.sentences.len()).collect();
    let trainable = obj.trainable();
    let mut opt = AdaDeltaState::new(obj.params(), cfg.rho, cfg.eps);
    let mut trace = Vec::new();
    let mut steps = 0;
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut since_best = 0;
    let mut last_epoch = 0;
    for epoch in 1..=epochs {
        last_epoch = epoch;
        let plan = plan_batches(&ids, &lens, cfg.batch_size, epoch_seed(cfg.seed, epoch))?;
        let (mut loss_sum, mut nll_sum, mut tok_sum, mut count) = (0.0, 0.0, 0usize, 0usize);
        for (b, batch) in plan.batches.iter().enumerate() {
            let o: &O = obj;
            let results: Vec<(SentenceLoss, Grads)> = batch
                .par_iter()
                .map(|it| {
                    let mut g = o.params().zero_grads();
                    let l = o.sentence(&train_set[it.conv], it.sentence, Some(&mut g))?;
                    Ok((l, g))
                })
                .collect::<Result<_>>()?;
            let mut grads = obj.params().zero_grads();
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l.loss;
                nll_sum += l.nll;
                tok_sum += l.tokens;
                grads.add_assign(g);
            }
            if !batch_loss.is_finite() {
                let who: Vec<String> = batch.iter().map(|i| format!("{}#{}", i.conv_id, i.sentence)).collect();
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("non-finite loss over {}", who.join(" ")),
                });
            }
            loss_sum += batch_loss;
            count += batch.len();
            grads.scale(1.0 / batch.len() as f64);
            let ps = obj.params_mut();
            ps.set_grads(grads);
            clip_grad_norm(ps, cfg.clip).map_err(|e| Error::Divergence {
                epoch,
                batch: b,
                detail: e.to_string(),
            })?;
            match &trainable {
                Some(ids) => opt.update_only(ps, ids)?,
                None => opt.update(ps)?,
            }
            ps.clear_grads();
            steps += 1;
        }
        trace.push(EpochRecord {
            epoch,
            split: Split::Train,
            loss: loss_sum / count as f64,
            ppl: (nll_sum / tok_sum.max(1) as f64).exp(),
        });
        if dev_set.iter().any(|c| !c.sentences.is_empty()) {
            let (dev_loss, dev_ppl) = evaluate(obj, dev_set)?;
            trace.push(EpochRecord {
                epoch,
                split: Split::Dev,
                loss: dev_loss,
                ppl: dev_ppl,
            });
            if best.as_ref().is_none_or(|(l, _, _)| dev_loss < *l) {
                best = Some((dev_loss, epoch, obj.params().clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, ps)) => {
            *obj.params_mut() = ps;
            e
        }
        None => last_epoch,
    };
    Ok(TrainOutcome {
        trace,
        steps,
        best_epoch,
    })
}

/// Trains only the decoder's embedding, recurrent layers and output
/// projection as a language model over transcripts.
pub fn pretrain_decoder(
    model: &mut AsrModel,
    train_set: &[PreparedConversation],
    dev_set: &[PreparedConversation],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train(&mut DecoderAsLm(model), train_set, dev_set, cfg, cfg.pretrain_epochs)
}

/// Full recipe for a recognizer: optional decoder pre-training, then
/// joint training.
pub fn train_recognizer(
    model: &mut AsrModel,
    train_set: &[PreparedConversation],
    dev_set: &[PreparedConversation],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.pretrain {
        pretrain_decoder(model, train_set, dev_set, cfg)?;
    }
    train(model, train_set, dev_set, cfg, cfg.epochs)
}

pub fn train_lm(
    lm: &mut LanguageModel,
    train_set: &[PreparedConversation],
    dev_set: &[PreparedConversation],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train(lm, train_set, dev_set, cfg, cfg.epochs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conversation_keeps_order() {
        let p = plan_batches(&["c"], &[3], 4, 9).unwrap();
        let got: Vec<Vec<usize>> = p
            .batches
            .iter()
            .map(|b| b.iter().map(|i| i.sentence).collect())
            .collect();
        assert_eq!(got, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn refill_starts_next_conversation() {
        let p = plan_batches(&["a", "b"], &[1, 2], 1, 0).unwrap();
        assert_eq!(p.num_items(), 3);
        assert!(p.batches.iter().all(|b| b.len() == 1));
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        assert!(plan_batches(&["a"], &[1], 0, 0).is_err());
    }

    #[test]
    fn config_round_trip() {
        let mut c = TrainConfig::default();
        c.mode = ContextMode::Attentional;
        c.bootstrap = Some("base.ckpt".into());
        c.lambda = 0.3;
        let back = TrainConfig::parse(&c.to_text(), Path::new("t")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn config_errors_name_the_line() {
        let e = TrainConfig::parse("epochs = 3\nbogus = 1\n", Path::new("t.cfg")).unwrap_err();
        assert!(e.to_string().contains(":2"), "{e}");
        assert!(TrainConfig::parse("lambda = 1.5\n", Path::new("t")).is_err());
    }

    #[test]
    fn trace_header() {
        assert_eq!(trace_csv(&[]), "epoch,split,loss,ppl\n");
    }
}
