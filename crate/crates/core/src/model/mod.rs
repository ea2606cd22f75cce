//! The recognizer: encoder, CTC head, context-conditioned attention decoder
//! and the joint training objective.

pub mod context;
pub mod decoder;
pub mod encoder;
pub mod lm;
pub mod recurrent;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::ctc_loss;
use crate::error::{Error, Result};
use crate::numcore::ops::log_softmax;
use crate::numcore::{checkpoint, Grads, Init, Linear, ParamId, ParamSet};
use crate::tokenizer::BLANK_ID;

pub use context::{ContextEncoder, ContextMode, ContextOutput, ContextSource, ContextVector, WordIndex};
pub use decoder::{Decoder, DecoderDims, DecoderState, DecoderTrace};
pub use encoder::{stack_frames, Encoder};
pub use lm::{LanguageModel, LmConfig, LmState};
pub use recurrent::{CoreState, RecurrentCore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ContextMode,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub subsample: usize,
    pub enc_layers: usize,
    pub enc_hidden: usize,
    pub enc_dim: usize,
    pub emb_dim: usize,
    pub dec_hidden: usize,
    pub att_dim: usize,
    pub att_channels: usize,
    pub att_width: usize,
    pub ctx_dim: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub init_scale: f64,
    /// Word types with context embeddings; row 0 is reserved for unknown words.
    #[serde(default)]
    pub context_words: Vec<String>,
    /// Training conversation ids, the classes of the conversation-ID head.
    #[serde(default)]
    pub conv_ids: Vec<String>,
}

impl ModelConfig {
    pub fn new(mode: ContextMode, vocab_size: usize, feature_dim: usize) -> Self {
        ModelConfig {
            mode,
            vocab_size,
            feature_dim,
            subsample: 2,
            enc_layers: 2,
            enc_hidden: 32,
            enc_dim: 32,
            emb_dim: 16,
            dec_hidden: 32,
            att_dim: 32,
            att_channels: 4,
            att_width: 7,
            ctx_dim: 16,
            lambda: 0.5,
            gamma: 0.1,
            init_scale: 0.1,
            context_words: Vec::new(),
            conv_ids: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        let dims = [
            self.vocab_size,
            self.feature_dim,
            self.subsample,
            self.enc_layers,
            self.enc_hidden,
            self.enc_dim,
            self.emb_dim,
            self.dec_hidden,
            self.att_dim,
            self.att_channels,
            self.ctx_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.vocab_size <= crate::tokenizer::UNK_ID {
            return Err(Error::Config("vocabulary must contain the special units".into()));
        }
        Ok(())
    }
}

/// One training or evaluation sentence.
#[derive(Debug, Clone, Copy)]
pub struct Utterance<'a> {
    pub features: &'a [Vec<f64>],
    pub target: &'a [usize],
    /// Words of the preceding sentence; `None` for the first sentence.
    pub prev_words: Option<&'a [String]>,
    pub conv_id: Option<&'a str>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ctc: f64,
    pub att: f64,
    pub conv_id: f64,
    pub total: f64,
    /// Predicted units of the attention decoder, eos included.
    pub att_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsrModel {
    pub config: ModelConfig,
    pub ps: ParamSet,
    pub encoder: Encoder,
    pub ctc_head: Linear,
    pub decoder: Decoder,
    pub context: Option<ContextEncoder>,
    pub words: WordIndex,
}

/// Encoder output with everything decoding needs.
#[derive(Debug, Clone)]
pub struct EncodedUtterance {
    pub states: Vec<Vec<f64>>,
    pub ctc_log_post: Vec<Vec<f64>>,
    pub keys: crate::numcore::AttentionKeys,
}

impl AsrModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let init = Init::Uniform(config.init_scale);
        let encoder = Encoder::new(
            &mut ps,
            config.feature_dim,
            config.subsample,
            config.enc_layers,
            config.enc_hidden,
            config.enc_dim,
            init,
            &mut rng,
        )?;
        let ctc_head = Linear {
            w: ps.add("ctc.w", &[config.vocab_size, config.enc_dim], init, &mut rng)?,
            b: ps.add("ctc.b", &[config.vocab_size], init, &mut rng)?,
            input: config.enc_dim,
            output: config.vocab_size,
        };
        let dims = DecoderDims {
            vocab: config.vocab_size,
            emb_dim: config.emb_dim,
            enc_dim: config.enc_dim,
            hidden: config.dec_hidden,
            att_dim: config.att_dim,
            att_channels: config.att_channels,
            att_width: config.att_width,
        };
        let uses_ctx = config.mode.uses_context();
        let decoder = Decoder::new(&mut ps, dims, uses_ctx.then_some(config.ctx_dim), init, &mut rng)?;
        let words = WordIndex::new(&config.context_words);
        let context = if uses_ctx {
            Some(ContextEncoder::new(
                &mut ps,
                "ctx",
                config.mode,
                words.rows(),
                config.ctx_dim,
                config.conv_ids.len(),
                init,
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(AsrModel {
            config,
            ps,
            encoder,
            ctc_head,
            decoder,
            context,
            words,
        })
    }

    pub fn mode(&self) -> ContextMode {
        self.config.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Context for the preceding sentence's words; `None` for a baseline
    /// model or when there is no preceding sentence.
    pub fn context_for<S: AsRef<str>>(&self, prev_words: Option<&[S]>) -> Option<ContextOutput> {
        let enc = self.context.as_ref()?;
        enc.forward(&self.ps, &self.words.ids(prev_words?))
    }

    pub fn encode(&self, features: &[Vec<f64>]) -> Result<EncodedUtterance> {
        let (states, _) = self.encoder.forward(&self.ps, features)?;
        let ctc_log_post = states
            .iter()
            .map(|h| log_softmax(&self.ctc_head.forward(&self.ps, h)))
            .collect();
        let keys = self.decoder.att.keys(&self.ps, &states);
        Ok(EncodedUtterance {
            states,
            ctc_log_post,
            keys,
        })
    }

    fn conv_label(&self, conv_id: Option<&str>) -> Option<usize> {
        let id = conv_id?;
        self.config.conv_ids.binary_search_by(|c| c.as_str().cmp(id)).ok()
    }

    /// Joint objective with the configured λ.
    pub fn loss(&self, utt: &Utterance, grads: Option<&mut Grads>) -> Result<LossBreakdown> {
        self.joint_loss(utt, self.config.lambda, grads)
    }

    /// `λ·CTC + (1−λ)·attention cross-entropy + γ·conversation-ID loss`.
    /// Gradients are accumulated into `grads` when given.
    pub fn joint_loss(&self, utt: &Utterance, lambda: f64, grads: Option<&mut Grads>) -> Result<LossBreakdown> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        let ps = &self.ps;
        let (enc, enc_cache) = self.encoder.forward(ps, utt.features)?;
        let mut out = LossBreakdown::default();

        let ctc = if lambda > 0.0 {
            let logits: Vec<Vec<f64>> = enc.iter().map(|h| self.ctc_head.forward(ps, h)).collect();
            let log_post: Vec<Vec<f64>> = logits.iter().map(|l| log_softmax(l)).collect();
            let r = ctc_loss(&log_post, utt.target, BLANK_ID)?;
            out.ctc = r.nll;
            Some(r)
        } else {
            None
        };

        let ctx = self.context_for(utt.prev_words);
        let cvec = ctx.as_ref().map(|c| c.vector.as_slice());
        let trace = if lambda < 1.0 {
            let keys = self.decoder.att.keys(ps, &enc);
            let t = self.decoder.forward(ps, &enc, &keys, utt.target, cvec)?;
            out.att = t.nll;
            out.att_steps = t.steps;
            Some(t)
        } else {
            None
        };

        let gamma = self.config.gamma;
        let conv = match (self.context.as_ref(), ctx.as_ref(), self.conv_label(utt.conv_id)) {
            (Some(enc_ctx), Some(c), Some(label)) if gamma > 0.0 => enc_ctx.conv_id_loss(c, label),
            _ => None,
        };
        if let Some((l, _)) = &conv {
            out.conv_id = *l;
        }
        out.total = lambda * out.ctc + (1.0 - lambda) * out.att + gamma * out.conv_id;

        let Some(grads) = grads else {
            return Ok(out);
        };
        let mut d_enc = vec![vec![0.0; self.config.enc_dim]; enc.len()];
        if let Some(r) = &ctc {
            for ((h, g), d) in enc.iter().zip(&r.grad_logits).zip(d_enc.iter_mut()) {
                let dy: Vec<f64> = g.iter().map(|v| v * lambda).collect();
                self.ctc_head.backward(ps, grads, h, &dy, d);
            }
        }
        let mut dctx = None;
        if let Some(t) = &trace {
            dctx = self
                .decoder
                .backward(ps, grads, &enc, t, cvec, 1.0 - lambda, &mut d_enc);
        }
        if let (Some(enc_ctx), Some(c)) = (self.context.as_ref(), ctx.as_ref()) {
            let dvec = dctx.unwrap_or_else(|| vec![0.0; self.config.ctx_dim]);
            let dconv = conv.map(|(_, g)| g.iter().map(|v| v * gamma).collect::<Vec<_>>());
            enc_ctx.backward(ps, grads, c, &dvec, dconv.as_deref());
        }
        self.encoder.backward(ps, grads, &enc_cache, &d_enc);
        Ok(out)
    }

    /// Parameters trained by decoder pre-training: unit embedding, both
    /// LSTM layers, the recurrent merge and the output projection.
    pub fn decoder_lm_params(&self) -> Vec<ParamId> {
        let c = &self.decoder.core;
        vec![
            c.emb.table,
            c.lstm1.wx,
            c.lstm1.wh,
            c.lstm1.b,
            c.lstm2.wx,
            c.lstm2.wh,
            c.lstm2.b,
            c.merge_w,
            c.merge_b,
            c.out.w,
            c.out.b,
        ]
    }

    pub fn meta(&self) -> String {
        serde_json::json!({ "kind": "asr", "config": self.config }).to_string()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::to_bytes(&self.meta(), &self.ps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.meta(), &self.ps)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, ps) = checkpoint::load(path)?;
        let m = parse_meta(&meta, path)?;
        if m.kind != "asr" {
            return Err(Error::Incompatible(format!(
                "{} holds a `{}` checkpoint, not a recognizer",
                path.display(),
                m.kind
            )));
        }
        let config: ModelConfig = serde_json::from_value(m.config).map_err(|e| Error::parse(path, 2, e.to_string()))?;
        let mut model = AsrModel::new(config, 0)?;
        let copied = model.ps.copy_matching(&ps);
        if copied.len() != model.ps.len() || ps.len() != model.ps.len() {
            return Err(Error::Incompatible(format!(
                "{}: parameters do not match the recorded configuration",
                path.display()
            )));
        }
        Ok(model)
    }

    /// Checkpoint holding only the pre-trained decoder parameters.
    pub fn decoder_checkpoint_bytes(&self) -> Vec<u8> {
        let mut part = ParamSet::new();
        for id in self.decoder_lm_params() {
            part.insert(self.ps.name(id), self.ps.get(id).clone());
        }
        let meta = serde_json::json!({ "kind": "decoder", "config": self.config }).to_string();
        checkpoint::to_bytes(&meta, &part)
    }

    /// Loads a partial checkpoint; parameters it does not hold keep their values.
    pub fn load_partial(&mut self, path: &Path) -> Result<Vec<String>> {
        let (meta, ps) = checkpoint::load(path)?;
        parse_meta(&meta, path)?;
        let copied = self.ps.copy_matching(&ps);
        if copied.len() != ps.len() {
            return Err(Error::Incompatible(format!(
                "{}: {} of {} parameters have no matching name and shape",
                path.display(),
                ps.len() - copied.len(),
                ps.len()
            )));
        }
        Ok(copied)
    }

    /// New context model whose shared parameters are copied from a baseline.
    /// The context path starts with `V = 0`.
    pub fn bootstrap(
        base: &AsrModel,
        mode: ContextMode,
        context_words: Vec<String>,
        conv_ids: Vec<String>,
        seed: u64,
    ) -> Result<AsrModel> {
        if base.mode().uses_context() {
            return Err(Error::Incompatible("bootstrap expects a baseline checkpoint".into()));
        }
        let mut config = base.config.clone();
        config.mode = mode;
        config.context_words = context_words;
        config.conv_ids = conv_ids;
        let mut model = AsrModel::new(config, seed)?;
        let copied = model.ps.copy_matching(&base.ps);
        if copied.len() != base.ps.len() {
            return Err(Error::Incompatible(
                "baseline parameters do not fit the context model".into(),
            ));
        }
        Ok(model)
    }
}

struct Meta {
    kind: String,
    config: serde_json::Value,
}

fn parse_meta(meta: &str, origin: &Path) -> Result<Meta> {
    let v: serde_json::Value = serde_json::from_str(meta).map_err(|e| Error::parse(origin, 2, e.to_string()))?;
    let kind = v
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| Error::parse(origin, 2, "checkpoint meta lacks `kind`"))?
        .to_string();
    let config = v.get("config").cloned().unwrap_or(serde_json::Value::Null);
    Ok(Meta { kind, config })
}
