//! Unit-level recurrent language model with optional conversational context.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::ops::softmax;
use crate::numcore::{checkpoint, Grads, Init, ParamSet};
use crate::tokenizer::SOS_EOS_ID;

use super::context::{ContextEncoder, ContextMode, ContextOutput, WordIndex};
use super::recurrent::{BodyCache, CoreCarry, CoreState, RecurrentCore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub ctx_dim: usize,
    pub conversational: bool,
    pub init_scale: f64,
    #[serde(default)]
    pub context_words: Vec<String>,
}

impl LmConfig {
    pub fn new(vocab_size: usize, conversational: bool) -> Self {
        LmConfig {
            vocab_size,
            emb_dim: 16,
            hidden: 32,
            ctx_dim: 16,
            conversational,
            init_scale: 0.1,
            context_words: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub config: LmConfig,
    pub ps: ParamSet,
    pub core: RecurrentCore,
    pub context: Option<ContextEncoder>,
    pub words: WordIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub core: CoreState,
}

/// Summed cross-entropy of `target + [eos]` given `[sos] + target`, with
/// a fixed auxiliary input at every step. Returns `(nll, steps, d ctx)`.
pub(crate) fn core_sequence_loss(
    core: &RecurrentCore,
    ps: &ParamSet,
    aux: &[f64],
    target: &[usize],
    ctx: Option<&[f64]>,
    grads: Option<&mut Grads>,
) -> Result<(f64, usize, Option<Vec<f64>>)> {
    for &y in target {
        core.check_unit(y)?;
    }
    let outputs: Vec<usize> = target.iter().copied().chain([SOS_EOS_ID]).collect();
    let mut state = CoreState::zeros(core.hidden);
    let mut prev = SOS_EOS_ID;
    let mut nll = 0.0;
    let mut caches: Vec<(Vec<f64>, Vec<f64>, BodyCache)> = Vec::with_capacity(outputs.len());
    for &y in &outputs {
        let dhat = core.merge(ps, &state.h2, ctx);
        let (next, body) = core.body(ps, prev, aux, &state, &dhat);
        nll -= body.log_probs()[y];
        caches.push((state.h2.clone(), dhat, body));
        state = next;
        prev = y;
    }
    let Some(grads) = grads else {
        return Ok((nll, outputs.len(), None));
    };
    let mut carry = CoreCarry::zeros(core.hidden);
    let mut dctx: Option<Vec<f64>> = None;
    for ((d_prev, dhat, body), &y) in caches.iter().zip(&outputs).rev() {
        let mut dlogits = softmax(body.log_probs());
        dlogits[y] -= 1.0;
        let (_, d_dhat) = core.body_backward(ps, grads, body, &dlogits, &mut carry);
        let (dd, dc) = core.merge_backward(ps, grads, d_prev, ctx, dhat, &d_dhat);
        carry.dh2 = dd;
        if let Some(dc) = dc {
            match dctx.as_mut() {
                Some(acc) => acc.iter_mut().zip(&dc).for_each(|(a, b)| *a += b),
                None => dctx = Some(dc),
            }
        }
    }
    Ok((nll, outputs.len(), dctx))
}

impl LanguageModel {
    pub fn new(config: LmConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let init = Init::Uniform(config.init_scale);
        let ctx_dim = config.conversational.then_some(config.ctx_dim);
        let core = RecurrentCore::new(
            &mut ps,
            "lm",
            config.vocab_size,
            config.emb_dim,
            0,
            config.hidden,
            ctx_dim,
            init,
            &mut rng,
        )?;
        let words = WordIndex::new(&config.context_words);
        let context = if config.conversational {
            Some(ContextEncoder::new(
                &mut ps,
                "lm.ctx",
                ContextMode::Mean,
                words.rows(),
                config.ctx_dim,
                0,
                init,
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(LanguageModel {
            config,
            ps,
            core,
            context,
            words,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn is_conversational(&self) -> bool {
        self.context.is_some()
    }

    /// Context vector for the preceding sentence's words; `None` for a
    /// context-free model or an empty preceding sentence.
    pub fn context_for<S: AsRef<str>>(&self, prev_words: Option<&[S]>) -> Option<ContextOutput> {
        let enc = self.context.as_ref()?;
        let ids = self.words.ids(prev_words?);
        enc.forward(&self.ps, &ids)
    }

    pub fn initial_state(&self) -> LmState {
        LmState {
            core: CoreState::zeros(self.core.hidden),
        }
    }

    /// Log-probabilities of the next unit and the advanced state.
    pub fn lm_step(&self, unit_prev: usize, state: &LmState, ctx: Option<&[f64]>) -> Result<(Vec<f64>, LmState)> {
        self.core.check_unit(unit_prev)?;
        let dhat = self.core.merge(&self.ps, &state.core.h2, ctx);
        let (core, body) = self.core.body(&self.ps, unit_prev, &[], &state.core, &dhat);
        Ok((body.log_probs().to_vec(), LmState { core }))
    }

    /// Log-probability of `units` followed by eos.
    pub fn lm_sequence_logprob(&self, units: &[usize], ctx: Option<&[f64]>) -> Result<f64> {
        core_sequence_loss(&self.core, &self.ps, &[], units, ctx, None).map(|(nll, _, _)| -nll)
    }

    /// Summed cross-entropy and step count for one sentence, accumulating
    /// gradients when `grads` is given.
    pub fn sentence_loss<S: AsRef<str>>(
        &self,
        units: &[usize],
        prev_words: Option<&[S]>,
        grads: Option<&mut Grads>,
    ) -> Result<(f64, usize)> {
        let ctx = self.context_for(prev_words);
        let cvec = ctx.as_ref().map(|c| c.vector.as_slice());
        match grads {
            None => core_sequence_loss(&self.core, &self.ps, &[], units, cvec, None).map(|(n, s, _)| (n, s)),
            Some(g) => {
                let (nll, steps, dctx) = core_sequence_loss(&self.core, &self.ps, &[], units, cvec, Some(g))?;
                if let (Some(enc), Some(out), Some(dc)) = (self.context.as_ref(), ctx.as_ref(), dctx) {
                    enc.backward(&self.ps, g, out, &dc, None);
                }
                Ok((nll, steps))
            }
        }
    }

    pub fn meta(&self) -> String {
        serde_json::json!({ "kind": "lm", "config": self.config }).to_string()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.meta(), &self.ps)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::to_bytes(&self.meta(), &self.ps)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, ps) = checkpoint::load(path)?;
        Self::from_parts(&meta, ps, path)
    }

    fn from_parts(meta: &str, ps: ParamSet, origin: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            kind: String,
            config: LmConfig,
        }
        let m: Meta = serde_json::from_str(meta).map_err(|e| Error::parse(origin, 2, e.to_string()))?;
        if m.kind != "lm" {
            return Err(Error::Incompatible(format!(
                "{} holds a `{}` checkpoint, not an LM",
                origin.display(),
                m.kind
            )));
        }
        let mut lm = LanguageModel::new(m.config, 0)?;
        let copied = lm.ps.copy_matching(&ps);
        if copied.len() != lm.ps.len() || ps.len() != lm.ps.len() {
            return Err(Error::Incompatible(format!(
                "{}: parameter set does not match its config",
                origin.display()
            )));
        }
        Ok(lm)
    }
}
