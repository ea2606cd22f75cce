//! Attention decoder: context merge, location attention queried with the
//! merged state, then the recurrent core.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::ops::softmax;
use crate::numcore::{AttentionCache, AttentionEncGrads, AttentionKeys, Grads, Init, LocationAttention, ParamSet};
use crate::tokenizer::SOS_EOS_ID;

use super::recurrent::{BodyCache, CoreCarry, CoreState, RecurrentCore};

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub core: RecurrentCore,
    pub att: LocationAttention,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub core: CoreState,
    pub align: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepCache {
    d_prev: Vec<f64>,
    dhat: Vec<f64>,
    att: AttentionCache,
    body: BodyCache,
}

/// Teacher-forced pass over one target sequence.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    /// Summed cross-entropy over `target + [eos]`.
    pub nll: f64,
    pub steps: usize,
    caches: Vec<StepCache>,
    outputs: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderDims {
    pub vocab: usize,
    pub emb_dim: usize,
    pub enc_dim: usize,
    pub hidden: usize,
    pub att_dim: usize,
    pub att_channels: usize,
    pub att_width: usize,
}

impl Decoder {
    pub fn new(
        ps: &mut ParamSet,
        dims: DecoderDims,
        ctx_dim: Option<usize>,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let core = RecurrentCore::new(
            ps,
            "dec",
            dims.vocab,
            dims.emb_dim,
            dims.enc_dim,
            dims.hidden,
            ctx_dim,
            init,
            rng,
        )?;
        let att = LocationAttention::new(
            ps,
            "dec.att",
            dims.enc_dim,
            dims.hidden,
            dims.att_dim,
            dims.att_channels,
            dims.att_width,
            init,
            rng,
        )?;
        Ok(Decoder { core, att })
    }

    pub fn initial_state(&self, frames: usize) -> DecoderState {
        DecoderState {
            core: CoreState::zeros(self.core.hidden),
            align: vec![1.0 / frames as f64; frames],
        }
    }

    /// Single step without caching; returns the log-probabilities and next state.
    pub fn step(
        &self,
        ps: &ParamSet,
        enc: &[Vec<f64>],
        keys: &AttentionKeys,
        y_prev: usize,
        state: &DecoderState,
        ctx: Option<&[f64]>,
    ) -> (Vec<f64>, DecoderState) {
        let (next, cache) = self.step_cached(ps, enc, keys, y_prev, state, ctx);
        (cache.body.log_probs().to_vec(), next)
    }

    fn step_cached(
        &self,
        ps: &ParamSet,
        enc: &[Vec<f64>],
        keys: &AttentionKeys,
        y_prev: usize,
        state: &DecoderState,
        ctx: Option<&[f64]>,
    ) -> (DecoderState, StepCache) {
        let dhat = self.core.merge(ps, &state.core.h2, ctx);
        let (g, align, att) = self.att.step(ps, &dhat, enc, keys, &state.align);
        let (core, body) = self.core.body(ps, y_prev, &g, &state.core, &dhat);
        (
            DecoderState { core, align },
            StepCache {
                d_prev: state.core.h2.clone(),
                dhat,
                att,
                body,
            },
        )
    }

    /// Checked single step: the public decoder-step entry point.
    pub fn decoder_step(
        &self,
        ps: &ParamSet,
        enc: &[Vec<f64>],
        y_prev: usize,
        state: &DecoderState,
        ctx: Option<&[f64]>,
    ) -> Result<(Vec<f64>, DecoderState)> {
        self.core.check_unit(y_prev)?;
        if state.core.h2.len() != self.core.hidden || state.core.c2.len() != self.core.hidden {
            return Err(Error::Shape(format!(
                "decoder state must have {} dims",
                self.core.hidden
            )));
        }
        if let Some(c) = ctx {
            if c.len() != self.core.ctx_dim || self.core.merge_v.is_none() {
                return Err(Error::Shape(format!(
                    "context vector has {} dims, decoder expects {}",
                    c.len(),
                    self.core.ctx_dim
                )));
            }
        }
        self.att.attend(ps, &state.core.h2, enc, &state.align)?;
        let keys = self.att.keys(ps, enc);
        Ok(self.step(ps, enc, &keys, y_prev, state, ctx))
    }

    /// Teacher forcing over `[sos] + target` predicting `target + [eos]`.
    pub fn forward(
        &self,
        ps: &ParamSet,
        enc: &[Vec<f64>],
        keys: &AttentionKeys,
        target: &[usize],
        ctx: Option<&[f64]>,
    ) -> Result<DecoderTrace> {
        for &y in target {
            self.core.check_unit(y)?;
        }
        let mut state = self.initial_state(enc.len());
        let mut prev = SOS_EOS_ID;
        let mut nll = 0.0;
        let mut caches = Vec::with_capacity(target.len() + 1);
        let outputs: Vec<usize> = target.iter().copied().chain([SOS_EOS_ID]).collect();
        for &y in &outputs {
            let (next, cache) = self.step_cached(ps, enc, keys, prev, &state, ctx);
            nll -= cache.body.log_probs()[y];
            caches.push(cache);
            state = next;
            prev = y;
        }
        Ok(DecoderTrace {
            nll,
            steps: outputs.len(),
            caches,
            outputs,
        })
    }

    /// Backward of `scale * trace.nll`. Accumulates encoder-state gradients
    /// into `d_enc` and returns the gradient on the context vector.
    pub fn backward(
        &self,
        ps: &ParamSet,
        grads: &mut Grads,
        enc: &[Vec<f64>],
        trace: &DecoderTrace,
        ctx: Option<&[f64]>,
        scale: f64,
        d_enc: &mut [Vec<f64>],
    ) -> Option<Vec<f64>> {
        let h = self.core.hidden;
        let mut carry = CoreCarry::zeros(h);
        let mut dalign = vec![0.0; enc.len()];
        let mut sink = AttentionEncGrads::zeros(enc.len(), self.att.enc_dim, self.att.att_dim);
        let mut dctx: Option<Vec<f64>> = None;
        for (cache, &y) in trace.caches.iter().zip(&trace.outputs).rev() {
            let mut dlogits = softmax(cache.body.log_probs());
            dlogits[y] -= 1.0;
            dlogits.iter_mut().for_each(|v| *v *= scale);
            let (daux, mut d_dhat) = self.core.body_backward(ps, grads, &cache.body, &dlogits, &mut carry);
            let (dquery, dprev) = self
                .att
                .step_backward(ps, grads, &cache.att, enc, &daux, &dalign, &mut sink);
            d_dhat.iter_mut().zip(&dquery).for_each(|(a, b)| *a += b);
            let (dd_prev, dc) = self
                .core
                .merge_backward(ps, grads, &cache.d_prev, ctx, &cache.dhat, &d_dhat);
            carry.dh2 = dd_prev;
            dalign = dprev;
            if let Some(dc) = dc {
                match dctx.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&dc).for_each(|(a, b)| *a += b),
                    None => dctx = Some(dc),
                }
            }
        }
        self.att.keys_backward(ps, grads, enc, &mut sink);
        for (d, s) in d_enc.iter_mut().zip(&sink.d_enc) {
            d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        dctx
    }

    /// Decoder as a unit-level language model: the attention summary is
    /// replaced by zeros. Returns the summed cross-entropy and, when `grads`
    /// is given, accumulates its gradient.
    pub fn lm_loss(&self, ps: &ParamSet, target: &[usize], grads: Option<&mut Grads>) -> Result<(f64, usize)> {
        let zero_aux = vec![0.0; self.core.aux_dim];
        super::lm::core_sequence_loss(&self.core, ps, &zero_aux, target, None, grads)
            .map(|(nll, steps, _)| (nll, steps))
    }
}
