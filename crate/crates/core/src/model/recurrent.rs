//! Two-layer LSTM with a context merge on the top-layer recurrent state.
//!
//! One step is split in two so the attention decoder can attend with the
//! merged state before the LSTMs run:
//!
//! 1. `merge`: `d̂ = tanh(W d_prev + V c + b)`; the `V c` term is absent
//!    without a context vector.
//! 2. `body`: layer 1 consumes `[embed(y_prev); aux]`, layer 2 consumes the
//!    layer-1 output with `d̂` as its recurrent hidden state, and a projection
//!    plus log-softmax gives the next-unit distribution.
//!
//! Both the attention decoder (`aux` = attention summary) and the language
//! model (`aux` empty) are built from this core.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::ops::{axpy, log_softmax, matvec_acc, matvec_t_acc, outer_acc};
use crate::numcore::{Embedding, Grads, Init, Linear, LstmCache, LstmCell, ParamId, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCore {
    pub emb: Embedding,
    pub lstm1: LstmCell,
    pub lstm2: LstmCell,
    pub merge_w: ParamId,
    pub merge_b: ParamId,
    pub merge_v: Option<ParamId>,
    pub out: Linear,
    pub hidden: usize,
    pub aux_dim: usize,
    pub ctx_dim: usize,
    pub vocab: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    /// Top-layer hidden state: the decoder state `d`.
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
}

impl CoreState {
    pub fn zeros(hidden: usize) -> Self {
        CoreState {
            h1: vec![0.0; hidden],
            c1: vec![0.0; hidden],
            h2: vec![0.0; hidden],
            c2: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BodyCache {
    y_prev: usize,
    l1: LstmCache,
    l2: LstmCache,
    h2: Vec<f64>,
    logp: Vec<f64>,
}

impl BodyCache {
    pub fn log_probs(&self) -> &[f64] {
        &self.logp
    }
}

/// Gradients flowing backward into a step from the step after it.
#[derive(Debug, Clone)]
pub struct CoreCarry {
    pub dh1: Vec<f64>,
    pub dc1: Vec<f64>,
    pub dh2: Vec<f64>,
    pub dc2: Vec<f64>,
}

impl CoreCarry {
    pub fn zeros(hidden: usize) -> Self {
        CoreCarry {
            dh1: vec![0.0; hidden],
            dc1: vec![0.0; hidden],
            dh2: vec![0.0; hidden],
            dc2: vec![0.0; hidden],
        }
    }
}

impl RecurrentCore {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        vocab: usize,
        emb_dim: usize,
        aux_dim: usize,
        hidden: usize,
        ctx_dim: Option<usize>,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let emb = Embedding {
            table: ps.add(&format!("{prefix}.emb"), &[vocab, emb_dim], init, rng)?,
            rows: vocab,
            dim: emb_dim,
        };
        let lstm1 = LstmCell::new(ps, &format!("{prefix}.lstm0"), emb_dim + aux_dim, hidden, init, rng)?;
        let lstm2 = LstmCell::new(ps, &format!("{prefix}.lstm1"), hidden, hidden, init, rng)?;
        let merge_w = ps.add(&format!("{prefix}.merge.w"), &[hidden, hidden], init, rng)?;
        let merge_b = ps.add(&format!("{prefix}.merge.b"), &[hidden], init, rng)?;
        let out = Linear {
            w: ps.add(&format!("{prefix}.out.w"), &[vocab, hidden], init, rng)?,
            b: ps.add(&format!("{prefix}.out.b"), &[vocab], init, rng)?,
            input: hidden,
            output: vocab,
        };
        // V starts at zero so an untrained context path leaves the merge unchanged.
        let merge_v = match ctx_dim {
            Some(c) => Some(ps.add(&format!("{prefix}.merge.v"), &[hidden, c], Init::Zeros, rng)?),
            None => None,
        };
        Ok(RecurrentCore {
            emb,
            lstm1,
            lstm2,
            merge_w,
            merge_b,
            merge_v,
            out,
            hidden,
            aux_dim,
            ctx_dim: ctx_dim.unwrap_or(0),
            vocab,
        })
    }

    /// `tanh(W d_prev + V ctx + b)`.
    pub fn merge(&self, ps: &ParamSet, d_prev: &[f64], ctx: Option<&[f64]>) -> Vec<f64> {
        let h = self.hidden;
        let mut pre = vec![0.0; h];
        matvec_acc(ps.v(self.merge_w), h, h, d_prev, &mut pre);
        if let (Some(v), Some(c)) = (self.merge_v, ctx) {
            matvec_acc(ps.v(v), h, self.ctx_dim, c, &mut pre);
        }
        axpy(1.0, ps.v(self.merge_b), &mut pre);
        pre.iter_mut().for_each(|x| *x = x.tanh());
        pre
    }

    /// Returns `(d d_prev, d ctx)` given the gradient on `d̂`.
    pub fn merge_backward(
        &self,
        ps: &ParamSet,
        grads: &mut Grads,
        d_prev: &[f64],
        ctx: Option<&[f64]>,
        dhat: &[f64],
        d_dhat: &[f64],
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let h = self.hidden;
        let dpre: Vec<f64> = dhat.iter().zip(d_dhat).map(|(y, d)| d * (1.0 - y * y)).collect();
        outer_acc(grads.g(self.merge_w), &dpre, d_prev);
        axpy(1.0, &dpre, grads.g(self.merge_b));
        let mut dd = vec![0.0; h];
        matvec_t_acc(ps.v(self.merge_w), h, h, &dpre, &mut dd);
        let dctx = match (self.merge_v, ctx) {
            (Some(v), Some(c)) => {
                outer_acc(grads.g(v), &dpre, c);
                let mut dc = vec![0.0; self.ctx_dim];
                matvec_t_acc(ps.v(v), h, self.ctx_dim, &dpre, &mut dc);
                Some(dc)
            }
            _ => None,
        };
        (dd, dctx)
    }

    pub fn check_unit(&self, y: usize) -> Result<()> {
        if y >= self.vocab {
            return Err(Error::UnitOutOfRange {
                id: y,
                vocab_size: self.vocab,
            });
        }
        Ok(())
    }

    /// LSTMs and output layer. Returns the new state and a cache holding the
    /// log-probabilities.
    pub fn body(
        &self,
        ps: &ParamSet,
        y_prev: usize,
        aux: &[f64],
        state: &CoreState,
        dhat: &[f64],
    ) -> (CoreState, BodyCache) {
        debug_assert_eq!(aux.len(), self.aux_dim);
        let mut x1 = self.emb.row(ps, y_prev).to_vec();
        x1.extend_from_slice(aux);
        let (h1, c1, l1) = self.lstm1.step(ps, &x1, &state.h1, &state.c1);
        let (h2, c2, l2) = self.lstm2.step(ps, &h1, dhat, &state.c2);
        let logits = self.out.forward(ps, &h2);
        let logp = log_softmax(&logits);
        (
            CoreState {
                h1,
                c1,
                h2: h2.clone(),
                c2,
            },
            BodyCache {
                y_prev,
                l1,
                l2,
                h2,
                logp,
            },
        )
    }

    /// Backward through `body` given the gradient on the logits and the
    /// carry from the following step. Updates `carry` in place to the
    /// gradients on the incoming `h1, c1, c2`; `carry.dh2` is consumed and
    /// reset. Returns `(d aux, d d̂)`.
    pub fn body_backward(
        &self,
        ps: &ParamSet,
        grads: &mut Grads,
        cache: &BodyCache,
        dlogits: &[f64],
        carry: &mut CoreCarry,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut dh2 = std::mem::take(&mut carry.dh2);
        self.out.backward(ps, grads, &cache.h2, dlogits, &mut dh2);
        let (dx2, d_dhat, dc2_prev) = self.lstm2.step_backward(ps, grads, &cache.l2, &dh2, &carry.dc2);
        let mut dh1 = std::mem::take(&mut carry.dh1);
        axpy(1.0, &dx2, &mut dh1);
        let (dx1, dh1_prev, dc1_prev) = self.lstm1.step_backward(ps, grads, &cache.l1, &dh1, &carry.dc1);
        let e = self.emb.dim;
        self.emb.backward(grads, cache.y_prev, &dx1[..e]);
        carry.dh1 = dh1_prev;
        carry.dc1 = dc1_prev;
        carry.dc2 = dc2_prev;
        carry.dh2 = vec![0.0; self.hidden];
        (dx1[e..].to_vec(), d_dhat)
    }
}
