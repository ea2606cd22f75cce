//! Location-aware content attention.
//!
//! Frame scores are `vᵀ tanh(W_enc h_t + W_dec q + W_loc f_t + b)` where `f_t`
//! is a bank of centered 1-D convolutions over the previous alignment.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::ops::{axpy, dot, matvec, matvec_acc, matvec_t_acc, outer_acc, softmax, softmax_backward};
use crate::numcore::tensor::{Grads, Init, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocationAttention {
    pub w_enc: ParamId,
    pub w_dec: ParamId,
    pub w_loc: ParamId,
    pub filters: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
    pub enc_dim: usize,
    pub query_dim: usize,
    pub att_dim: usize,
    pub channels: usize,
    pub width: usize,
}

/// Encoder-side projections `W_enc h_t`, computed once per utterance.
#[derive(Debug, Clone)]
pub struct AttentionKeys {
    pub keys: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    query: Vec<f64>,
    prev: Vec<f64>,
    conv: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    align: Vec<f64>,
}

/// Gradient sinks for the encoder side, shared across decoder steps.
#[derive(Debug, Clone)]
pub struct AttentionEncGrads {
    pub d_keys: Vec<Vec<f64>>,
    pub d_enc: Vec<Vec<f64>>,
}

impl AttentionEncGrads {
    pub fn zeros(frames: usize, enc_dim: usize, att_dim: usize) -> Self {
        AttentionEncGrads {
            d_keys: vec![vec![0.0; att_dim]; frames],
            d_enc: vec![vec![0.0; enc_dim]; frames],
        }
    }
}

impl LocationAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        enc_dim: usize,
        query_dim: usize,
        att_dim: usize,
        channels: usize,
        width: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::Config(format!(
                "attention filter width must be odd, got {width}"
            )));
        }
        Ok(LocationAttention {
            w_enc: ps.add(&format!("{prefix}.w_enc"), &[att_dim, enc_dim], init, rng)?,
            w_dec: ps.add(&format!("{prefix}.w_dec"), &[att_dim, query_dim], init, rng)?,
            w_loc: ps.add(&format!("{prefix}.w_loc"), &[att_dim, channels], init, rng)?,
            filters: ps.add(&format!("{prefix}.filters"), &[channels, width], init, rng)?,
            bias: ps.add(&format!("{prefix}.b"), &[att_dim], init, rng)?,
            v: ps.add(&format!("{prefix}.v"), &[att_dim], init, rng)?,
            enc_dim,
            query_dim,
            att_dim,
            channels,
            width,
        })
    }

    pub fn keys(&self, ps: &ParamSet, enc: &[Vec<f64>]) -> AttentionKeys {
        let keys = enc
            .iter()
            .map(|h| {
                let mut k = vec![0.0; self.att_dim];
                matvec(ps.v(self.w_enc), self.att_dim, self.enc_dim, h, &mut k);
                k
            })
            .collect();
        AttentionKeys { keys }
    }

    /// Backpropagates accumulated key gradients into `W_enc` and the encoder states.
    pub fn keys_backward(&self, ps: &ParamSet, grads: &mut Grads, enc: &[Vec<f64>], sink: &mut AttentionEncGrads) {
        for (t, h) in enc.iter().enumerate() {
            outer_acc(grads.g(self.w_enc), &sink.d_keys[t], h);
            matvec_t_acc(
                ps.v(self.w_enc),
                self.att_dim,
                self.enc_dim,
                &sink.d_keys[t],
                &mut sink.d_enc[t],
            );
        }
    }

    /// Shape-checked single step; see [`LocationAttention::step`].
    pub fn attend(&self, ps: &ParamSet, query: &[f64], enc: &[Vec<f64>], prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if enc.is_empty() {
            return Err(Error::Empty("attention over zero encoder frames"));
        }
        if prev.len() != enc.len() {
            return Err(Error::Shape(format!(
                "previous alignment has {} entries for {} encoder frames",
                prev.len(),
                enc.len()
            )));
        }
        if query.len() != self.query_dim || enc.iter().any(|h| h.len() != self.enc_dim) {
            return Err(Error::Shape("attention query or encoder dimension".into()));
        }
        let keys = self.keys(ps, enc);
        let (g, a, _) = self.step(ps, query, enc, &keys, prev);
        Ok((g, a))
    }

    /// Returns `(context summary, alignment, cache)`.
    pub fn step(
        &self,
        ps: &ParamSet,
        query: &[f64],
        enc: &[Vec<f64>],
        keys: &AttentionKeys,
        prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>, AttentionCache) {
        let t_len = enc.len();
        let a = self.att_dim;
        let mut qproj = ps.v(self.bias).to_vec();
        matvec_acc(ps.v(self.w_dec), a, self.query_dim, query, &mut qproj);
        let conv = self.convolve(ps, prev);
        let v = ps.v(self.v);
        let mut act = Vec::with_capacity(t_len);
        let mut scores = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut pre = keys.keys[t].clone();
            axpy(1.0, &qproj, &mut pre);
            matvec_acc(ps.v(self.w_loc), a, self.channels, &conv[t], &mut pre);
            pre.iter_mut().for_each(|x| *x = x.tanh());
            scores.push(dot(v, &pre));
            act.push(pre);
        }
        let align = softmax(&scores);
        let mut g = vec![0.0; self.enc_dim];
        for (t, h) in enc.iter().enumerate() {
            axpy(align[t], h, &mut g);
        }
        let cache = AttentionCache {
            query: query.to_vec(),
            prev: prev.to_vec(),
            conv,
            act,
            align: align.clone(),
        };
        (g, align, cache)
    }

    fn convolve(&self, ps: &ParamSet, prev: &[f64]) -> Vec<Vec<f64>> {
        let t_len = prev.len() as isize;
        let half = (self.width / 2) as isize;
        let filt = ps.v(self.filters);
        (0..t_len)
            .map(|t| {
                (0..self.channels)
                    .map(|k| {
                        let row = &filt[k * self.width..(k + 1) * self.width];
                        let mut s = 0.0;
                        for (j, w) in row.iter().enumerate() {
                            let src = t + j as isize - half;
                            if (0..t_len).contains(&src) {
                                s += w * prev[src as usize];
                            }
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    /// Backward of one step. `dg` is the gradient on the context summary and
    /// `dalign` the gradient arriving on the emitted alignment.
    /// Returns `(d_query, d_prev_alignment)`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward(
        &self,
        ps: &ParamSet,
        grads: &mut Grads,
        cache: &AttentionCache,
        enc: &[Vec<f64>],
        dg: &[f64],
        dalign: &[f64],
        sink: &mut AttentionEncGrads,
    ) -> (Vec<f64>, Vec<f64>) {
        let t_len = enc.len();
        let a = self.att_dim;
        let mut dalpha = dalign.to_vec();
        for (t, h) in enc.iter().enumerate() {
            dalpha[t] += dot(dg, h);
            axpy(cache.align[t], dg, &mut sink.d_enc[t]);
        }
        let de = softmax_backward(&cache.align, &dalpha);
        let v = ps.v(self.v);
        let mut dq_pre = vec![0.0; a];
        let mut dconv = vec![vec![0.0; self.channels]; t_len];
        for t in 0..t_len {
            let s = &cache.act[t];
            axpy(de[t], s, grads.g(self.v));
            let dpre: Vec<f64> = s.iter().zip(v).map(|(si, vi)| de[t] * vi * (1.0 - si * si)).collect();
            axpy(1.0, &dpre, &mut sink.d_keys[t]);
            axpy(1.0, &dpre, &mut dq_pre);
            outer_acc(grads.g(self.w_loc), &dpre, &cache.conv[t]);
            matvec_t_acc(ps.v(self.w_loc), a, self.channels, &dpre, &mut dconv[t]);
        }
        axpy(1.0, &dq_pre, grads.g(self.bias));
        outer_acc(grads.g(self.w_dec), &dq_pre, &cache.query);
        let mut dquery = vec![0.0; self.query_dim];
        matvec_t_acc(ps.v(self.w_dec), a, self.query_dim, &dq_pre, &mut dquery);

        let half = (self.width / 2) as isize;
        let tl = t_len as isize;
        let filt = ps.v(self.filters);
        let mut dprev = vec![0.0; t_len];
        let dfilt = grads.g(self.filters);
        for t in 0..tl {
            for k in 0..self.channels {
                let d = dconv[t as usize][k];
                if d == 0.0 {
                    continue;
                }
                for j in 0..self.width {
                    let src = t + j as isize - half;
                    if (0..tl).contains(&src) {
                        dfilt[k * self.width + j] += d * cache.prev[src as usize];
                        dprev[src as usize] += d * filt[k * self.width + j];
                    }
                }
            }
        }
        (dquery, dprev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn setup(init: Init) -> (ParamSet, LocationAttention) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::new();
        let att = LocationAttention::new(&mut ps, "att", 3, 2, 4, 2, 3, init, &mut rng).unwrap();
        (ps, att)
    }

    #[test]
    fn single_frame_alignment_is_one() {
        let (ps, att) = setup(Init::Uniform(0.5));
        let (g, a) = att.attend(&ps, &[0.3, -0.2], &[vec![1.0, 2.0, 3.0]], &[1.0]).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(g, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_scorer_gives_uniform_alignment() {
        let (ps, att) = setup(Init::Zeros);
        let enc = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0; 3],
        ];
        let (_, a) = att.attend(&ps, &[0.5, 0.5], &enc, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        for v in a {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let (ps, att) = setup(Init::Uniform(0.5));
        let enc = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert!(matches!(
            att.attend(&ps, &[0.0, 0.0], &enc, &[1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn even_filter_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        assert!(LocationAttention::new(&mut ps, "a", 2, 2, 2, 1, 4, Init::Zeros, &mut rng).is_err());
    }
}
