//! Frame-stacking subsampler, BLSTM stack and output projection.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{Blstm, BlstmCache, Grads, Init, Linear, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub subsample: usize,
    pub feature_dim: usize,
    pub layers: Vec<Blstm>,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    layers: Vec<BlstmCache>,
    top: Vec<Vec<f64>>,
}

/// Concatenates `factor` consecutive frames; the last group is zero padded.
pub fn stack_frames(features: &[Vec<f64>], factor: usize, dim: usize) -> Vec<Vec<f64>> {
    features
        .chunks(factor)
        .map(|group| {
            let mut v = vec![0.0; factor * dim];
            for (i, f) in group.iter().enumerate() {
                v[i * dim..(i + 1) * dim].copy_from_slice(f);
            }
            v
        })
        .collect()
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        feature_dim: usize,
        subsample: usize,
        layers: usize,
        hidden: usize,
        out_dim: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut stack = Vec::with_capacity(layers);
        let mut input = feature_dim * subsample;
        for l in 0..layers {
            stack.push(Blstm::new(ps, &format!("enc.blstm{l}"), input, hidden, init, rng)?);
            input = 2 * hidden;
        }
        let proj = Linear {
            w: ps.add("enc.proj.w", &[out_dim, input], init, rng)?,
            b: ps.add("enc.proj.b", &[out_dim], init, rng)?,
            input,
            output: out_dim,
        };
        Ok(Encoder {
            subsample,
            feature_dim,
            layers: stack,
            proj,
        })
    }

    pub fn output_frames(&self, input_frames: usize) -> usize {
        input_frames.div_ceil(self.subsample)
    }

    pub fn forward(&self, ps: &ParamSet, features: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, EncoderCache)> {
        if features.is_empty() {
            return Err(Error::Empty("encoder input has no frames"));
        }
        if let Some(f) = features.iter().find(|f| f.len() != self.feature_dim) {
            return Err(Error::Shape(format!(
                "feature frames must have {} dims, got {}",
                self.feature_dim,
                f.len()
            )));
        }
        let mut x = stack_frames(features, self.subsample, self.feature_dim);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(ps, &x)?;
            caches.push(cache);
            x = y;
        }
        let out = x.iter().map(|h| self.proj.forward(ps, h)).collect();
        Ok((out, EncoderCache { layers: caches, top: x }))
    }

    pub fn backward(&self, ps: &ParamSet, grads: &mut Grads, cache: &EncoderCache, d_out: &[Vec<f64>]) {
        let mut d: Vec<Vec<f64>> = cache
            .top
            .iter()
            .zip(d_out)
            .map(|(h, dy)| {
                let mut dx = vec![0.0; self.proj.input];
                self.proj.backward(ps, grads, h, dy, &mut dx);
                dx
            })
            .collect();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            d = layer.backward(ps, grads, lc, &d);
        }
    }
}
