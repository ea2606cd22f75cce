//! LSTM cell and bidirectional layer with explicit backward passes.
//!
//! Gate rows are laid out `[input, forget, cell, output]`, each `hidden` wide.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::ops::{axpy, matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use crate::numcore::tensor::{Grads, Init, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Everything the backward pass of one step needs.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    /// Registers `{prefix}.wx`, `{prefix}.wh`, `{prefix}.b`; forget-gate bias starts at 1.
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let wx = ps.add(&format!("{prefix}.wx"), &[4 * hidden, input], init, rng)?;
        let wh = ps.add(&format!("{prefix}.wh"), &[4 * hidden, hidden], init, rng)?;
        let b = ps.add(&format!("{prefix}.b"), &[4 * hidden], init, rng)?;
        if !matches!(init, Init::Zeros) {
            ps.get_mut(b).values_mut()[hidden..2 * hidden]
                .iter_mut()
                .for_each(|v| *v = 1.0);
        }
        Ok(LstmCell {
            wx,
            wh,
            b,
            input,
            hidden,
        })
    }

    pub fn check(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<()> {
        if x.len() != self.input || h_prev.len() != self.hidden || c_prev.len() != self.hidden {
            return Err(Error::Shape(format!(
                "lstm_step expects x[{}], h[{}], c[{}]; got x[{}], h[{}], c[{}]",
                self.input,
                self.hidden,
                self.hidden,
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        Ok(())
    }

    /// One recurrence step; returns `(h, c, cache)`.
    pub fn step(&self, ps: &ParamSet, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, LstmCache) {
        let h = self.hidden;
        let mut gates = ps.v(self.b).to_vec();
        matvec_acc(ps.v(self.wx), 4 * h, self.input, x, &mut gates);
        matvec_acc(ps.v(self.wh), 4 * h, h, h_prev, &mut gates);
        for v in &mut gates[..2 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut gates[2 * h..3 * h] {
            *v = v.tanh();
        }
        for v in &mut gates[3 * h..] {
            *v = sigmoid(*v);
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut out = vec![0.0; h];
        for j in 0..h {
            c[j] = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
            tanh_c[j] = c[j].tanh();
            out[j] = gates[3 * h + j] * tanh_c[j];
        }
        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
        };
        (out, c, cache)
    }

    /// Backward through one step given gradients on its `h` and `c` outputs.
    /// Returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        ps: &ParamSet,
        grads: &mut Grads,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let (i, f, cc, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = cache.tanh_c[j];
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dct * cc * i * (1.0 - i);
            dz[h + j] = dct * cache.c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dct * i * (1.0 - cc * cc);
            dz[3 * h + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dct * f;
        }
        outer_acc(grads.g(self.wx), &dz, &cache.x);
        outer_acc(grads.g(self.wh), &dz, &cache.h_prev);
        axpy(1.0, &dz, grads.g(self.b));
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(ps.v(self.wx), 4 * h, self.input, &dz, &mut dx);
        let mut dh_prev = vec![0.0; h];
        matvec_t_acc(ps.v(self.wh), 4 * h, h, &dz, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

/// Forward and backward LSTMs over a sequence, outputs concatenated per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BlstmCache {
    fwd: Vec<LstmCache>,
    bwd: Vec<LstmCache>,
}

impl Blstm {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Blstm {
            fwd: LstmCell::new(ps, &format!("{prefix}.fwd"), input, hidden, init, rng)?,
            bwd: LstmCell::new(ps, &format!("{prefix}.bwd"), input, hidden, init, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    /// Runs both directions from zero state; each output frame is `[h_fwd; h_bwd]`.
    pub fn forward(&self, ps: &ParamSet, seq: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BlstmCache)> {
        if seq.is_empty() {
            return Err(Error::Empty("blstm input sequence"));
        }
        if let Some(bad) = seq.iter().find(|x| x.len() != self.fwd.input) {
            return Err(Error::Shape(format!(
                "blstm expects frames of {}, got {}",
                self.fwd.input,
                bad.len()
            )));
        }
        let t_len = seq.len();
        let hf = self.fwd.hidden;
        let hb = self.bwd.hidden;
        let mut out = vec![vec![0.0; hf + hb]; t_len];
        let mut fwd = Vec::with_capacity(t_len);
        let (mut h, mut c) = (vec![0.0; hf], vec![0.0; hf]);
        for (t, x) in seq.iter().enumerate() {
            let (nh, nc, cache) = self.fwd.step(ps, x, &h, &c);
            out[t][..hf].copy_from_slice(&nh);
            fwd.push(cache);
            h = nh;
            c = nc;
        }
        let mut bwd = Vec::with_capacity(t_len);
        let (mut h, mut c) = (vec![0.0; hb], vec![0.0; hb]);
        for t in (0..t_len).rev() {
            let (nh, nc, cache) = self.bwd.step(ps, &seq[t], &h, &c);
            out[t][hf..].copy_from_slice(&nh);
            bwd.push(cache);
            h = nh;
            c = nc;
        }
        bwd.reverse();
        Ok((out, BlstmCache { fwd, bwd }))
    }

    /// Backpropagates output-frame gradients; returns input-frame gradients.
    pub fn backward(&self, ps: &ParamSet, grads: &mut Grads, cache: &BlstmCache, d_out: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let t_len = d_out.len();
        let hf = self.fwd.hidden;
        let hb = self.bwd.hidden;
        let mut dx = vec![vec![0.0; self.fwd.input]; t_len];
        let (mut dh, mut dc) = (vec![0.0; hf], vec![0.0; hf]);
        for t in (0..t_len).rev() {
            let mut dh_t = d_out[t][..hf].to_vec();
            axpy(1.0, &dh, &mut dh_t);
            let (dxt, dhp, dcp) = self.fwd.step_backward(ps, grads, &cache.fwd[t], &dh_t, &dc);
            axpy(1.0, &dxt, &mut dx[t]);
            dh = dhp;
            dc = dcp;
        }
        let (mut dh, mut dc) = (vec![0.0; hb], vec![0.0; hb]);
        for t in 0..t_len {
            let mut dh_t = d_out[t][hf..].to_vec();
            axpy(1.0, &dh, &mut dh_t);
            let (dxt, dhp, dcp) = self.bwd.step_backward(ps, grads, &cache.bwd[t], &dh_t, &dc);
            axpy(1.0, &dxt, &mut dx[t]);
            dh = dhp;
            dc = dcp;
        }
        dx
    }
}
