//! Dense kernels and the stateless layers built on them.
//!
//! Matrices are row-major `rows × cols` slices. Backward functions accumulate
//! into their gradient arguments.

use crate::error::{Error, Result};
use crate::numcore::tensor::{Grads, ParamId, ParamSet, Tensor};

/// `out = W x`.
#[inline]
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += W x`.
#[inline]
pub fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o += dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `dx += Wᵀ dy`.
#[inline]
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (r, &d) in dy.iter().enumerate().take(rows) {
        if d != 0.0 {
            axpy(d, &w[r * cols..(r + 1) * cols], dx);
        }
    }
}

/// `dW += dy xᵀ`.
#[inline]
pub fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &d) in dy.iter().enumerate() {
        if d != 0.0 {
            axpy(d, x, &mut dw[r * cols..(r + 1) * cols]);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

/// Given upstream gradient `dy` on `y = softmax(x)`, returns `dx`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let s = dot(y, dy);
    y.iter().zip(dy).map(|(yi, di)| yi * (di - s)).collect()
}

/// Given upstream gradient `dy` on `y = log_softmax(x)`, returns `dx`.
pub fn log_softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let s: f64 = dy.iter().sum();
    y.iter().zip(dy).map(|(yi, di)| di - yi.exp() * s).collect()
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Given `y = tanh(x)` and `dy`, returns `dx`.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(yi, di)| di * (1.0 - yi * yi)).collect()
}

/// Negative log-likelihood of `target` under `softmax(logits)` and its
/// gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Shape(format!("target {target} outside {} logits", logits.len())));
    }
    let lp = log_softmax(logits);
    let mut grad: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    grad[target] -= 1.0;
    Ok((-lp[target], grad))
}

/// `y = W x + b` on plain tensors, `W` shaped `[out, in]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [rows, cols] = matrix_shape(w)?;
    if x.len() != cols || b.len() != rows {
        return Err(Error::Shape(format!(
            "linear: W {:?}, x {:?}, b {:?}",
            w.shape(),
            x.shape(),
            b.shape()
        )));
    }
    let mut y = b.values().to_vec();
    matvec_acc(w.values(), rows, cols, x.values(), &mut y);
    Tensor::from_vec(&[rows], y)
}

/// Gradients of [`linear`]: returns `(dx, dW, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [rows, cols] = matrix_shape(w)?;
    if x.len() != cols || dy.len() != rows {
        return Err(Error::Shape(format!(
            "linear_backward: W {:?}, x {:?}, dy {:?}",
            w.shape(),
            x.shape(),
            dy.shape()
        )));
    }
    let mut dx = vec![0.0; cols];
    matvec_t_acc(w.values(), rows, cols, dy.values(), &mut dx);
    let mut dw = vec![0.0; rows * cols];
    outer_acc(&mut dw, dy.values(), x.values());
    Ok((
        Tensor::from_vec(&[cols], dx)?,
        Tensor::from_vec(&[rows, cols], dw)?,
        Tensor::from_vec(&[rows], dy.values().to_vec())?,
    ))
}

/// Row `id` of an embedding table shaped `[rows, dim]`.
pub fn embed(table: &Tensor, id: usize) -> Result<Tensor> {
    let [rows, dim] = matrix_shape(table)?;
    if id >= rows {
        return Err(Error::UnitOutOfRange { id, vocab_size: rows });
    }
    Tensor::from_vec(&[dim], table.values()[id * dim..(id + 1) * dim].to_vec())
}

/// Accumulates `dy` into row `id` of a table gradient.
pub fn embed_backward(table_grad: &mut Tensor, id: usize, dy: &Tensor) -> Result<()> {
    let [rows, dim] = matrix_shape(table_grad)?;
    if id >= rows || dy.len() != dim {
        return Err(Error::Shape(format!(
            "embed_backward: row {id} of {:?} with dy {:?}",
            table_grad.shape(),
            dy.shape()
        )));
    }
    let n = table_grad.len();
    if table_grad.grad().is_none() {
        table_grad.set_grad(vec![0.0; n])?;
    }
    let g = table_grad.grad_mut().expect("gradient allocated above");
    axpy(1.0, dy.values(), &mut g[id * dim..(id + 1) * dim]);
    Ok(())
}

fn matrix_shape(t: &Tensor) -> Result<[usize; 2]> {
    match t.shape() {
        [r, c] => Ok([*r, *c]),
        s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
    }
}

/// Affine layer whose weights live in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn forward(&self, ps: &ParamSet, x: &[f64]) -> Vec<f64> {
        let mut y = ps.v(self.b).to_vec();
        matvec_acc(ps.v(self.w), self.output, self.input, x, &mut y);
        y
    }

    /// Accumulates parameter gradients and `Wᵀ dy` into `dx`.
    pub fn backward(&self, ps: &ParamSet, grads: &mut Grads, x: &[f64], dy: &[f64], dx: &mut [f64]) {
        outer_acc(grads.g(self.w), dy, x);
        axpy(1.0, dy, grads.g(self.b));
        matvec_t_acc(ps.v(self.w), self.output, self.input, dy, dx);
    }

    /// Parameter gradients only.
    pub fn backward_params(&self, grads: &mut Grads, x: &[f64], dy: &[f64]) {
        outer_acc(grads.g(self.w), dy, x);
        axpy(1.0, dy, grads.g(self.b));
    }
}

/// Lookup table of `rows × dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn row<'a>(&self, ps: &'a ParamSet, id: usize) -> &'a [f64] {
        &ps.v(self.table)[id * self.dim..(id + 1) * self.dim]
    }

    pub fn backward(&self, grads: &mut Grads, id: usize, dy: &[f64]) {
        axpy(1.0, dy, &mut grads.g(self.table)[id * self.dim..(id + 1) * self.dim]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear_is_identity() {
        let x = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(&[3]);
        assert_eq!(linear(&x, &w, &b).unwrap().values(), x.values());
    }

    #[test]
    fn linear_rejects_mismatched_shapes() {
        let x = Tensor::zeros(&[2]);
        let w = Tensor::zeros(&[3, 3]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(linear(&x, &w, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_softmax() {
        for n in 1..8 {
            let p = softmax(&vec![0.3; n]);
            for v in p {
                assert!((v - 1.0 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_on_extreme_logits() {
        let p = softmax(&[1000.0, -1000.0, 3.0, 999.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert_eq!(log_add_exp(-2.0, f64::NEG_INFINITY), -2.0);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn embed_out_of_range() {
        let t = Tensor::zeros(&[4, 2]);
        assert!(matches!(embed(&t, 4), Err(Error::UnitOutOfRange { .. })));
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let logits = vec![0.2, -1.3, 0.7, 2.1, -0.4];
        let (_, grad) = cross_entropy(&logits, 3).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p[i] += h;
            let mut m = logits.clone();
            m[i] -= h;
            let fd = (cross_entropy(&p, 3).unwrap().0 - cross_entropy(&m, 3).unwrap().0) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-12);
            assert!(rel < 1e-6, "logit {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn linear_backward_matches_definition() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dy = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let (dx, dw, db) = linear_backward(&x, &w, &dy).unwrap();
        assert_eq!(dx.values(), &[-2.0, -2.0]);
        assert_eq!(dw.values(), &[1.0, 2.0, -1.0, -2.0]);
        assert_eq!(db.values(), &[1.0, -1.0]);
    }
}
