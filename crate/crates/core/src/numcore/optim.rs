//! AdaDelta and global-norm gradient clipping.
//!
//! Both read the gradients stored on the tensors of a [`ParamSet`].

use crate::error::{Error, Result};
use crate::numcore::tensor::{ParamId, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub rho: f64,
    pub eps: f64,
    /// Running average of squared gradients, per parameter.
    pub sq_grad: Vec<Vec<f64>>,
    /// Running average of squared updates, per parameter.
    pub sq_delta: Vec<Vec<f64>>,
}

impl AdaDeltaState {
    pub fn new(ps: &ParamSet, rho: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = ps.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdaDeltaState {
            rho,
            eps,
            sq_grad: zeros.clone(),
            sq_delta: zeros,
        }
    }

    /// Updates every parameter that carries a gradient.
    pub fn update(&mut self, ps: &mut ParamSet) -> Result<()> {
        let ids: Vec<ParamId> = ps.iter().map(|(id, _, _)| id).collect();
        self.update_only(ps, &ids)
    }

    /// Updates only `ids`; other parameters and their accumulators are untouched.
    pub fn update_only(&mut self, ps: &mut ParamSet, ids: &[ParamId]) -> Result<()> {
        check_finite(ps, ids)?;
        let (rho, eps) = (self.rho, self.eps);
        for &id in ids {
            let t = ps.get_mut(id);
            let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let eg = &mut self.sq_grad[id.0];
            let ed = &mut self.sq_delta[id.0];
            for (i, (x, g)) in t.values_mut().iter_mut().zip(grad).enumerate() {
                eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
                let delta = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g;
                ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
                *x += delta;
            }
        }
        Ok(())
    }
}

fn check_finite(ps: &ParamSet, ids: &[ParamId]) -> Result<()> {
    for &id in ids {
        if let Some(g) = ps.get(id).grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(ps.name(id).to_string()));
            }
        }
    }
    Ok(())
}

pub fn grad_norm(ps: &ParamSet) -> f64 {
    ps.iter()
        .filter_map(|(_, _, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping happened).
pub fn clip_grad_norm(ps: &mut ParamSet, max_norm: f64) -> Result<f64> {
    let ids: Vec<ParamId> = ps.iter().map(|(id, _, _)| id).collect();
    check_finite(ps, &ids)?;
    let norm = grad_norm(ps);
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for (_, t) in ps.iter_mut() {
        if let Some(g) = t.grad_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::tensor::Tensor;

    fn scalar_set(value: f64, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.insert("x", Tensor::from_vec(&[1], vec![value]).unwrap());
        ps.get_mut(id).set_grad(vec![grad]).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_value_and_decays_accumulators() {
        let mut ps = scalar_set(0.7, 0.0);
        let mut st = AdaDeltaState::new(&ps, 0.95, 1e-8);
        st.sq_grad[0][0] = 2.0;
        st.sq_delta[0][0] = 4.0;
        st.update(&mut ps).unwrap();
        assert_eq!(ps.v(ParamId(0)), &[0.7]);
        assert!((st.sq_grad[0][0] - 1.9).abs() < 1e-15);
        assert!((st.sq_delta[0][0] - 3.8).abs() < 1e-15);
    }

    #[test]
    fn first_step_matches_scalar_recurrence() {
        // Independent scalar recurrence: E[g²]=0.05, Δ=-(√ε/√(0.05+ε))·g.
        let (rho, eps, g) = (0.95f64, 1e-8f64, 1.0f64);
        let eg = (1.0 - rho) * g * g;
        let expected = -(eps.sqrt() / (eg + eps).sqrt()) * g;
        let mut ps = scalar_set(0.0, g);
        let mut st = AdaDeltaState::new(&ps, rho, eps);
        st.update(&mut ps).unwrap();
        assert!((ps.v(ParamId(0))[0] - expected).abs() < 1e-18);
        assert!((expected + 4.472_135_5e-4).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = scalar_set(0.0, f64::NAN);
        let mut st = AdaDeltaState::new(&ps, 0.95, 1e-8);
        match st.update(&mut ps) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(clip_grad_norm(&mut ps, 1.0), Err(Error::NonFiniteGradient(_))));
    }

    #[test]
    fn clipping_halves_at_twice_the_norm() {
        let mut ps = ParamSet::new();
        let a = ps.insert("a", Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        let b = ps.insert("b", Tensor::from_vec(&[1], vec![0.0]).unwrap());
        ps.get_mut(a).set_grad(vec![6.0, 0.0]).unwrap();
        ps.get_mut(b).set_grad(vec![8.0]).unwrap();
        let s = clip_grad_norm(&mut ps, 5.0).unwrap();
        assert_eq!(s, 0.5);
        assert_eq!(ps.get(a).grad().unwrap(), &[3.0, 0.0]);
        assert_eq!(ps.get(b).grad().unwrap(), &[4.0]);
    }

    #[test]
    fn clipping_is_identity_below_threshold() {
        let mut ps = scalar_set(0.0, 3.0);
        assert_eq!(clip_grad_norm(&mut ps, 5.0).unwrap(), 1.0);
        assert_eq!(ps.get(ParamId(0)).grad().unwrap(), &[3.0]);
    }
}
