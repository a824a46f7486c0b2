use std::collections::BTreeMap;

use super::params::{Gradients, ParamStore};
use super::tensor::Real;
use crate::error::{invalid, Error, Result};

/// Adam optimizer state: first and second moment estimates per parameter.
#[derive(Clone, Debug)]
pub struct Adam<F = f32> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    first: BTreeMap<String, Vec<F>>,
    second: BTreeMap<String, Vec<F>>,
}

impl<F: Real> Default for Adam<F> {
    fn default() -> Self {
        Adam {
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

impl<F: Real> Adam<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one bias-corrected Adam update and increments the store's step count.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>, lr: F) -> Result<()> {
        if lr <= F::zero() {
            return invalid("learning rate must be positive");
        }
        for (name, t) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for {name}")))?;
            if g.shape() != t.shape() {
                return invalid(format!("gradient shape mismatch for {name}"));
            }
        }
        let t = params.bump_step();
        let bc1 = F::one() - self.beta1.powi(t as i32);
        let bc2 = F::one() - self.beta2.powi(t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked above").data();
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![F::zero(); g.len()]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![F::zero(); g.len()]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (F::one() - b1) * gi;
                *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One Adam step with fresh moment state.
pub fn adam_step<F: Real>(
    params: &mut ParamStore<F>,
    grads: &Gradients<F>,
    lr: F,
    state: &mut Adam<F>,
) -> Result<()> {
    state.step(params, grads, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn scalar_store(x: f32) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![x])).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_store(0.3);
        let g = Gradients::zeros_like(&p);
        let mut opt = Adam::new();
        opt.step(&mut p, &g, 1e-3).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[0.3]);
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m̂ = g, v̂ = g², so Δ = -lr·g/(|g|+ε) = -lr·(1/(1+1e-8))
        let lr = 0.01f32;
        let mut p = scalar_store(1.0);
        let mut g = Gradients::zeros_like(&p);
        g.insert("x", Tensor::vector(vec![1.0]));
        Adam::new().step(&mut p, &g, lr).unwrap();
        assert!((p.get("x").unwrap().data()[0] - (1.0 - lr)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = scalar_store(1.0);
        let mut opt = Adam::new();
        let mut steps = 0;
        for _ in 0..500 {
            let x = p.get("x").unwrap().data()[0];
            let mut g = Gradients::zeros_like(&p);
            g.insert("x", Tensor::vector(vec![2.0 * x]));
            opt.step(&mut p, &g, 0.01).unwrap();
            steps += 1;
            if p.get("x").unwrap().data()[0].abs() < 1e-2 {
                break;
            }
        }
        assert!(
            p.get("x").unwrap().data()[0].abs() < 1e-2,
            "not converged after {steps}"
        );
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = scalar_store(1.0);
        let g = Gradients::default();
        assert!(matches!(
            Adam::new().step(&mut p, &g, 1e-3),
            Err(Error::InvalidArgument(_))
        ));
        assert_eq!(p.step_count(), 0);
    }
}
