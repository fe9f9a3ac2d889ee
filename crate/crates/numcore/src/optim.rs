use std::collections::BTreeMap;

use crate::error::{NumError, Result};
use crate::tensor::{Gradients, ParamSet};

/// Adam with bias correction. Moment buffers are created lazily per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.m.get(name)?.as_slice(), self.v.get(name)?.as_slice()))
    }

    /// Applies one update to every parameter that has a gradient entry.
    /// Validation happens before any value is touched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| NumError::UnknownParam(name.clone()))?;
            if p.len() != g.len() {
                return Err(NumError::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    actual: vec![g.len()],
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumError::NonFinite {
                    context: format!("gradient of `{name}`"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).unwrap();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let mut values = p.to_f64();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.assign_f64(&values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_params(v: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = scalar_params(0.25);
        let mut opt = Adam::new(0.1);
        let g = Gradients::zeros_like(&p);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[0.25]);
        assert_eq!(opt.moments("x").unwrap(), (&[0.0][..], &[0.0][..]));
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_params(1.0);
        let mut g = Gradients::zeros_like(&p);
        g.get_mut("x").unwrap()[0] = 1.0;
        let mut opt = Adam::new(0.1);
        opt.step(&mut p, &g).unwrap();
        assert!((p.get("x").unwrap().data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn replay_is_deterministic() {
        let mut g = Gradients::zeros_like(&scalar_params(0.0));
        g.get_mut("x").unwrap()[0] = 0.3;
        let run = || {
            let mut p = scalar_params(0.5);
            let mut opt = Adam::new(0.01);
            opt.step(&mut p, &g).unwrap();
            opt.step(&mut p, &g).unwrap();
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_nan_and_shape() {
        let mut p = scalar_params(0.0);
        let mut opt = Adam::new(0.1);
        let mut g = Gradients::default();
        g.insert("x", vec![f64::NAN]);
        assert!(opt.step(&mut p, &g).is_err());
        let mut g = Gradients::default();
        g.insert("x", vec![1.0, 2.0]);
        assert!(opt.step(&mut p, &g).is_err());
        assert_eq!(opt.steps(), 0);
    }
}
