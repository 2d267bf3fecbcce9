use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moments keyed by name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_config(AdamConfig::with_lr(lr))
    }

    pub fn with_config(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advance the step counter; call once per iteration before
    /// [`Adam::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                left: param.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        if let Some(i) = grad.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of `{name}`"),
                index: i,
            });
        }
        assert!(self.step > 0, "begin_step must precede update");
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let n = param.len();
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }

    /// One full step over every named gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.begin_step();
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            self.update(name, p, g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(x: f64, g: f64, lr: f64) -> f64 {
        let mut adam = Adam::new(lr);
        let mut p = Tensor::scalar(x);
        adam.begin_step();
        adam.update("x", &mut p, &Tensor::scalar(g)).unwrap();
        p.item()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        assert_eq!(one_step(1.5, 0.0, 0.1), 1.5);
    }

    #[test]
    fn first_step_is_signed_lr() {
        for g in [3.0, -0.01, 250.0] {
            let moved = one_step(0.0, g, 0.1);
            assert!((moved + 0.1 * g.signum()).abs() < 1e-6, "g={g}: {moved}");
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(0.1);
        let mut x = Tensor::scalar(0.0);
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * (x.item() - 3.0));
            adam.begin_step();
            adam.update("x", &mut x, &g).unwrap();
        }
        assert!((x.item() - 3.0).abs() < 1e-2, "{}", x.item());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut adam = Adam::new(0.1);
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        adam.begin_step();
        let err = adam
            .update("syn.0.mix", &mut p, &Tensor::vector(vec![0.0, f64::NAN]))
            .unwrap_err();
        assert!(err.to_string().contains("syn.0.mix"), "{err}");
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut adam = Adam::new(0.05);
            let mut p = Tensor::vector(vec![0.3, -0.2]);
            for k in 0..10 {
                adam.begin_step();
                let g = Tensor::vector(vec![k as f64 * 0.1 - 0.4, 0.7]);
                adam.update("p", &mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
