use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Hyperparameters shared by every user of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerParams {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerParams {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::adam(learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerParams {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(Error::invalid("adam eps must be positive"));
        }
        Ok(())
    }
}

/// Per-user optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    params: OptimizerParams,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(params: OptimizerParams, n_params: usize) -> Self {
        let moments = match params.kind {
            OptimizerKind::Adam => n_params,
            OptimizerKind::Sgd => 0,
        };
        OptimizerState {
            params,
            moment1: vec![0.0; moments],
            moment2: vec![0.0; moments],
            step_count: 0,
        }
    }

    pub fn params(&self) -> &OptimizerParams {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one descent step to `weights` in place.
    pub fn step(&mut self, weights: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        if weights.len() != grad.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                actual: grad.len(),
                context: "gradient length",
            });
        }
        self.step_count += 1;
        let lr = self.params.learning_rate;
        match self.params.kind {
            OptimizerKind::Sgd => weights.axpy(-lr, grad),
            OptimizerKind::Adam => {
                if self.moment1.len() != weights.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.moment1.len(),
                        actual: weights.len(),
                        context: "adam moment length",
                    });
                }
                let OptimizerParams {
                    beta1, beta2, eps, ..
                } = self.params;
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((w, &g), m), v) in weights
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.as_slice())
                    .zip(self.moment1.iter_mut())
                    .zip(self.moment2.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_minus_lr_times_grad() {
        let mut opt = OptimizerState::new(OptimizerParams::sgd(0.1), 2);
        let mut w = ParamVector::new(vec![1.0, -1.0]);
        opt.step(&mut w, &ParamVector::new(vec![2.0, 4.0])).unwrap();
        assert_eq!(w.as_slice(), &[1.0 - 0.2, -1.0 - 0.4]);
    }

    #[test]
    fn first_adam_step_has_magnitude_lr() {
        let mut opt = OptimizerState::new(OptimizerParams::adam(0.01), 2);
        let mut w = ParamVector::zeros(2);
        opt.step(&mut w, &ParamVector::new(vec![3.0, -0.5])).unwrap();
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-9);
    }
}
