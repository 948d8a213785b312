//! Bias-corrected Adam over a fixed set of flat parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer hyperparameters. The defaults pair the standard moment decays
/// with the 1e-4 initial learning rate used for full-scale training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment accumulators, one pair per registered tensor, plus
/// the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    hyper: AdamHyper,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, tensor_lens: &[usize]) -> Self {
        Self {
            hyper,
            step: 0,
            first: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// Rebuild a state from checkpointed accumulators.
    pub fn restore(
        hyper: AdamHyper,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if first.len() != second.len()
            || first.iter().zip(second.iter()).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::InvalidDimension(
                "optimizer moment accumulators are inconsistent".into(),
            ));
        }
        Ok(Self {
            hyper,
            step,
            first,
            second,
        })
    }

    /// One optimizer step over every registered tensor, in registration
    /// order:
    ///
    /// ```text
    /// m <- b1 m + (1-b1) g        v <- b2 v + (1-b2) g^2
    /// p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    /// ```
    pub fn step(&mut self, tensors: &mut [(&mut [f64], &[f64])]) -> Result<()> {
        if tensors.len() != self.first.len() {
            return Err(Error::InvalidDimension(format!(
                "optimizer registered {} tensors, step received {}",
                self.first.len(),
                tensors.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.hyper.beta1.powi(t);
        let bias2 = 1.0 - self.hyper.beta2.powi(t);
        for (idx, (params, grads)) in tensors.iter_mut().enumerate() {
            if params.len() != self.first[idx].len() || grads.len() != params.len() {
                return Err(Error::InvalidDimension(format!(
                    "tensor {idx}: parameter/gradient/accumulator lengths differ"
                )));
            }
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            for k in 0..params.len() {
                let g = grads[k];
                m[k] = self.hyper.beta1 * m[k] + (1.0 - self.hyper.beta1) * g;
                v[k] = self.hyper.beta2 * v[k] + (1.0 - self.hyper.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                params[k] -= self.hyper.learning_rate * m_hat / (v_hat.sqrt() + self.hyper.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::new(AdamHyper::default(), &[3]);
        let mut p = [1.0, -2.0, 0.5];
        let g = [0.0, 0.0, 0.0];
        state.step(&mut [(&mut p, &g)]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let hyper = AdamHyper {
            learning_rate: 0.01,
            ..AdamHyper::default()
        };
        let mut state = AdamState::new(hyper, &[2]);
        let mut p = [0.3, -0.7];
        let g = [0.25, -4.0];
        state.step(&mut [(&mut p, &g)]).unwrap();
        // After bias correction the first step is lr * g / (|g| + eps).
        for k in 0..2 {
            let want = [0.3, -0.7][k] - 0.01 * g[k] / (g[k].abs() + 1e-8);
            assert!((p[k] - want).abs() < 1e-12, "{k}: {} vs {want}", p[k]);
        }
    }

    #[test]
    fn two_steps_match_hand_computation() {
        let hyper = AdamHyper {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let mut state = AdamState::new(hyper, &[1]);
        let mut p = [1.0];
        let g = [2.0];
        state.step(&mut [(&mut p, &g)]).unwrap();
        state.step(&mut [(&mut p, &g)]).unwrap();

        // Hand computation with explicit accumulators.
        let (b1, b2, lr, eps) = (0.9, 0.999, 0.1, 1e-8);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut want = 1.0;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * 2.0;
            v = b2 * v + (1.0 - b2) * 4.0;
            let m_hat = m / (1.0 - f64::powi(b1, t));
            let v_hat = v / (1.0 - f64::powi(b2, t));
            want -= lr * m_hat / (f64::sqrt(v_hat) + eps);
        }
        assert!((p[0] - want).abs() < 1e-12, "{} vs {want}", p[0]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut state = AdamState::new(AdamHyper::default(), &[2]);
        let mut p = [0.0; 3];
        let g = [0.0; 3];
        assert!(state.step(&mut [(&mut p, &g)]).is_err());
    }
}
