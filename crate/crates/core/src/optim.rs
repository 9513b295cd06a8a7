//! AdamW with decoupled weight decay, and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub steps: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &dyn Params) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamW {
            config,
            steps: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update at learning rate `lr`. Weight decay applies only to
    /// tensors flagged in the parameter set's decay mask.
    pub fn step(&mut self, params: &mut dyn Params, grads: &dyn Params, lr: f64) -> Result<()> {
        let mask = params.decay_mask();
        let grads = grads.tensors();
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() || tensors.len() != self.first_moment.len() {
            return Err(Error::Dimension {
                expected: self.first_moment.len(),
                got: grads.len(),
            });
        }
        self.steps += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bias2 = 1.0 - c.beta2.powi(self.steps as i32);
        for (t, p) in tensors.iter_mut().enumerate() {
            let g = grads[t];
            let m = &mut self.first_moment[t];
            let v = &mut self.second_moment[t];
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Dimension {
                    expected: m.len(),
                    got: g.len(),
                });
            }
            let decay = if mask[t] { 1.0 - lr * c.weight_decay } else { 1.0 };
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &dyn Params) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut dyn Params, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Linear;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Linear {
            weight: array![[1.0, -2.0]],
            bias: array![0.5],
        };
        let g = Linear {
            weight: array![[0.3, -4.0]],
            bias: array![0.0],
        };
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &p,
        );
        opt.step(&mut p, &g, 0.1).unwrap();
        assert!((p.weight[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p.weight[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(p.bias[0], 0.5);
    }

    #[test]
    fn weight_decay_skips_biases() {
        let mut p = Linear {
            weight: array![[2.0]],
            bias: array![2.0],
        };
        let g = Linear {
            weight: array![[0.0]],
            bias: array![0.0],
        };
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        opt.step(&mut p, &g, 0.5).unwrap();
        assert!((p.weight[[0, 0]] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-15);
        assert_eq!(p.bias[0], 2.0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = Linear {
            weight: array![[3.0, 4.0]],
            bias: array![0.0],
        };
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-6);
        let mut small = Linear {
            weight: array![[0.3]],
            bias: array![0.4],
        };
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.weight[[0, 0]], 0.3);
    }
}
