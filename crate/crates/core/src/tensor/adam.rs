use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter moment estimates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

/// Adam with bias correction.
///
/// With `f32_storage` every parameter and moment is rounded to the nearest
/// f32 after each update, so an f32 checkpoint captures the state exactly and
/// a resumed run continues bit-for-bit.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
    pub f32_storage: bool,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        ensure!(config.lr >= 0.0 && config.lr.is_finite(), "Adam lr must be >= 0, got {}", config.lr);
        ensure!((0.0..1.0).contains(&config.beta1) && config.beta1 > 0.0, "beta1 must lie in (0, 1)");
        ensure!((0.0..1.0).contains(&config.beta2) && config.beta2 > 0.0, "beta2 must lie in (0, 1)");
        ensure!(config.epsilon > 0.0, "epsilon must be positive");
        Ok(Self { config, state: AdamState::default(), f32_storage: false })
    }

    pub fn with_f32_storage(mut self, on: bool) -> Self {
        self.f32_storage = on;
        self
    }

    /// One update of every parameter from its accumulated gradient. Gradients
    /// are left in place; the caller clears them.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        let grads = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.grad().ok_or_else(|| {
                    crate::error::Error::contract(format!(
                        "adam_step: parameter {i} (shape {:?}) has no gradient",
                        p.shape()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        if self.state.first_moment.is_empty() && self.state.step_count == 0 {
            self.state.first_moment = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.state.second_moment = self.state.first_moment.clone();
        }
        ensure!(
            self.state.first_moment.len() == params.len()
                && self.state.first_moment.iter().zip(params).all(|(m, p)| m.len() == p.numel()),
            "adam_step: optimizer state does not match the parameter list"
        );

        self.state.step_count += 1;
        let t = self.state.step_count as i32;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let round = self.f32_storage;

        for (((p, g), m), v) in
            params.iter().zip(&grads).zip(self.state.first_moment.iter_mut()).zip(self.state.second_moment.iter_mut())
        {
            p.update_data(|data| {
                for i in 0..data.len() {
                    let gi = g[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    if round {
                        m[i] = m[i] as f32 as f64;
                        v[i] = v[i] as f32 as f64;
                    }
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    if round {
                        data[i] = data[i] as f32 as f64;
                    }
                }
            });
        }
        Ok(())
    }
}
