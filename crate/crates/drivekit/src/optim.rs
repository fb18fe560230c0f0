//! AdamW with decoupled weight decay and the step-decay learning-rate
//! schedule used for training.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step count.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub step_count: u64,
    moments: BTreeMap<String, Moments>,
}

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<f32>,
    second: Vec<f32>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One decoupled-weight-decay Adam update over a set of named parameters.
    /// `updates` pairs each parameter slice with its gradient; moments are
    /// lazily initialized to zero on first touch. The traversal order has no
    /// effect on the result: each parameter's update depends only on its own
    /// gradient history.
    pub fn step(&mut self, cfg: &AdamWConfig, updates: &mut [(&str, &mut [f32], &[f32])]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for (name, param, grad) in updates.iter_mut() {
            assert_eq!(
                param.len(),
                grad.len(),
                "optimizer: parameter {name} has {} values but gradient has {}",
                param.len(),
                grad.len()
            );
            let m = self.moments.entry(name.to_string()).or_insert(Moments {
                first: vec![0.0; param.len()],
                second: vec![0.0; param.len()],
            });
            assert_eq!(m.first.len(), param.len(), "moment shape drift for {name}");
            for i in 0..param.len() {
                let g = grad[i];
                m.first[i] = cfg.beta1 * m.first[i] + (1.0 - cfg.beta1) * g;
                m.second[i] = cfg.beta2 * m.second[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m.first[i] / bias1;
                let v_hat = m.second[i] / bias2;
                param[i] -=
                    cfg.lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * param[i]);
            }
        }
    }
}

/// base_lr × 0.1^⌊epoch / 20⌋ — the default schedule.
pub fn step_decay_lr(base_lr: f32, epoch: u32) -> f32 {
    step_decay_lr_every(base_lr, epoch, 20)
}

/// Step decay with a configurable interval.
pub fn step_decay_lr_every(base_lr: f32, epoch: u32, every: u32) -> f32 {
    base_lr * 0.1f32.powi((epoch / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f32, wd: f32) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_param() {
        let mut state = OptimizerState::new();
        let mut p = vec![1.5f32, -0.25];
        let g = vec![0.0f32, 0.0];
        state.step(&cfg(0.1, 0.0), &mut [("p", &mut p, &g)]);
        assert_eq!(p, vec![1.5, -0.25]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_closed_form() {
        // θ=1, g=1, lr=0.1, wd=0: m̂=v̂=1 after bias correction → θ ≈ 0.9
        let mut state = OptimizerState::new();
        let mut p = vec![1.0f32];
        let g = vec![1.0f32];
        state.step(&cfg(0.1, 0.0), &mut [("p", &mut p, &g)]);
        assert!((p[0] - 0.9).abs() < 1e-6, "got {}", p[0]);
    }

    #[test]
    fn decay_only_closed_form() {
        // wd=0.01, g=0, θ=1, lr=0.1 → θ = 1 − 0.1·0.01 = 0.999
        let mut state = OptimizerState::new();
        let mut p = vec![1.0f32];
        let g = vec![0.0f32];
        state.step(&cfg(0.1, 0.01), &mut [("p", &mut p, &g)]);
        assert!((p[0] - 0.999).abs() < 1e-7, "got {}", p[0]);
    }

    #[test]
    fn step_is_order_independent_across_params() {
        let g1 = vec![0.3f32, -0.7];
        let g2 = vec![1.1f32];
        let run = |order_swapped: bool| {
            let mut state = OptimizerState::new();
            let mut a = vec![0.5f32, 0.5];
            let mut b = vec![-0.5f32];
            if order_swapped {
                state.step(&cfg(0.01, 0.0), &mut [("b", &mut b, &g2), ("a", &mut a, &g1)]);
            } else {
                state.step(&cfg(0.01, 0.0), &mut [("a", &mut a, &g1), ("b", &mut b, &g2)]);
            }
            (a, b)
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn schedule_decays_by_ten_every_twenty_epochs() {
        assert_eq!(step_decay_lr(1e-4, 0), 1e-4);
        assert_eq!(step_decay_lr(1e-4, 19), 1e-4);
        assert!((step_decay_lr(1e-4, 20) - 1e-5).abs() < 1e-12);
        assert!((step_decay_lr(1e-4, 40) - 1e-6).abs() < 1e-13);
    }
}
