//! Adam with bias correction and a learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to `final_lr` at the last step.
    Cosine {
        final_lr: f64,
    },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { final_lr } => {
                if total <= 1 {
                    return base;
                }
                let progress = step as f64 / (total - 1) as f64;
                final_lr + 0.5 * (base - final_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// True while no gradient has ever been seen: a zero gradient now is a
    /// fixed point.
    pub fn is_idle(&self) -> bool {
        self.m.iter().all(|&m| m == 0.0)
    }

    pub fn update(&mut self, x: &mut [f64], grad: &[f64], lr: f64, frozen: &[bool], scale: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for k in 0..x.len() {
            if frozen[k] {
                continue;
            }
            let g = grad[k];
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g;
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            x[k] -= lr * scale[k] * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}
