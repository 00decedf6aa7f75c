//! Optimizers, learning-rate schedule and gradient clipping.

use serde::{Deserialize, Serialize};

use crate::config::OptimizerKind;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `lr_lo + ½(lr_hi − lr_lo)(1 + cos(π·epoch/max_epochs))`
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr_hi: f64, lr_lo: f64) -> f64 {
    if max_epochs == 0 {
        return lr_hi;
    }
    let frac = epoch.min(max_epochs) as f64 / max_epochs as f64;
    lr_lo + 0.5 * (lr_hi - lr_lo) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(factor);
        }
    }
    norm
}

/// Moment estimates for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, shapes: &[&[usize]]) -> Self {
        Optimizer {
            kind,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update of `params` from `grads` at learning rate `lr`.
    ///
    /// AdamW: `θ ← θ − lr·(m̂/(√v̂ + ε) + λθ)`; SGD: `θ ← θ − lr·(g + λθ)`.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count");
        assert_eq!(params.len(), self.m.len(), "parameter/moment count");
        self.step += 1;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * (d + wd * *x);
                    }
                }
            }
            OptimizerKind::AdamW => {
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for (j, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * d;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * d * d;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        *x -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * *x);
                    }
                }
            }
        }
    }
}
