use crate::error::{ComputeError, Result};
use crate::params::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// `ms ← ρ·ms + (1−ρ)·g²; w ← w − η·g / √(ms + ε)`
    RmsProp { decay: f64, eps: f64 },
    /// Bias-corrected Adam.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp {
            decay: 0.99,
            eps: 1e-5,
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn slots(&self) -> usize {
        match self {
            OptimizerKind::RmsProp { .. } => 1,
            OptimizerKind::Adam { .. } => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Rescale gradients to this global L2 norm when exceeded.
    pub max_grad_norm: Option<f64>,
}

/// Applies one update from the gradients currently stored in `params`.
pub fn optimizer_step(params: &mut ParameterSet, cfg: &OptimizerConfig) -> Result<()> {
    for id in params.ids() {
        if params.grad(id).data().iter().any(|g| g.is_nan()) {
            return Err(ComputeError::NanGradient(params.name(id).to_string()));
        }
    }
    if let Some(max_norm) = cfg.max_grad_norm {
        let norm = params.grad_norm();
        if norm > max_norm {
            params.scale_grads(max_norm / norm);
        }
    }
    params.ensure_slots(cfg.kind.slots());
    let t = params.bump_steps();
    let lr = cfg.learning_rate;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let (value, grad, slots) = params.entry_parts(id);
        match cfg.kind {
            OptimizerKind::RmsProp { decay, eps } => {
                let ms = slots[0].data_mut();
                for ((w, &g), s) in value.data_mut().iter_mut().zip(grad.data()).zip(ms) {
                    *s = decay * *s + (1.0 - decay) * g * g;
                    *w -= lr * g / (*s + eps).sqrt();
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(t as i32);
                let c2 = 1.0 - beta2.powi(t as i32);
                let (m_slot, v_slot) = slots.split_at_mut(1);
                let (m, v) = (m_slot[0].data_mut(), v_slot[0].data_mut());
                for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
