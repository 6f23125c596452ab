use crate::error::{Error, Result};

use super::params::ParamVector;

/// Server- or client-side optimizer state. Buffers are flat and must match
/// the parameter vector they update.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    SgdMomentum {
        lr: f64,
        momentum: f64,
        velocity: Vec<f64>,
        steps: usize,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        steps: usize,
    },
}

impl OptimizerState {
    pub fn sgd(lr: f64, momentum: f64, len: usize) -> Self {
        OptimizerState::SgdMomentum {
            lr,
            momentum,
            velocity: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn adam(lr: f64, len: usize) -> Self {
        OptimizerState::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            OptimizerState::SgdMomentum { lr, .. } => *lr,
            OptimizerState::Adam { lr, .. } => *lr,
        }
    }

    pub fn set_lr(&mut self, new_lr: f64) {
        match self {
            OptimizerState::SgdMomentum { lr, .. } => *lr = new_lr,
            OptimizerState::Adam { lr, .. } => *lr = new_lr,
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            OptimizerState::SgdMomentum { steps, .. } => *steps,
            OptimizerState::Adam { steps, .. } => *steps,
        }
    }

    /// Applies one update in place and increments the step count.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        if !params.same_shape(grad) {
            return Err(Error::shape("optimizer gradient shape mismatch"));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        match self {
            OptimizerState::SgdMomentum {
                lr,
                momentum,
                velocity,
                steps,
            } => {
                for ((w, g), v) in params
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.as_slice())
                    .zip(velocity.iter_mut())
                {
                    *v = *momentum * *v + g;
                    *w -= *lr * *v;
                }
                *steps += 1;
            }
            OptimizerState::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                steps,
            } => {
                *steps += 1;
                let t = *steps as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for ((w, g), (mi, vi)) in params
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.as_slice())
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                    *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *w -= *lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
        Ok(())
    }
}
