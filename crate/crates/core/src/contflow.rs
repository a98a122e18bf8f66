//! Rectified flow on `R^d`: straight paths from Gaussian noise to data.

use thiserror::Error;

use crate::ndcore::{Tape, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("time {0} outside [0, 1]")]
    Time(f64),
    #[error("step count must be at least 1")]
    Steps,
    #[error("Euler integration diverged at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },
}

/// A point on the continuous path together with its image time.
#[derive(Debug, Clone, PartialEq)]
pub struct ContState {
    pub x: Vec<f64>,
    pub t: f64,
}

impl ContState {
    pub fn new(x: Vec<f64>, t: f64) -> Result<Self, FlowError> {
        check_time(t)?;
        Ok(Self { x, t })
    }
}

fn check_time(t: f64) -> Result<(), FlowError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(FlowError::Time(t))
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), FlowError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(FlowError::Dimension(a.len(), b.len()))
    }
}

/// `(1 − t)·x0 + t·x1`.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
    check_dims(x0, x1)?;
    check_time(t)?;
    Ok(x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// Conditional velocity of the straight path, `x1 − x0`.
pub fn velocity_target(x0: &[f64], x1: &[f64]) -> Result<Vec<f64>, FlowError> {
    check_dims(x0, x1)?;
    Ok(x1.iter().zip(x0).map(|(b, a)| b - a).collect())
}

/// Guided velocity `v_u + γ·(v_c − v_u)`. At `γ = 1` the conditional
/// velocity comes back untouched, bit for bit.
pub fn cfg_velocity(cond: &[f64], uncond: &[f64], gamma: f64) -> Result<Vec<f64>, FlowError> {
    check_dims(cond, uncond)?;
    if gamma == 1.0 {
        return Ok(cond.to_vec());
    }
    Ok(uncond.iter().zip(cond).map(|(u, c)| u + gamma * (c - u)).collect())
}

/// Mean squared error over coordinates, `‖v − u‖² / d`.
pub fn fm_loss(v_pred: &[f64], u: &[f64]) -> Result<f64, FlowError> {
    check_dims(v_pred, u)?;
    if v_pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = v_pred.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / v_pred.len() as f64)
}

/// Same loss recorded on a tape; `target` is a constant (no gradient).
pub fn fm_loss_tape(tape: &mut Tape, v_pred: Var, target: &[f64]) -> Result<Var, TensorError> {
    let shape = tape.value(v_pred).shape().to_vec();
    let u = tape.constant(crate::ndcore::Tensor::new(shape, target.to_vec())?);
    let diff = tape.sub(v_pred, u)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

/// `x ← x + dt·v`.
pub fn euler_step(x: &mut [f64], v: &[f64], dt: f64) -> Result<(), FlowError> {
    check_dims(x, v)?;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi += dt * vi;
    }
    Ok(())
}

/// Forward Euler on the uniform grid `t_k = k / steps`, returning the state at `t = 1`.
pub fn euler_sample<F>(mut velocity_fn: F, x0: &[f64], steps: usize) -> Result<Vec<f64>, FlowError>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    if steps == 0 {
        return Err(FlowError::Steps);
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0.to_vec();
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let v = velocity_fn(&x, t);
        euler_step(&mut x, &v, dt)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::Divergence { step: k, t });
        }
    }
    Ok(x)
}
