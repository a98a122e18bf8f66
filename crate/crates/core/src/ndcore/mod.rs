//! Differentiable f64 substrate: rank ≤ 2 tensors and a dynamic tape.
//!
//! Everything the model computes is built from the primitives on [`Tape`].
//! Values are checked for finiteness after every op, so a NaN or infinity
//! surfaces as [`TensorError::NonFinite`] at the op that produced it.

mod tape;
mod tensor;

pub use tape::{softplus, Gradients, Tape, Var};
pub use tensor::{matmul_raw, sinusoid, transpose_raw, Tensor, TensorError};

/// `−log softmax(logits)[target]` for a rank-1 logit vector.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, target: usize) -> Result<Var, TensorError> {
    let t = tape.value(logits);
    if t.rank() != 1 {
        return Err(TensorError::Dimension {
            op: "softmax_cross_entropy",
            detail: format!("logits must be rank 1, got {:?}", t.shape()),
        });
    }
    if target >= t.len() {
        return Err(TensorError::Index {
            op: "softmax_cross_entropy",
            index: target,
            extent: t.len(),
        });
    }
    let logp = tape.log_softmax(logits)?;
    let picked = tape.gather(logp, &[target])?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0)
}

/// Central finite-difference gradient of a scalar function of one tensor.
pub fn finite_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut vals = x.values().to_vec();
    let mut out = Vec::with_capacity(vals.len());
    for i in 0..vals.len() {
        let orig = vals[i];
        vals[i] = orig + h;
        let fp = f(&x.with_values(vals.clone()));
        vals[i] = orig - h;
        let fm = f(&x.with_values(vals.clone()));
        vals[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Largest element-wise relative error with denominator `max(|a|, |b|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
