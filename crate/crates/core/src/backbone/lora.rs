use crate::ndcore::{matmul_raw, Tape, Tensor, TensorError, Var};

use super::params::{ModelParams, ParamId};

/// `Wbase + (α/r)·B·A` when enabled, `Wbase` otherwise.
///
/// Shapes follow the usual convention: `Wbase` is out×in, `A` is r×in and
/// `B` is out×r.
pub fn lora_effective(
    w_base: &Tensor,
    a: &Tensor,
    b: &Tensor,
    alpha: f64,
    rank: usize,
    enabled: bool,
) -> Result<Tensor, TensorError> {
    let (out, inp) = (w_base.rows(), w_base.cols());
    if a.rows() != rank || a.cols() != inp || b.rows() != out || b.cols() != rank {
        return Err(TensorError::Dimension {
            op: "lora_effective",
            detail: format!(
                "W {:?}, A {:?}, B {:?}, r = {rank}",
                w_base.shape(),
                a.shape(),
                b.shape()
            ),
        });
    }
    if !enabled {
        return Ok(w_base.clone());
    }
    let scale = alpha / rank as f64;
    let ba = matmul_raw(b.values(), a.values(), out, rank, inp);
    let merged = w_base
        .values()
        .iter()
        .zip(&ba)
        .map(|(w, d)| w + scale * d)
        .collect();
    Ok(w_base.with_values(merged))
}

/// A linear map `y = x·W (+ bias)` whose weight may carry a low-rank adapter.
///
/// Stored row-major as in×out, so the adapter factors are kept transposed
/// relative to [`lora_effective`]: `down` is in×r and `up` is r×out.
#[derive(Debug, Clone)]
pub struct AdaptedLinear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub down: ParamId,
    pub up: ParamId,
    pub scale: f64,
}

impl AdaptedLinear {
    pub fn apply(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        trainable: &[bool],
        x: Var,
        lora_enabled: bool,
    ) -> Result<Var, TensorError> {
        let w = tape.param(self.weight, params.get(self.weight), trainable[self.weight]);
        let mut y = tape.matmul(x, w)?;
        if lora_enabled {
            // x·(W + s·A·B) evaluated as x·W + s·(x·A)·B: same map, and the
            // rank-r detour is far cheaper than forming the merged weight.
            let a = tape.param(self.down, params.get(self.down), trainable[self.down]);
            let b = tape.param(self.up, params.get(self.up), trainable[self.up]);
            let xa = tape.matmul(x, a)?;
            let xab = tape.matmul(xa, b)?;
            let xab = tape.scale(xab, self.scale)?;
            y = tape.add(y, xab)?;
        }
        match self.bias {
            Some(bid) => {
                let b = tape.param(bid, params.get(bid), trainable[bid]);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}
