//! Gated two-source fusion, the recurring primitive of this model: a
//! sigmoid gate over the concatenation of two vectors decides, feature by
//! feature, how much of each source to keep.

use crate::error::Result;
use crate::tape::{Tape, TensorId};

#[derive(Debug, Clone, Copy)]
pub struct GatePairParams {
    pub w_gate: TensorId,
    pub b_gate: TensorId,
    pub w_fuse: TensorId,
    pub b_fuse: TensorId,
}

#[derive(Debug, Clone, Copy)]
pub struct Gated {
    /// sigmoid gate over [x, y], same length as the concatenation
    pub gate: TensorId,
    pub fused: TensorId,
}

/// gate = sigmoid(w_gate [x, y] + b_gate), then a linear projection of the
/// gated concatenation: fused = w_fuse (gate ∘ [x, y]) + b_fuse.
pub fn gate_fuse_project(tape: &mut Tape, p: &GatePairParams, x: TensorId, y: TensorId) -> Result<Gated> {
    let xy = tape.concat(x, y)?;
    let pre = tape.affine(p.w_gate, xy, p.b_gate)?;
    let gate = tape.sigmoid(pre);
    let gated = tape.mul(gate, xy)?;
    let fused = tape.affine(p.w_fuse, gated, p.b_fuse)?;
    Ok(Gated { gate, fused })
}

/// gate = sigmoid(w_gate [x, y] + b_gate); fused = gate ∘ [x, y], keeping
/// the full concatenation width.
pub fn gate_concat(
    tape: &mut Tape,
    w_gate: TensorId,
    b_gate: TensorId,
    x: TensorId,
    y: TensorId,
) -> Result<Gated> {
    let xy = tape.concat(x, y)?;
    let pre = tape.affine(w_gate, xy, b_gate)?;
    let gate = tape.sigmoid(pre);
    let fused = tape.mul(gate, xy)?;
    Ok(Gated { gate, fused })
}
