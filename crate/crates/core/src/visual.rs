//! Question-guided scene-graph encoding: the appearance half of the model.
//!
//! A scene is N object feature vectors plus an embedding for every ordered
//! object pair. Conditioned on the (history-aware) question, the branch
//! scores all pairwise relations at once, convolves each object with its
//! neighborhood under those relation weights, fuses appearance with
//! relation context through per-object gates, and finally attends over
//! objects to produce one image vector.

use crate::blocks::{self, GatePairParams, Gated};
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

#[derive(Debug, Clone, Copy)]
pub struct RelationAttentionParams {
    /// projects the gated question into the relation-scoring space
    pub w_query: TensorId,
    /// projects each relation embedding into the same space
    pub w_edge: TensorId,
    pub w_score: TensorId,
    pub b_score: TensorId,
}

#[derive(Debug, Clone)]
pub struct RelationAttended {
    /// joint softmax over all N*N ordered pairs, row-major
    pub alpha: TensorId,
    /// relation embeddings scaled by their attention weight
    pub scaled: Vec<Vec<TensorId>>,
}

/// Scores every ordered pair's relation against the question and rescales
/// the relation embeddings. The softmax runs jointly over all N*N pairs.
pub fn relation_attention(
    tape: &mut Tape,
    p: &RelationAttentionParams,
    gated_question: TensorId,
    relations: &[Vec<TensorId>],
) -> Result<RelationAttended> {
    let n = relations.len();
    if n == 0 || relations.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("relations must be a square N x N grid".into()));
    }
    let query = tape.linear(p.w_query, gated_question)?;
    let mut logits = Vec::with_capacity(n * n);
    for row in relations {
        for &r in row {
            let edge = tape.linear(p.w_edge, r)?;
            let qe = tape.mul(query, edge)?;
            let score = tape.affine(p.w_score, qe, p.b_score)?;
            logits.push(score);
        }
    }
    let flat = tape.concat_many(&logits)?;
    let alpha = tape.softmax(flat)?;
    let mut scaled = Vec::with_capacity(n);
    for (i, row) in relations.iter().enumerate() {
        let mut out_row = Vec::with_capacity(n);
        for (j, &r) in row.iter().enumerate() {
            let a = tape.index(alpha, i * n + j)?;
            out_row.push(tape.scalar_mul(a, r)?);
        }
        scaled.push(out_row);
    }
    Ok(RelationAttended { alpha, scaled })
}

#[derive(Debug, Clone, Copy)]
pub struct GraphConvParams {
    /// maps [object, scaled relation] into the question space
    pub w_pair: TensorId,
    pub w_score: TensorId,
    pub b_score: TensorId,
}

#[derive(Debug, Clone)]
pub struct Neighborhoods {
    /// per-object attention over its neighbors; each row sums to 1
    pub beta_rows: Vec<TensorId>,
    /// relation-aware object representations
    pub mixed: Vec<TensorId>,
}

/// Question-guided graph convolution: for each center object, attend over
/// all objects j through the pair embedding [h_j, scaled_ij] and mix their
/// raw features under that per-row softmax.
pub fn graph_convolution(
    tape: &mut Tape,
    p: &GraphConvParams,
    gated_question: TensorId,
    objects: &[TensorId],
    scaled: &[Vec<TensorId>],
) -> Result<Neighborhoods> {
    let n = objects.len();
    if scaled.len() != n || scaled.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("scaled relations must be N x N".into()));
    }
    let mut beta_rows = Vec::with_capacity(n);
    let mut mixed = Vec::with_capacity(n);
    for i in 0..n {
        let mut logits = Vec::with_capacity(n);
        for j in 0..n {
            let pair = tape.concat(objects[j], scaled[i][j])?;
            let key = tape.linear(p.w_pair, pair)?;
            let qk = tape.mul(gated_question, key)?;
            let score = tape.affine(p.w_score, qk, p.b_score)?;
            logits.push(score);
        }
        let flat = tape.concat_many(&logits)?;
        let beta = tape.softmax(flat)?;
        let mix = tape.weighted_sum(beta, objects)?;
        beta_rows.push(beta);
        mixed.push(mix);
    }
    Ok(Neighborhoods { beta_rows, mixed })
}

/// Per-object gated fusion of appearance and relation context.
pub fn object_gate_fusion(
    tape: &mut Tape,
    p: &GatePairParams,
    objects: &[TensorId],
    mixed: &[TensorId],
) -> Result<Vec<Gated>> {
    if objects.len() != mixed.len() {
        return Err(Error::Dimension("object/mixed count mismatch".into()));
    }
    objects
        .iter()
        .zip(mixed)
        .map(|(&h, &m)| blocks::gate_fuse_project(tape, p, h, m))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectAttentionParams {
    /// projects each key object into the question space
    pub w_key: TensorId,
    pub w_score: TensorId,
    pub b_score: TensorId,
}

#[derive(Debug, Clone)]
pub struct ObjectAttended {
    /// softmax over objects
    pub gamma: TensorId,
    /// attention-weighted sum of the value vectors
    pub summary: TensorId,
}

/// Question-to-object attention. Keys are always the raw object features;
/// values may be the same features or their relation-fused counterparts.
pub fn object_attention(
    tape: &mut Tape,
    p: &ObjectAttentionParams,
    question: TensorId,
    keys: &[TensorId],
    values: &[TensorId],
) -> Result<ObjectAttended> {
    if keys.is_empty() || keys.len() != values.len() {
        return Err(Error::Dimension("object attention needs matching keys/values".into()));
    }
    let mut logits = Vec::with_capacity(keys.len());
    for &k in keys {
        let key = tape.linear(p.w_key, k)?;
        let qk = tape.mul(question, key)?;
        let score = tape.affine(p.w_score, qk, p.b_score)?;
        logits.push(score);
    }
    let flat = tape.concat_many(&logits)?;
    let gamma = tape.softmax(flat)?;
    let summary = tape.weighted_sum(gamma, values)?;
    Ok(ObjectAttended { gamma, summary })
}
