//! Reverse-mode autodiff on a per-forward-pass tape.
//!
//! Each forward pass builds a fresh [`Tape`]. Nodes are appended in
//! topological order and identified by [`TensorId`]; trainable leaves are
//! registered with [`Tape::param`] under unique names so gradients can be
//! collected per parameter after [`Tape::backward`]. Everything is f64.
//! Replaying the same graph twice yields bit-identical values and
//! gradients: every op is evaluated sequentially in a fixed order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::RawTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// w: [m, n] matrix, x: [n] vector -> [m]
    Linear { w: TensorId, x: TensorId },
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// rank-1 inputs laid end to end
    Concat(Vec<TensorId>),
    Sigmoid(TensorId),
    Tanh(TensorId),
    /// max-subtracted softmax over a rank-1 tensor
    Softmax(TensorId),
    Dot(TensorId, TensorId),
    /// contiguous window of the flattened input (also the embedding-row gather)
    Slice { x: TensorId, start: usize, len: usize },
    /// scalar s ([1]) broadcast over x
    ScalarMul { s: TensorId, x: TensorId },
    MulConst { x: TensorId, c: f64 },
    Log(TensorId),
    Neg(TensorId),
    Sum(TensorId),
    /// mask entries are 0 or 1/keep, fixed at forward time
    Dropout { x: TensorId, mask: Vec<f64> },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, TensorId)>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            data,
            shape,
            op,
            requires_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        let t = RawTensor::new(data, shape)?;
        Ok(self.push(t.data, t.shape, Op::Leaf, false))
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> TensorId {
        let n = data.len();
        self.push(data, vec![n], Op::Leaf, false)
    }

    pub fn zeros(&mut self, len: usize) -> TensorId {
        self.push(vec![0.0; len], vec![len], Op::Leaf, false)
    }

    /// Registers a trainable leaf under a unique name. The tensor is copied
    /// onto the tape; after backward() its gradient is keyed by this name.
    pub fn param(&mut self, name: &str, tensor: &RawTensor) -> Result<TensorId> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        let id = self.push(tensor.data.clone(), tensor.shape.clone(), Op::Leaf, true);
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        self.nodes[id.0].data[0]
    }

    pub fn len_of(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// w [m, n] times x [n] -> [m].
    pub fn linear(&mut self, w: TensorId, x: TensorId) -> Result<TensorId> {
        let (ws, xs) = (&self.nodes[w.0], &self.nodes[x.0]);
        if ws.shape.len() != 2 || xs.shape.len() != 1 || ws.shape[1] != xs.shape[0] {
            return Err(Error::Dimension(format!(
                "linear: w {:?} incompatible with x {:?}",
                ws.shape, xs.shape
            )));
        }
        let (m, n) = (ws.shape[0], ws.shape[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &ws.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(xs.data.iter()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        let rg = self.needs_grad(&[w, x]);
        Ok(self.push(out, vec![m], Op::Linear { w, x }, rg))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dimension(format!(
                "add: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(data, shape, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dimension(format!(
                "mul: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(data, shape, Op::Mul(a, b), rg))
    }

    pub fn concat_many(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for id in parts {
            let n = &self.nodes[id.0];
            if n.shape.len() != 1 {
                return Err(Error::Dimension(format!(
                    "concat expects rank-1 inputs, got {:?}",
                    n.shape
                )));
            }
            data.extend_from_slice(&n.data);
        }
        let len = data.len();
        let rg = self.needs_grad(parts);
        Ok(self.push(data, vec![len], Op::Concat(parts.to_vec()), rg))
    }

    pub fn concat(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.concat_many(&[a, b])
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[x]);
        self.push(data, shape, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[x]);
        self.push(data, shape, Op::Tanh(x), rg)
    }

    /// Numerically stable softmax over a non-empty rank-1 tensor.
    /// Subtracting the max makes the result invariant (to rounding) under
    /// adding any constant to all logits, and preserves their order.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let n = &self.nodes[x.0];
        if n.shape.len() != 1 || n.data.is_empty() {
            return Err(Error::Dimension(format!(
                "softmax expects non-empty rank-1 input, got {:?}",
                n.shape
            )));
        }
        let max = n.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = n.data.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let shape = n.shape.clone();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(data, shape, Op::Softmax(x), rg))
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape != nb.shape || na.shape.len() != 1 {
            return Err(Error::Dimension(format!(
                "dot: {:?} vs {:?}",
                na.shape, nb.shape
            )));
        }
        let mut acc = 0.0;
        for (x, y) in na.data.iter().zip(nb.data.iter()) {
            acc += x * y;
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(vec![acc], vec![1], Op::Dot(a, b), rg))
    }

    /// Window of the flattened input as a rank-1 tensor. Rank-2 inputs are
    /// read row-major, so `slice(table, row * width, width)` gathers a row.
    pub fn slice(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let n = &self.nodes[x.0];
        if start + len > n.data.len() || len == 0 {
            return Err(Error::Dimension(format!(
                "slice [{start}, {}) out of bounds for {} elements",
                start + len,
                n.data.len()
            )));
        }
        let data = n.data[start..start + len].to_vec();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(data, vec![len], Op::Slice { x, start, len }, rg))
    }

    /// Element i of a rank-1 tensor as a [1] scalar.
    pub fn index(&mut self, x: TensorId, i: usize) -> Result<TensorId> {
        self.slice(x, i, 1)
    }

    /// s ([1]) scaled over every element of x.
    pub fn scalar_mul(&mut self, s: TensorId, x: TensorId) -> Result<TensorId> {
        if self.nodes[s.0].data.len() != 1 {
            return Err(Error::Dimension("scalar_mul: s must have one element".into()));
        }
        let sv = self.nodes[s.0].data[0];
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| sv * v).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[s, x]);
        Ok(self.push(data, shape, Op::ScalarMul { s, x }, rg))
    }

    pub fn mul_const(&mut self, x: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| c * v).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[x]);
        self.push(data, shape, Op::MulConst { x, c }, rg)
    }

    /// Natural log; every input element must be strictly positive.
    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        if self.nodes[x.0].data.iter().any(|v| *v <= 0.0) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.ln()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(data, shape, Op::Log(x), rg))
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| -v).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[x]);
        self.push(data, shape, Op::Neg(x), rg)
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.needs_grad(&[x]);
        self.push(vec![s], vec![1], Op::Sum(x), rg)
    }

    /// Arithmetic mean of a rank-1 tensor as a [1] scalar.
    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.nodes[x.0].data.len() as f64;
        let s = self.sum(x);
        self.mul_const(s, 1.0 / n)
    }

    /// Inverted dropout with a caller-built mask of 0 / (1/keep) entries.
    pub fn dropout_masked(&mut self, x: TensorId, mask: Vec<f64>) -> Result<TensorId> {
        if mask.len() != self.nodes[x.0].data.len() {
            return Err(Error::Dimension("dropout mask length mismatch".into()));
        }
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs_grad(&[x]);
        Ok(self.push(data, shape, Op::Dropout { x, mask }, rg))
    }

    // ── composite helpers ────────────────────────────────────────────

    /// w x + b.
    pub fn affine(&mut self, w: TensorId, x: TensorId, b: TensorId) -> Result<TensorId> {
        let wx = self.linear(w, x)?;
        self.add(wx, b)
    }

    /// Sum_i weights[i] * vecs[i]; weights is rank-1 of len(vecs).
    pub fn weighted_sum(&mut self, weights: TensorId, vecs: &[TensorId]) -> Result<TensorId> {
        if self.len_of(weights) != vecs.len() || vecs.is_empty() {
            return Err(Error::Dimension(format!(
                "weighted_sum: {} weights for {} vectors",
                self.len_of(weights),
                vecs.len()
            )));
        }
        let mut acc: Option<TensorId> = None;
        for (i, v) in vecs.iter().enumerate() {
            let wi = self.index(weights, i)?;
            let term = self.scalar_mul(wi, *v)?;
            acc = Some(match acc {
                None => term,
                Some(a) => self.add(a, term)?,
            });
        }
        Ok(acc.unwrap())
    }

    /// Mean of equally-shaped rank-1 tensors.
    pub fn mean_of(&mut self, vecs: &[TensorId]) -> Result<TensorId> {
        if vecs.is_empty() {
            return Err(Error::Dimension("mean of zero tensors".into()));
        }
        let mut acc = vecs[0];
        for v in &vecs[1..] {
            acc = self.add(acc, *v)?;
        }
        Ok(self.mul_const(acc, 1.0 / vecs.len() as f64))
    }

    // ── backward ─────────────────────────────────────────────────────

    fn add_grad(grads: &mut [Option<Vec<f64>>], id: TensorId, len: usize, f: impl Fn(&mut [f64])) {
        let slot = grads[id.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    /// Reverse pass from a [1] scalar. Populates gradients for every node
    /// reachable from `loss` that requires grad; leaves accumulate.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Dimension("backward expects a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Linear { w, x } => {
                    let (w, x) = (*w, *x);
                    let n = self.nodes[x.0].data.len();
                    let m = g.len();
                    if self.nodes[w.0].requires_grad {
                        let xd = &self.nodes[x.0].data;
                        let slot =
                            grads[w.0].get_or_insert_with(|| vec![0.0; m * n]);
                        for r in 0..m {
                            let gr = g[r];
                            let row = &mut slot[r * n..(r + 1) * n];
                            for (s, xv) in row.iter_mut().zip(xd.iter()) {
                                *s += gr * xv;
                            }
                        }
                    }
                    if self.nodes[x.0].requires_grad {
                        let wd = &self.nodes[w.0].data;
                        let slot = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
                        for r in 0..m {
                            let gr = g[r];
                            let row = &wd[r * n..(r + 1) * n];
                            for (s, wv) in slot.iter_mut().zip(row.iter()) {
                                *s += gr * wv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    for id in [a, b] {
                        if self.nodes[id.0].requires_grad {
                            Self::add_grad(&mut grads, id, g.len(), |s| {
                                for (sv, gv) in s.iter_mut().zip(&g) {
                                    *sv += gv;
                                }
                            });
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a.0].requires_grad {
                        let bd = self.nodes[b.0].data.clone();
                        Self::add_grad(&mut grads, a, g.len(), |s| {
                            for ((sv, gv), bv) in s.iter_mut().zip(&g).zip(&bd) {
                                *sv += gv * bv;
                            }
                        });
                    }
                    if self.nodes[b.0].requires_grad {
                        let ad = self.nodes[a.0].data.clone();
                        Self::add_grad(&mut grads, b, g.len(), |s| {
                            for ((sv, gv), av) in s.iter_mut().zip(&g).zip(&ad) {
                                *sv += gv * av;
                            }
                        });
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for id in parts {
                        let len = self.nodes[id.0].data.len();
                        if self.nodes[id.0].requires_grad {
                            let seg = g[off..off + len].to_vec();
                            Self::add_grad(&mut grads, id, len, |s| {
                                for (sv, gv) in s.iter_mut().zip(&seg) {
                                    *sv += gv;
                                }
                            });
                        }
                        off += len;
                    }
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let y = self.nodes[i].data.clone();
                    Self::add_grad(&mut grads, x, g.len(), |s| {
                        for ((sv, gv), yv) in s.iter_mut().zip(&g).zip(&y) {
                            *sv += gv * yv * (1.0 - yv);
                        }
                    });
                }
                Op::Tanh(x) => {
                    let x = *x;
                    let y = self.nodes[i].data.clone();
                    Self::add_grad(&mut grads, x, g.len(), |s| {
                        for ((sv, gv), yv) in s.iter_mut().zip(&g).zip(&y) {
                            *sv += gv * (1.0 - yv * yv);
                        }
                    });
                }
                Op::Softmax(x) => {
                    let x = *x;
                    let y = self.nodes[i].data.clone();
                    let dot: f64 = g.iter().zip(&y).map(|(gv, yv)| gv * yv).sum();
                    Self::add_grad(&mut grads, x, g.len(), |s| {
                        for ((sv, gv), yv) in s.iter_mut().zip(&g).zip(&y) {
                            *sv += yv * (gv - dot);
                        }
                    });
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let g0 = g[0];
                    if self.nodes[a.0].requires_grad {
                        let bd = self.nodes[b.0].data.clone();
                        Self::add_grad(&mut grads, a, bd.len(), |s| {
                            for (sv, bv) in s.iter_mut().zip(&bd) {
                                *sv += g0 * bv;
                            }
                        });
                    }
                    if self.nodes[b.0].requires_grad {
                        let ad = self.nodes[a.0].data.clone();
                        Self::add_grad(&mut grads, b, ad.len(), |s| {
                            for (sv, av) in s.iter_mut().zip(&ad) {
                                *sv += g0 * av;
                            }
                        });
                    }
                }
                Op::Slice { x, start, len } => {
                    let (x, start, len) = (*x, *start, *len);
                    let full = self.nodes[x.0].data.len();
                    Self::add_grad(&mut grads, x, full, |s| {
                        for k in 0..len {
                            s[start + k] += g[k];
                        }
                    });
                }
                Op::ScalarMul { s, x } => {
                    let (s_id, x_id) = (*s, *x);
                    let sv = self.nodes[s_id.0].data[0];
                    if self.nodes[s_id.0].requires_grad {
                        let xd = self.nodes[x_id.0].data.clone();
                        let acc: f64 = g.iter().zip(&xd).map(|(gv, xv)| gv * xv).sum();
                        Self::add_grad(&mut grads, s_id, 1, |s| s[0] += acc);
                    }
                    if self.nodes[x_id.0].requires_grad {
                        Self::add_grad(&mut grads, x_id, g.len(), |slot| {
                            for (sv_slot, gv) in slot.iter_mut().zip(&g) {
                                *sv_slot += sv * gv;
                            }
                        });
                    }
                }
                Op::MulConst { x, c } => {
                    let (x, c) = (*x, *c);
                    Self::add_grad(&mut grads, x, g.len(), |s| {
                        for (sv, gv) in s.iter_mut().zip(&g) {
                            *sv += c * gv;
                        }
                    });
                }
                Op::Log(x) => {
                    let x = *x;
                    let xd = self.nodes[x.0].data.clone();
                    Self::add_grad(&mut grads, x, g.len(), |s| {
                        for ((sv, gv), xv) in s.iter_mut().zip(&g).zip(&xd) {
                            *sv += gv / xv;
                        }
                    });
                }
                Op::Neg(x) => {
                    let x = *x;
                    Self::add_grad(&mut grads, x, g.len(), |s| {
                        for (sv, gv) in s.iter_mut().zip(&g) {
                            *sv -= gv;
                        }
                    });
                }
                Op::Sum(x) => {
                    let x = *x;
                    let n = self.nodes[x.0].data.len();
                    let g0 = g[0];
                    Self::add_grad(&mut grads, x, n, |s| {
                        for sv in s.iter_mut() {
                            *sv += g0;
                        }
                    });
                }
                Op::Dropout { x, mask } => {
                    let x = *x;
                    let mask = mask.clone();
                    Self::add_grad(&mut grads, x, g.len(), |s| {
                        for ((sv, gv), mv) in s.iter_mut().zip(&g).zip(&mask) {
                            *sv += gv * mv;
                        }
                    });
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of a node after backward(); zeros if it was unreachable.
    pub fn grad(&self, id: TensorId) -> Vec<f64> {
        match self.grads.get(id.0).and_then(|g| g.clone()) {
            Some(g) => g,
            None => vec![0.0; self.nodes[id.0].data.len()],
        }
    }

    /// Gradients of all registered parameters, keyed by name.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .map(|(name, id)| (name.clone(), self.grad(*id)))
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_matches_hand_computation() {
        let mut t = Tape::new();
        let x = t.constant_vec(vec![1.0, 2.0, 3.0]);
        let y = t.softmax(x).unwrap();
        // independent route: exp/sum in straight-line code
        let exps = [1.0f64.exp(), 2.0f64.exp(), 3.0f64.exp()];
        let z: f64 = exps.iter().sum();
        let want: Vec<f64> = exps.iter().map(|e| e / z).collect();
        assert!(vec_close(t.value(y), &want, 1e-15));
        assert!(vec_close(
            t.value(y),
            &[0.09003057317038046, 0.24472847105479767, 0.6652409557748219],
            1e-12
        ));
        let s: f64 = t.value(y).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = vec![0.3, -1.2, 4.0, 2.2];
        let mut t = Tape::new();
        let a = t.constant_vec(logits.clone());
        let sa = t.softmax(a).unwrap();
        let b = t.constant_vec(logits.iter().map(|v| v + 123.456).collect());
        let sb = t.softmax(b).unwrap();
        for (x, y) in t.value(sa).iter().zip(t.value(sb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_empty() {
        let mut t = Tape::new();
        let x = t.constant(vec![], vec![0]).unwrap();
        assert!(t.softmax(x).is_err());
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let p = RawTensor::new(vec![1.5, -2.0, 0.25], vec![3]).unwrap();
        let mut t = Tape::new();
        let x = t.param("x", &p).unwrap();
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        let g = t.grad(x);
        assert!(vec_close(&g, &[3.0, -4.0, 0.5], 1e-14));
    }

    #[test]
    fn log_rejects_nonpositive() {
        let mut t = Tape::new();
        let x = t.constant_vec(vec![0.5, 0.0]);
        assert!(t.log(x).is_err());
    }

    #[test]
    fn linear_shapes_checked() {
        let mut t = Tape::new();
        let w = t.constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap();
        let x = t.constant_vec(vec![1.0, 1.0, 1.0]);
        assert!(t.linear(w, x).is_err());
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // y = x . x  -> dy/dx = 2x, exercised through two separate reads of x
        let p = RawTensor::new(vec![2.0, 3.0], vec![2]).unwrap();
        let mut t = Tape::new();
        let x = t.param("x", &p).unwrap();
        let d = t.dot(x, x).unwrap();
        t.backward(d).unwrap();
        assert!(vec_close(&t.grad(x), &[4.0, 6.0], 1e-14));
    }

    #[test]
    fn slice_scatters_gradient() {
        let p = RawTensor::new(vec![1.0, 2.0, 3.0, 4.0], vec![4]).unwrap();
        let mut t = Tape::new();
        let x = t.param("x", &p).unwrap();
        let s = t.slice(x, 1, 2).unwrap();
        let loss = t.sum(s);
        t.backward(loss).unwrap();
        assert!(vec_close(&t.grad(x), &[0.0, 1.0, 1.0, 0.0], 1e-14));
    }

    #[test]
    fn weighted_sum_matches_manual() {
        let mut t = Tape::new();
        let w = t.constant_vec(vec![0.2, 0.8]);
        let a = t.constant_vec(vec![1.0, 0.0]);
        let b = t.constant_vec(vec![0.0, 1.0]);
        let ws = t.weighted_sum(w, &[a, b]).unwrap();
        assert!(vec_close(t.value(ws), &[0.2, 0.8], 1e-15));
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let p = RawTensor::new(vec![0.3, -0.7, 1.1, 0.9], vec![2, 2]).unwrap();
            let mut t = Tape::new();
            let w = t.param("w", &p).unwrap();
            let x = t.constant_vec(vec![0.5, -0.25]);
            let h = t.linear(w, x).unwrap();
            let a = t.tanh(h);
            let sm = t.softmax(a).unwrap();
            let l0 = t.index(sm, 0).unwrap();
            let ll = t.log(l0).unwrap();
            let loss = t.neg(ll);
            t.backward(loss).unwrap();
            (t.value(loss).to_vec(), t.grad(w))
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn dropout_mask_scales_and_blocks() {
        let p = RawTensor::new(vec![1.0, 2.0, 3.0], vec![3]).unwrap();
        let mut t = Tape::new();
        let x = t.param("x", &p).unwrap();
        let d = t.dropout_masked(x, vec![2.0, 0.0, 2.0]).unwrap();
        assert!(vec_close(t.value(d), &[2.0, 0.0, 6.0], 1e-15));
        let loss = t.sum(d);
        t.backward(loss).unwrap();
        assert!(vec_close(&t.grad(x), &[2.0, 0.0, 2.0], 1e-15));
    }

    #[test]
    fn duplicate_param_name_rejected() {
        let p = RawTensor::scalar(1.0);
        let mut t = Tape::new();
        t.param("w", &p).unwrap();
        assert!(t.param("w", &p).is_err());
    }
}
