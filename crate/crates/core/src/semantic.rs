//! Question-guided caption encoding: the language half of the model.
//!
//! The image is also described in words, once globally and k times
//! locally. Conditioned on the gated question, the branch attends over
//! all k+1 caption encodings jointly, splits the result back into a
//! global part and a combined local part, and fuses the two through the
//! usual concatenation gate.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

#[derive(Debug, Clone, Copy)]
pub struct CaptionAttentionParams {
    pub w_query: TensorId,
    pub b_query: TensorId,
    pub w_key: TensorId,
    pub b_key: TensorId,
}

#[derive(Debug, Clone)]
pub struct CaptionAttended {
    /// softmax over [global, local_1, ..., local_k]
    pub delta: TensorId,
    /// global caption scaled by its attention weight
    pub global_scaled: TensorId,
    /// attention-weighted sum of the local captions
    pub locals_combined: TensorId,
}

/// Bilinear-style attention over the global caption and the k locals:
/// the query is a projection of the gated question, each caption projects
/// to a key, and the score is their dot product.
pub fn caption_attention(
    tape: &mut Tape,
    p: &CaptionAttentionParams,
    gated_question: TensorId,
    global: TensorId,
    locals: &[TensorId],
) -> Result<CaptionAttended> {
    if locals.is_empty() {
        return Err(Error::Dimension("caption attention needs at least one local".into()));
    }
    let query = tape.affine(p.w_query, gated_question, p.b_query)?;
    let mut logits = Vec::with_capacity(locals.len() + 1);
    for &m in std::iter::once(&global).chain(locals) {
        let key = tape.affine(p.w_key, m, p.b_key)?;
        logits.push(tape.dot(query, key)?);
    }
    let flat = tape.concat_many(&logits)?;
    let delta = tape.softmax(flat)?;
    let d0 = tape.index(delta, 0)?;
    let global_scaled = tape.scalar_mul(d0, global)?;
    let mut combined: Option<TensorId> = None;
    for (i, &z) in locals.iter().enumerate() {
        let di = tape.index(delta, i + 1)?;
        let term = tape.scalar_mul(di, z)?;
        combined = Some(match combined {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(CaptionAttended {
        delta,
        global_scaled,
        locals_combined: combined.unwrap(),
    })
}

/// Same attention restricted to the local captions, for the variant that
/// represents the image by dense captions alone.
pub fn local_caption_attention(
    tape: &mut Tape,
    p: &CaptionAttentionParams,
    gated_question: TensorId,
    locals: &[TensorId],
) -> Result<(TensorId, TensorId)> {
    if locals.is_empty() {
        return Err(Error::Dimension("local attention needs at least one caption".into()));
    }
    let query = tape.affine(p.w_query, gated_question, p.b_query)?;
    let mut logits = Vec::with_capacity(locals.len());
    for &z in locals {
        let key = tape.affine(p.w_key, z, p.b_key)?;
        logits.push(tape.dot(query, key)?);
    }
    let flat = tape.concat_many(&logits)?;
    let delta = tape.softmax(flat)?;
    let combined = tape.weighted_sum(delta, locals)?;
    Ok((delta, combined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;
    use crate::rng::hashed_uniform;
    use crate::tensor::RawTensor;

    fn mv(w: &RawTensor, x: &[f64]) -> Vec<f64> {
        let (m, n) = (w.shape[0], w.shape[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            for j in 0..n {
                out[i] += w.data[i * n + j] * x[j];
            }
        }
        out
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn softmax_oracle(xs: &[f64]) -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let es: Vec<f64> = xs.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = es.iter().sum();
        es.iter().map(|e| e / s).collect()
    }

    fn fixture(d_hid: usize, d_att: usize, k: usize, seed: u64) -> (ModelParams, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let mut params = ModelParams::new();
        params.insert_weight("ca.w_query", d_att, d_hid, seed).unwrap();
        params.insert_zeros("ca.b_query", vec![d_att]).unwrap();
        params.insert_weight("ca.w_key", d_att, d_hid, seed + 1).unwrap();
        params.insert_zeros("ca.b_key", vec![d_att]).unwrap();
        let question: Vec<f64> = (0..d_hid).map(|i| hashed_uniform(seed + 5, i as u64, 1.0)).collect();
        let global: Vec<f64> = (0..d_hid).map(|i| hashed_uniform(seed + 6, i as u64, 1.0)).collect();
        let locals: Vec<Vec<f64>> = (0..k)
            .map(|z| {
                (0..d_hid)
                    .map(|i| hashed_uniform(seed + 7 + z as u64, i as u64, 1.0))
                    .collect()
            })
            .collect();
        (params, question, global, locals)
    }

    #[test]
    fn caption_attention_matches_oracle() {
        let (params, question, global, locals) = fixture(5, 4, 3, 17);
        let mut tape = Tape::new();
        let p = CaptionAttentionParams {
            w_query: tape.param("ca.w_query", params.get("ca.w_query").unwrap()).unwrap(),
            b_query: tape.param("ca.b_query", params.get("ca.b_query").unwrap()).unwrap(),
            w_key: tape.param("ca.w_key", params.get("ca.w_key").unwrap()).unwrap(),
            b_key: tape.param("ca.b_key", params.get("ca.b_key").unwrap()).unwrap(),
        };
        let q = tape.constant_vec(question.clone());
        let g = tape.constant_vec(global.clone());
        let zs: Vec<_> = locals.iter().map(|z| tape.constant_vec(z.clone())).collect();
        let out = caption_attention(&mut tape, &p, q, g, &zs).unwrap();

        let query = add(&mv(params.get("ca.w_query").unwrap(), &question), &params.get("ca.b_query").unwrap().data);
        let mut logits = Vec::new();
        for m in std::iter::once(&global).chain(&locals) {
            let key = add(&mv(params.get("ca.w_key").unwrap(), m), &params.get("ca.b_key").unwrap().data);
            logits.push(query.iter().zip(&key).map(|(a, b)| a * b).sum::<f64>());
        }
        let delta = softmax_oracle(&logits);
        for (got, want) in tape.value(out.delta).iter().zip(&delta) {
            assert!((got - want).abs() < 1e-12);
        }
        let s: f64 = tape.value(out.delta).iter().sum();
        assert!((s - 1.0).abs() < 1e-10);

        for (c, (got, gv)) in tape.value(out.global_scaled).iter().zip(&global).enumerate() {
            let _ = c;
            assert!((got - delta[0] * gv).abs() < 1e-12);
        }
        let mut want_combined = vec![0.0; 5];
        for (i, z) in locals.iter().enumerate() {
            for c in 0..5 {
                want_combined[c] += delta[i + 1] * z[c];
            }
        }
        for (got, want) in tape.value(out.locals_combined).iter().zip(&want_combined) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn locals_only_attention_normalizes_over_k() {
        let (params, question, _global, locals) = fixture(5, 4, 4, 23);
        let mut tape = Tape::new();
        let p = CaptionAttentionParams {
            w_query: tape.param("ca.w_query", params.get("ca.w_query").unwrap()).unwrap(),
            b_query: tape.param("ca.b_query", params.get("ca.b_query").unwrap()).unwrap(),
            w_key: tape.param("ca.w_key", params.get("ca.w_key").unwrap()).unwrap(),
            b_key: tape.param("ca.b_key", params.get("ca.b_key").unwrap()).unwrap(),
        };
        let q = tape.constant_vec(question);
        let zs: Vec<_> = locals.iter().map(|z| tape.constant_vec(z.clone())).collect();
        let (delta, _) = local_caption_attention(&mut tape, &p, q, &zs).unwrap();
        assert_eq!(tape.len_of(delta), 4);
        let s: f64 = tape.value(delta).iter().sum();
        assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn needs_at_least_one_local() {
        let (params, question, global, _locals) = fixture(5, 4, 1, 29);
        let mut tape = Tape::new();
        let p = CaptionAttentionParams {
            w_query: tape.param("ca.w_query", params.get("ca.w_query").unwrap()).unwrap(),
            b_query: tape.param("ca.b_query", params.get("ca.b_query").unwrap()).unwrap(),
            w_key: tape.param("ca.w_key", params.get("ca.w_key").unwrap()).unwrap(),
            b_key: tape.param("ca.b_key", params.get("ca.b_key").unwrap()).unwrap(),
        };
        let q = tape.constant_vec(question);
        let g = tape.constant_vec(global);
        assert!(caption_attention(&mut tape, &p, q, g, &[]).is_err());
    }
}
