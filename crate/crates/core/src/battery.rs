//! The gradient-check battery: central-difference verification of every
//! parameterized building block in isolation, then of the end-to-end
//! loss for every model variant on a small seeded configuration.

use crate::blocks::{self, GatePairParams};
use crate::config::RunConfig;
use crate::data::instances_from_all;
use crate::error::{Error, Result};
use crate::fusion::{ModelDims, ModelVariant, ALL_VARIANTS};
use crate::gradcheck::{grad_check, LossEval, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::params::ModelParams;
use crate::rng::hashed_uniform;
use crate::semantic::{self, CaptionAttentionParams};
use crate::synth::DatasetConfig;
use crate::tape::{Tape, TensorId};
use crate::text::{insert_lstm_params, LstmHandle};
use crate::visual::{
    self, GraphConvParams, ObjectAttentionParams, RelationAttentionParams,
};

/// One line of the battery report.
#[derive(Debug, Clone)]
pub struct BatteryRow {
    pub check: String,
    pub max_rel_err: f64,
    pub passed: bool,
    /// parameters above tolerance, worst first
    pub offenders: Vec<String>,
}

fn finish(tape: &mut Tape, loss: TensorId, want: bool) -> Result<LossEval> {
    let value = tape.scalar(loss);
    let grads = if want {
        tape.backward(loss)?;
        Some(tape.param_grads())
    } else {
        None
    };
    Ok(LossEval { loss: value, grads })
}

fn probe(seed: u64, label: &str, len: usize) -> Vec<f64> {
    let base = crate::rng::derive_seed(seed, label);
    (0..len)
        .map(|i| hashed_uniform(base, i as u64, 1.0))
        .collect()
}

/// Collapses any vector to a scalar against a fixed probe direction, so
/// every output coordinate influences the loss.
fn probe_loss(tape: &mut Tape, seed: u64, label: &str, x: TensorId) -> Result<TensorId> {
    let len = tape.len_of(x);
    let c = tape.constant_vec(probe(seed, label, len));
    tape.dot(x, c)
}

fn row<F>(name: &str, params: &ModelParams, f: F) -> Result<BatteryRow>
where
    F: Fn(&ModelParams, bool) -> Result<LossEval>,
{
    let report = grad_check(params, f, DEFAULT_STEP)?;
    let mut offenders: Vec<(String, f64)> = report
        .per_param
        .iter()
        .filter(|(_, e)| **e > DEFAULT_TOLERANCE)
        .map(|(n, e)| (n.clone(), *e))
        .collect();
    offenders.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(BatteryRow {
        check: name.to_string(),
        max_rel_err: report.max_rel_err,
        passed: report.passed(DEFAULT_TOLERANCE),
        offenders: offenders.into_iter().map(|(n, _)| n).collect(),
    })
}

fn gate_pair(tape: &mut Tape, params: &ModelParams, prefix: &str) -> Result<GatePairParams> {
    Ok(GatePairParams {
        w_gate: tape.param(&format!("{prefix}.w_gate"), params.get(&format!("{prefix}.w_gate"))?)?,
        b_gate: tape.param(&format!("{prefix}.b_gate"), params.get(&format!("{prefix}.b_gate"))?)?,
        w_fuse: tape.param(&format!("{prefix}.w_fuse"), params.get(&format!("{prefix}.w_fuse"))?)?,
        b_fuse: tape.param(&format!("{prefix}.b_fuse"), params.get(&format!("{prefix}.b_fuse"))?)?,
    })
}

fn op_checks(seed: u64) -> Result<Vec<BatteryRow>> {
    let d = 4usize;
    let n = 3usize;
    let mut rows = Vec::new();

    // affine map through tanh
    let mut p = ModelParams::new();
    p.insert_weight("w", d, d, seed)?;
    p.insert_vector("b", d, seed + 1)?;
    rows.push(row("op/affine_tanh", &p, |p, want| {
        let mut t = Tape::new();
        let w = t.param("w", p.get("w")?)?;
        let b = t.param("b", p.get("b")?)?;
        let x = t.constant_vec(probe(seed, "x", d));
        let h = t.affine(w, x, b)?;
        let a = t.tanh(h);
        let loss = probe_loss(&mut t, seed, "affine", a)?;
        finish(&mut t, loss, want)
    })?);

    // softmax feeding a negative log likelihood
    let mut p = ModelParams::new();
    p.insert_weight("w", n, d, seed + 2)?;
    rows.push(row("op/softmax_nll", &p, |p, want| {
        let mut t = Tape::new();
        let w = t.param("w", p.get("w")?)?;
        let x = t.constant_vec(probe(seed, "sm_x", d));
        let z = t.linear(w, x)?;
        let sm = t.softmax(z)?;
        let p1 = t.index(sm, 1)?;
        let lg = t.log(p1)?;
        let loss = t.neg(lg);
        finish(&mut t, loss, want)
    })?);

    // one recurrent encoder over a short token sequence
    let mut p = ModelParams::new();
    insert_lstm_params(&mut p, "lstm", d, d, seed + 3)?;
    rows.push(row("op/lstm", &p, |p, want| {
        let mut t = Tape::new();
        let lstm = LstmHandle {
            w: t.param("lstm.w", p.get("lstm.w")?)?,
            b: t.param("lstm.b", p.get("lstm.b")?)?,
            hidden_dim: d,
        };
        let xs: Vec<TensorId> = (0..3)
            .map(|i| t.constant_vec(probe(seed, &format!("tok{i}"), d)))
            .collect();
        let enc = lstm.encode(&mut t, &xs)?;
        let loss = probe_loss(&mut t, seed, "lstm", enc.state)?;
        finish(&mut t, loss, want)
    })?);

    // gated fusion with projection
    let mut p = ModelParams::new();
    p.insert_weight("g.w_gate", 2 * d, 2 * d, seed + 4)?;
    p.insert_vector("g.b_gate", 2 * d, seed + 5)?;
    p.insert_weight("g.w_fuse", d, 2 * d, seed + 6)?;
    p.insert_vector("g.b_fuse", d, seed + 7)?;
    rows.push(row("op/gate_fuse_project", &p, |p, want| {
        let mut t = Tape::new();
        let gp = gate_pair(&mut t, p, "g")?;
        let x = t.constant_vec(probe(seed, "gx", d));
        let y = t.constant_vec(probe(seed, "gy", d));
        let out = blocks::gate_fuse_project(&mut t, &gp, x, y)?;
        let loss = probe_loss(&mut t, seed, "gate", out.fused)?;
        finish(&mut t, loss, want)
    })?);

    // gate over a concatenation, width preserved
    let mut p = ModelParams::new();
    p.insert_weight("w_gate", 2 * d, 2 * d, seed + 8)?;
    p.insert_vector("b_gate", 2 * d, seed + 9)?;
    rows.push(row("op/gate_concat", &p, |p, want| {
        let mut t = Tape::new();
        let w = t.param("w_gate", p.get("w_gate")?)?;
        let b = t.param("b_gate", p.get("b_gate")?)?;
        let x = t.constant_vec(probe(seed, "cx", d));
        let y = t.constant_vec(probe(seed, "cy", d));
        let out = blocks::gate_concat(&mut t, w, b, x, y)?;
        let loss = probe_loss(&mut t, seed, "concat", out.fused)?;
        finish(&mut t, loss, want)
    })?);

    // question-guided attention over all relation edges
    let mut p = ModelParams::new();
    p.insert_weight("r.w_query", d, d, seed + 10)?;
    p.insert_weight("r.w_edge", d, d, seed + 11)?;
    p.insert_weight("r.w_score", 1, d, seed + 12)?;
    p.insert_vector("r.b_score", 1, seed + 13)?;
    rows.push(row("op/relation_attention", &p, |p, want| {
        let mut t = Tape::new();
        let rp = RelationAttentionParams {
            w_query: t.param("r.w_query", p.get("r.w_query")?)?,
            w_edge: t.param("r.w_edge", p.get("r.w_edge")?)?,
            w_score: t.param("r.w_score", p.get("r.w_score")?)?,
            b_score: t.param("r.b_score", p.get("r.b_score")?)?,
        };
        let q = t.constant_vec(probe(seed, "rq", d));
        let rels: Vec<Vec<TensorId>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| t.constant_vec(probe(seed, &format!("rel{i}{j}"), d)))
                    .collect()
            })
            .collect();
        let out = visual::relation_attention(&mut t, &rp, q, &rels)?;
        let mut acc = None;
        for (i, row) in out.scaled.iter().enumerate() {
            for (j, &s) in row.iter().enumerate() {
                let term = probe_loss(&mut t, seed, &format!("rsc{i}{j}"), s)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => t.add(a, term)?,
                });
            }
        }
        finish(&mut t, acc.unwrap(), want)
    })?);

    // neighborhood mixing under the same scaled relations
    let mut p = ModelParams::new();
    p.insert_weight("g.w_pair", d, 2 * d, seed + 14)?;
    p.insert_weight("g.w_score", 1, d, seed + 15)?;
    p.insert_vector("g.b_score", 1, seed + 16)?;
    rows.push(row("op/graph_convolution", &p, |p, want| {
        let mut t = Tape::new();
        let gp = GraphConvParams {
            w_pair: t.param("g.w_pair", p.get("g.w_pair")?)?,
            w_score: t.param("g.w_score", p.get("g.w_score")?)?,
            b_score: t.param("g.b_score", p.get("g.b_score")?)?,
        };
        let q = t.constant_vec(probe(seed, "gq", d));
        let objs: Vec<TensorId> = (0..n)
            .map(|i| t.constant_vec(probe(seed, &format!("obj{i}"), d)))
            .collect();
        let scaled: Vec<Vec<TensorId>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| t.constant_vec(probe(seed, &format!("sc{i}{j}"), d)))
                    .collect()
            })
            .collect();
        let out = visual::graph_convolution(&mut t, &gp, q, &objs, &scaled)?;
        let mut acc = None;
        for (i, &m) in out.mixed.iter().enumerate() {
            let term = probe_loss(&mut t, seed, &format!("mix{i}"), m)?;
            acc = Some(match acc {
                None => term,
                Some(a) => t.add(a, term)?,
            });
        }
        finish(&mut t, acc.unwrap(), want)
    })?);

    // per-object appearance/relation gates
    let mut p = ModelParams::new();
    p.insert_weight("f.w_gate", 2 * d, 2 * d, seed + 17)?;
    p.insert_vector("f.b_gate", 2 * d, seed + 18)?;
    p.insert_weight("f.w_fuse", d, 2 * d, seed + 19)?;
    p.insert_vector("f.b_fuse", d, seed + 20)?;
    rows.push(row("op/object_gate_fusion", &p, |p, want| {
        let mut t = Tape::new();
        let fp = gate_pair(&mut t, p, "f")?;
        let objs: Vec<TensorId> = (0..n)
            .map(|i| t.constant_vec(probe(seed, &format!("fo{i}"), d)))
            .collect();
        let mixed: Vec<TensorId> = (0..n)
            .map(|i| t.constant_vec(probe(seed, &format!("fm{i}"), d)))
            .collect();
        let out = visual::object_gate_fusion(&mut t, &fp, &objs, &mixed)?;
        let mut acc = None;
        for (i, g) in out.iter().enumerate() {
            let term = probe_loss(&mut t, seed, &format!("fused{i}"), g.fused)?;
            acc = Some(match acc {
                None => term,
                Some(a) => t.add(a, term)?,
            });
        }
        finish(&mut t, acc.unwrap(), want)
    })?);

    // question-to-object attention
    let mut p = ModelParams::new();
    p.insert_weight("o.w_key", d, d, seed + 21)?;
    p.insert_weight("o.w_score", 1, d, seed + 22)?;
    p.insert_vector("o.b_score", 1, seed + 23)?;
    rows.push(row("op/object_attention", &p, |p, want| {
        let mut t = Tape::new();
        let op = ObjectAttentionParams {
            w_key: t.param("o.w_key", p.get("o.w_key")?)?,
            w_score: t.param("o.w_score", p.get("o.w_score")?)?,
            b_score: t.param("o.b_score", p.get("o.b_score")?)?,
        };
        let q = t.constant_vec(probe(seed, "oq", d));
        let keys: Vec<TensorId> = (0..n)
            .map(|i| t.constant_vec(probe(seed, &format!("ok{i}"), d)))
            .collect();
        let out = visual::object_attention(&mut t, &op, q, &keys, &keys)?;
        let loss = probe_loss(&mut t, seed, "osum", out.summary)?;
        finish(&mut t, loss, want)
    })?);

    // attention over the global and local captions
    let mut p = ModelParams::new();
    p.insert_weight("c.w_query", d, d, seed + 24)?;
    p.insert_vector("c.b_query", d, seed + 25)?;
    p.insert_weight("c.w_key", d, d, seed + 26)?;
    p.insert_vector("c.b_key", d, seed + 27)?;
    let cap_params = |t: &mut Tape, p: &ModelParams| -> Result<CaptionAttentionParams> {
        Ok(CaptionAttentionParams {
            w_query: t.param("c.w_query", p.get("c.w_query")?)?,
            b_query: t.param("c.b_query", p.get("c.b_query")?)?,
            w_key: t.param("c.w_key", p.get("c.w_key")?)?,
            b_key: t.param("c.b_key", p.get("c.b_key")?)?,
        })
    };
    rows.push(row("op/caption_attention", &p, |p, want| {
        let mut t = Tape::new();
        let cp = cap_params(&mut t, p)?;
        let q = t.constant_vec(probe(seed, "cq", d));
        let global = t.constant_vec(probe(seed, "cg", d));
        let locals: Vec<TensorId> = (0..n)
            .map(|i| t.constant_vec(probe(seed, &format!("cl{i}"), d)))
            .collect();
        let out = semantic::caption_attention(&mut t, &cp, q, global, &locals)?;
        let a = probe_loss(&mut t, seed, "cglob", out.global_scaled)?;
        let b = probe_loss(&mut t, seed, "clocs", out.locals_combined)?;
        let loss = t.add(a, b)?;
        finish(&mut t, loss, want)
    })?);
    rows.push(row("op/local_caption_attention", &p, |p, want| {
        let mut t = Tape::new();
        let cp = cap_params(&mut t, p)?;
        let q = t.constant_vec(probe(seed, "lq", d));
        let locals: Vec<TensorId> = (0..n)
            .map(|i| t.constant_vec(probe(seed, &format!("ll{i}"), d)))
            .collect();
        let (_, combined) = semantic::local_caption_attention(&mut t, &cp, q, &locals)?;
        let loss = probe_loss(&mut t, seed, "lsum", combined)?;
        finish(&mut t, loss, want)
    })?);

    Ok(rows)
}

/// A dataset and model small enough that full central differencing over
/// every parameter entry stays under a minute.
pub fn micro_config(seed: u64) -> RunConfig {
    let dataset = DatasetConfig {
        n_train: 1,
        n_val: 1,
        rounds: 3,
        n_objects: 4,
        n_dense: 3,
        n_cand: 5,
        d_obj: 8,
        d_rel: 4,
        seed,
    };
    let dims = ModelDims {
        d_obj: 8,
        d_rel: 4,
        d_word: 4,
        d_hid: 8,
        d_att: 8,
        d_fuse: 8,
        n_objects: 4,
        n_dense: 3,
        n_cand: 5,
        max_len: 8,
        vocab_size: dataset.vocab().len(),
        second_source: true,
        dropout: 0.0,
    };
    RunConfig {
        variant: ModelVariant::DualVd.name().to_string(),
        seed,
        epochs: 1,
        batch_size: 2,
        dataset,
        dims,
        schedule: crate::optim::LrSchedule::default(),
    }
}

fn end_to_end_checks(seed: u64) -> Result<Vec<BatteryRow>> {
    let cfg = micro_config(seed);
    let (records, _) = crate::synth::generate_split(&cfg.dataset)?;
    let instances = instances_from_all(&records, cfg.dims.max_len);
    let inst = instances
        .last()
        .ok_or_else(|| Error::Config("micro dataset produced no instances".into()))?;
    let mut rows = Vec::with_capacity(ALL_VARIANTS.len());
    for v in ALL_VARIANTS {
        let model = crate::fusion::Model::new(cfg.dims.clone(), v)?;
        let params = model.init_params(seed)?;
        rows.push(row(
            &format!("end_to_end/{}", v.name()),
            &params,
            |p, want| {
                let (mut tape, out) = model.forward_single(p, inst, None)?;
                let grads = if want {
                    tape.backward(out.loss)?;
                    Some(tape.param_grads())
                } else {
                    None
                };
                Ok(LossEval {
                    loss: out.loss_value,
                    grads,
                })
            },
        )?);
    }
    Ok(rows)
}

/// Runs the full battery. Deterministic in `seed`.
pub fn run(seed: u64) -> Result<Vec<BatteryRow>> {
    let mut rows = op_checks(seed)?;
    rows.extend(end_to_end_checks(seed)?);
    Ok(rows)
}
