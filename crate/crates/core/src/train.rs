//! Training loop, evaluation pass, and the variant ablation sweep.
//!
//! Training is strictly sequential over mini-batches so a (config, seed)
//! pair always produces bit-identical parameters. Per-epoch shuffles and
//! dropout masks come from dedicated named random streams. Evaluation
//! runs read-only forward passes in parallel, collected back in input
//! order, so it never perturbs determinism.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{instances_from_all, DialogueInstance, DialogueRecord, Modality};
use crate::error::{Error, Result};
use crate::fusion::{GateTrace, Model, ModelVariant};
use crate::metrics::{compute_metrics, relevance_by_rank, EvalRecord, Metrics, PredictionRecord};
use crate::optim::Adam;
use crate::params::ModelParams;
use crate::rng;
use crate::synth::shuffle;

/// Caps the global rayon pool from the `DUALVD_THREADS` variable.
/// Call once at process start, before any parallel work.
pub fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var("DUALVD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| {
            Error::Config(format!(
                "DUALVD_THREADS must be a positive integer, got `{raw}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// recall@1 over the training questions, dropout disabled
    pub train_r1: f64,
    /// validation metrics, when a validation split was supplied
    pub val_mrr: Option<f64>,
    pub val_r1: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// where to write train_log.csv and per-epoch checkpoints
    pub out_dir: Option<PathBuf>,
    /// stop once train recall@1 reaches this value
    pub stop_at_r1: Option<f64>,
}

pub struct TrainResult {
    pub params: ModelParams,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, &format!("train/epoch/{epoch}"));
    shuffle(&mut rng, &mut order);
    order
}

/// Fraction of instances whose ground-truth candidate ranks first.
pub fn recall_at_1(model: &Model, params: &ModelParams, instances: &[DialogueInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Config("no instances to score".into()));
    }
    let hits: Result<Vec<bool>> = instances
        .par_iter()
        .map(|inst| {
            let (_, out) = model.forward_single(params, inst, None)?;
            Ok(out.rank_of_gt(inst.gt_index) == 1)
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

/// Ranking metrics over instances, dropout disabled.
pub fn score_instances(
    model: &Model,
    params: &ModelParams,
    instances: &[DialogueInstance],
) -> Result<Metrics> {
    let records: Result<Vec<EvalRecord>> = instances
        .par_iter()
        .map(|inst| {
            let (_, out) = model.forward_single(params, inst, None)?;
            Ok(EvalRecord {
                rank_of_gt: out.rank_of_gt(inst.gt_index),
                relevance: Some(relevance_by_rank(&inst.relevance, &out.ranks)?),
            })
        })
        .collect();
    compute_metrics(&records?)
}

/// Trains the configured variant on `records` and returns the learned
/// parameters with per-epoch statistics.
/// Mean loss and mean gradients over one batch. Instances run on
/// independent tapes in parallel; sums fold in batch order, so the result
/// does not depend on the thread schedule.
fn batch_grads(
    model: &Model,
    params: &ModelParams,
    batch: &[&DialogueInstance],
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let per: Result<Vec<(f64, BTreeMap<String, Vec<f64>>)>> = batch
        .par_iter()
        .map(|inst| {
            let (mut tape, out) = model.forward_single(params, inst, None)?;
            tape.backward(out.loss)?;
            Ok((out.loss_value, tape.param_grads()))
        })
        .collect();
    let per = per?;
    let scale = 1.0 / per.len() as f64;
    let mut loss = 0.0;
    let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (value, g) in per {
        loss += value;
        for (name, vec) in g {
            match grads.get_mut(&name) {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&vec) {
                        *a += v;
                    }
                }
                None => {
                    grads.insert(name, vec);
                }
            }
        }
    }
    for vec in grads.values_mut() {
        for v in vec.iter_mut() {
            *v *= scale;
        }
    }
    Ok((loss * scale, grads))
}

pub fn train(
    cfg: &RunConfig,
    records: &[DialogueRecord],
    val: Option<&[DialogueRecord]>,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    cfg.validate()?;
    let model = cfg.model()?;
    let mut params = model.init_params(cfg.seed)?;
    let instances = instances_from_all(records, cfg.dims.max_len);
    if instances.is_empty() {
        return Err(Error::Config("no training instances".into()));
    }
    let val_instances = val.map(|v| instances_from_all(v, cfg.dims.max_len));
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join("train_log.csv"))?;
            writeln!(f, "epoch,lr,train_loss,train_r1,val_mrr,val_r1")?;
            Some(f)
        }
        None => None,
    };

    let mut adam = Adam::new();
    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch)?;
        let order = shuffled_indices(instances.len(), cfg.seed, epoch);
        let mut dropout = rng::stream(cfg.seed, &format!("dropout/epoch/{epoch}"));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DialogueInstance> = chunk.iter().map(|i| &instances[*i]).collect();
            let (loss, grads) = if cfg.dims.dropout > 0.0 {
                let (mut tape, mean_loss, _) =
                    model.forward_batch(&params, &batch, Some(&mut dropout))?;
                let loss = tape.scalar(mean_loss);
                tape.backward(mean_loss)?;
                (loss, tape.param_grads())
            } else {
                batch_grads(&model, &params, &batch)?
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} in epoch {epoch}"
                )));
            }
            adam.step(&mut params, &grads, lr)?;
            loss_sum += loss;
            batches += 1;
        }
        let val_metrics = match &val_instances {
            Some(v) => Some(score_instances(&model, &params, v)?),
            None => None,
        };
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            train_r1: recall_at_1(&model, &params, &instances)?,
            val_mrr: val_metrics.as_ref().map(|m| m.mrr),
            val_r1: val_metrics.as_ref().map(|m| m.recall_at_1),
        };
        if let Some(f) = log.as_mut() {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
            writeln!(
                f,
                "{},{:.10e},{:.10e},{:.6},{},{}",
                stats.epoch,
                stats.lr,
                stats.train_loss,
                stats.train_r1,
                opt(stats.val_mrr),
                opt(stats.val_r1)
            )?;
        }
        if let Some(dir) = &opts.out_dir {
            checkpoint::save(&dir.join(format!("epoch_{:03}.ckpt", epoch)), &params)?;
        }
        let reached = opts.stop_at_r1.is_some_and(|t| stats.train_r1 >= t);
        history.push(stats);
        if reached {
            break;
        }
    }
    if let Some(dir) = &opts.out_dir {
        checkpoint::save(&dir.join("model.ckpt"), &params)?;
    }
    Ok(TrainResult {
        params,
        epochs_run: history.len(),
        history,
    })
}

/// One evaluated question's gates, as written by gate inspection.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceRecord {
    pub dialogue_id: u64,
    pub round: usize,
    pub modality: Modality,
    pub visual_fraction: Option<f64>,
    pub semantic_fraction: Option<f64>,
    pub trace: GateTrace,
}

pub struct Evaluation {
    pub predictions: Vec<PredictionRecord>,
    pub traces: Vec<TraceRecord>,
    pub metrics: Metrics,
}

/// Scores every question of `records` with dropout disabled.
pub fn evaluate(
    model: &Model,
    params: &ModelParams,
    records: &[DialogueRecord],
    max_len: usize,
) -> Result<Evaluation> {
    let instances = instances_from_all(records, max_len);
    if instances.is_empty() {
        return Err(Error::Config("no instances to evaluate".into()));
    }
    let rows: Result<Vec<(PredictionRecord, TraceRecord)>> = instances
        .par_iter()
        .map(|inst| {
            let (_, out) = model.forward_single(params, inst, None)?;
            let pred = PredictionRecord {
                dialogue_id: inst.dialogue_id,
                round: inst.round,
                modality: inst.modality,
                gt_index: inst.gt_index,
                rank_of_gt: out.rank_of_gt(inst.gt_index),
                ranks: out.ranks.clone(),
                probs: out.probs.clone(),
                relevance: relevance_by_rank(&inst.relevance, &out.ranks)?,
            };
            let trace = TraceRecord {
                dialogue_id: inst.dialogue_id,
                round: inst.round,
                modality: inst.modality,
                visual_fraction: out.trace.visual_fraction(),
                semantic_fraction: out.trace.semantic_fraction(),
                trace: out.trace,
            };
            Ok((pred, trace))
        })
        .collect();
    let (predictions, traces): (Vec<_>, Vec<_>) = rows?.into_iter().unzip();
    let eval_records: Vec<EvalRecord> = predictions.iter().map(|p| p.to_eval_record()).collect();
    let metrics = compute_metrics(&eval_records)?;
    Ok(Evaluation {
        predictions,
        traces,
        metrics,
    })
}

pub fn save_traces(path: &Path, traces: &[TraceRecord]) -> Result<()> {
    use std::io::BufWriter;
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in traces {
        writeln!(w, "{}", crate::data::to_json_line(t)?)?;
    }
    w.flush()?;
    Ok(())
}

/// One variant's outcome in the ablation sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub epochs_run: usize,
    pub train_loss: f64,
    pub train_r1: f64,
    pub val_mrr: f64,
    pub val_r1: f64,
    pub val_r5: f64,
    pub val_r10: f64,
    pub val_mean_rank: f64,
    pub val_ndcg: Option<f64>,
}

/// Trains the listed variants under the same budget and scores each on
/// the validation split, in the order given. Writes ablation.csv and
/// ablation.json when given an output directory.
pub fn ablate(
    cfg: &RunConfig,
    variants: &[ModelVariant],
    train_set: &[DialogueRecord],
    val_set: &[DialogueRecord],
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("ablation needs at least one epoch".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut c = cfg.clone();
        c.variant = v.name().to_string();
        let result = train(&c, train_set, None, &TrainOptions::default())?;
        let model = c.model()?;
        let eval = evaluate(&model, &result.params, val_set, c.dims.max_len)?;
        let last = result.history.last().expect("at least one epoch");
        rows.push(AblationRow {
            variant: v.name().to_string(),
            epochs_run: result.epochs_run,
            train_loss: last.train_loss,
            train_r1: last.train_r1,
            val_mrr: eval.metrics.mrr,
            val_r1: eval.metrics.recall_at_1,
            val_r5: eval.metrics.recall_at_5,
            val_r10: eval.metrics.recall_at_10,
            val_mean_rank: eval.metrics.mean_rank,
            val_ndcg: eval.metrics.ndcg,
        });
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut csv = String::from(
            "variant,epochs_run,train_loss,train_r1,val_mrr,val_r1,val_r5,val_r10,val_mean_rank,val_ndcg\n",
        );
        for r in &rows {
            let ndcg = r
                .val_ndcg
                .map_or_else(|| "".to_string(), |v| format!("{v:.6}"));
            csv.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                r.variant,
                r.epochs_run,
                r.train_loss,
                r.train_r1,
                r.val_mrr,
                r.val_r1,
                r.val_r5,
                r.val_r10,
                r.val_mean_rank,
                ndcg
            ));
        }
        fs::write(dir.join("ablation.csv"), csv)?;
        let json = serde_json::to_string_pretty(&rows)? + "\n";
        fs::write(dir.join("ablation.json"), json)?;
    }
    Ok(rows)
}
