//! Retrieval metrics over ranked answer candidates.
//!
//! Each evaluated question contributes the rank its ground-truth answer
//! received (1 = best) and, optionally, the relevance of every candidate
//! listed in model-rank order (entry 0 belongs to the candidate ranked
//! first). Aggregation averages per-question values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// 1-based rank of the ground-truth candidate
    pub rank_of_gt: usize,
    /// candidate relevances in model-rank order, when annotated
    pub relevance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub mean_rank: f64,
    /// absent when no record carried relevance annotations
    pub ndcg: Option<f64>,
    pub count: usize,
}

/// (name, higher_is_better) for every reported metric.
pub const METRIC_DIRECTIONS: [(&str, bool); 6] = [
    ("mrr", true),
    ("recall_at_1", true),
    ("recall_at_5", true),
    ("recall_at_10", true),
    ("mean_rank", false),
    ("ndcg", true),
];

/// Discounted cumulative gain of relevances read in rank order, cut at k.
fn dcg(relevance: &[f64], k: usize) -> f64 {
    relevance
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, rel)| rel / ((i + 2) as f64).log2())
        .sum()
}

/// Gain of the model ranking normalized by the ideal ranking, cut at the
/// number of positively relevant candidates. None when nothing is relevant.
pub fn ndcg_of(relevance_by_rank: &[f64]) -> Option<f64> {
    let k = relevance_by_rank.iter().filter(|r| **r > 0.0).count();
    if k == 0 {
        return None;
    }
    let mut ideal = relevance_by_rank.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Some(dcg(relevance_by_rank, k) / dcg(&ideal, k))
}

pub fn compute_metrics(records: &[EvalRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::Config("no evaluation records".into()));
    }
    let n = records.len() as f64;
    let mut mrr = 0.0;
    let mut r1 = 0.0;
    let mut r5 = 0.0;
    let mut r10 = 0.0;
    let mut mean = 0.0;
    let mut ndcg_sum = 0.0;
    let mut ndcg_n = 0usize;
    for rec in records {
        if rec.rank_of_gt == 0 {
            return Err(Error::Domain("ranks are 1-based".into()));
        }
        let r = rec.rank_of_gt as f64;
        mrr += 1.0 / r;
        r1 += (rec.rank_of_gt <= 1) as u32 as f64;
        r5 += (rec.rank_of_gt <= 5) as u32 as f64;
        r10 += (rec.rank_of_gt <= 10) as u32 as f64;
        mean += r;
        if let Some(rel) = &rec.relevance {
            if rel.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::Domain("relevance must be finite and non-negative".into()));
            }
            if let Some(v) = ndcg_of(rel) {
                ndcg_sum += v;
                ndcg_n += 1;
            }
        }
    }
    Ok(Metrics {
        mrr: mrr / n,
        recall_at_1: r1 / n,
        recall_at_5: r5 / n,
        recall_at_10: r10 / n,
        mean_rank: mean / n,
        ndcg: (ndcg_n > 0).then(|| ndcg_sum / ndcg_n as f64),
        count: records.len(),
    })
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("mrr,{:.6}\n", self.mrr));
        out.push_str(&format!("recall_at_1,{:.6}\n", self.recall_at_1));
        out.push_str(&format!("recall_at_5,{:.6}\n", self.recall_at_5));
        out.push_str(&format!("recall_at_10,{:.6}\n", self.recall_at_10));
        out.push_str(&format!("mean_rank,{:.6}\n", self.mean_rank));
        if let Some(v) = self.ndcg {
            out.push_str(&format!("ndcg,{v:.6}\n"));
        }
        out.push_str(&format!("count,{}\n", self.count));
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

// ── per-question prediction records ──────────────────────────────────

/// One evaluated question as written to the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: u64,
    pub round: usize,
    pub modality: Modality,
    pub gt_index: usize,
    pub rank_of_gt: usize,
    /// rank assigned to each candidate, in candidate order
    pub ranks: Vec<usize>,
    /// per-candidate probabilities, in candidate order
    pub probs: Vec<f64>,
    /// candidate relevances reordered by model rank
    pub relevance: Vec<f64>,
}

impl PredictionRecord {
    pub fn to_eval_record(&self) -> EvalRecord {
        EvalRecord {
            rank_of_gt: self.rank_of_gt,
            relevance: Some(self.relevance.clone()),
        }
    }
}

/// Reorders candidate-order relevances so entry i belongs to the
/// candidate the model put at rank i + 1.
pub fn relevance_by_rank(relevance: &[f64], ranks: &[usize]) -> Result<Vec<f64>> {
    if relevance.len() != ranks.len() {
        return Err(Error::Dimension(format!(
            "{} relevances for {} ranks",
            relevance.len(),
            ranks.len()
        )));
    }
    let mut out = vec![0.0; relevance.len()];
    let mut seen = vec![false; relevance.len()];
    for (cand, &rank) in ranks.iter().enumerate() {
        if rank == 0 || rank > ranks.len() || seen[rank - 1] {
            return Err(Error::Domain("ranks must be a 1-based permutation".into()));
        }
        seen[rank - 1] = true;
        out[rank - 1] = relevance[cand];
    }
    Ok(out)
}

pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for record in records {
        writeln!(w, "{}", data::to_json_line(record)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        out.push(record);
    }
    Ok(out)
}
