//! Release gate. Each numbered criterion prints exactly one PASS or FAIL
//! line (run with --nocapture to watch them as they finish); the test
//! fails if any criterion fails.

use std::fs;
use std::process::Command;
use std::time::Instant;

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha12Rng;

use dualvd::battery;
use dualvd::config::RunConfig;
use dualvd::data::{instances_from, DialogueRecord, Modality};
use dualvd::fusion::{rank_descending, Model, ModelDims, ModelVariant, ALL_VARIANTS};
use dualvd::metrics::{compute_metrics, EvalRecord};
use dualvd::optim::LrSchedule;
use dualvd::rng;
use dualvd::synth::{generate_dialogue, generate_split, DatasetConfig};
use dualvd::tape::Tape;
use dualvd::train::{evaluate, train, TrainOptions, TrainResult};

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn new() -> Self {
        Gate { failures: Vec::new() }
    }

    fn report(&mut self, number: usize, name: &str, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {number} ({name}): {verdict} ({detail})");
        if !ok {
            self.failures.push(format!("criterion {number} ({name}): {detail}"));
        }
    }
}

fn unit(r: &mut ChaCha12Rng) -> f64 {
    rng::unit_f64(r.next_u64())
}

fn pick(r: &mut ChaCha12Rng, lo: usize, hi: usize) -> usize {
    lo + (r.next_u64() % (hi - lo + 1) as u64) as usize
}

fn strictly_inside_unit(v: &[f64]) -> bool {
    v.iter().all(|g| *g > 0.0 && *g < 1.0)
}

// ── 1: gradient fidelity ─────────────────────────────────────────────

fn check_gradients(gate: &mut Gate) {
    let started = Instant::now();
    let rows = battery::run(42).expect("gradient battery");
    let elapsed = started.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.max_rel_err).fold(0.0_f64, f64::max);
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.check.as_str())
        .collect();
    let ok = failed.is_empty() && worst <= 1e-5 && elapsed < 60.0;
    let mut detail = format!(
        "{} checks, max rel err {worst:.2e}, {elapsed:.1}s",
        rows.len()
    );
    if !failed.is_empty() {
        detail.push_str(&format!(", failed: {failed:?}"));
    }
    gate.report(1, "gradient fidelity", ok, detail);
}

// ── 2: normalization and invariance ──────────────────────────────────

fn check_normalization(gate: &mut Gate) {
    let mut worst_sum = 0.0_f64;
    let mut worst_shift = 0.0_f64;
    let mut gate_violations = 0usize;
    let mut rank_violations = 0usize;
    let mut offenders: Vec<String> = Vec::new();
    for i in 0..1000u64 {
        let mut r = rng::stream(0x9a7e, &format!("acceptance/config/{i}"));
        let dataset = DatasetConfig {
            n_train: 1,
            n_val: 1,
            rounds: pick(&mut r, 1, 3),
            n_objects: pick(&mut r, 5, 8),
            n_dense: pick(&mut r, 2, 4),
            n_cand: pick(&mut r, 3, 8),
            d_obj: pick(&mut r, 2, 8),
            d_rel: pick(&mut r, 2, 6),
            seed: i,
        };
        dataset.validate().expect("dataset config");
        let vocab = dataset.vocab();
        let dims = ModelDims {
            d_obj: dataset.d_obj,
            d_rel: dataset.d_rel,
            d_word: pick(&mut r, 2, 6),
            d_hid: pick(&mut r, 2, 8),
            d_att: pick(&mut r, 2, 8),
            d_fuse: pick(&mut r, 2, 8),
            n_objects: dataset.n_objects,
            n_dense: dataset.n_dense,
            n_cand: dataset.n_cand,
            max_len: pick(&mut r, 4, 8),
            vocab_size: vocab.len(),
            second_source: true,
            dropout: 0.0,
        };
        let variant = ALL_VARIANTS[(i % 8) as usize];
        let model = Model::new(dims.clone(), variant).expect("model");
        let params = model.init_params(i).expect("init");
        let record = generate_dialogue(&dataset, &vocab, i);
        let insts = instances_from(&record, dims.max_len);
        let inst = insts.last().expect("instance");
        let (_, out) = model.forward_single(&params, inst, None).expect("forward");

        let trace = &out.trace;
        let mut dists: Vec<(&str, Vec<f64>)> = vec![("probs", out.probs.clone())];
        if let Some(alpha) = &trace.relation_attention {
            dists.push(("alpha", alpha.iter().flatten().copied().collect()));
        }
        if let Some(beta) = &trace.neighbor_attention {
            for row in beta {
                dists.push(("beta row", row.clone()));
            }
        }
        if let Some(gamma) = &trace.object_attention {
            dists.push(("gamma", gamma.clone()));
        }
        if let Some(delta) = &trace.caption_attention {
            dists.push(("delta", delta.clone()));
        }
        for (name, v) in dists {
            let dev = (v.iter().sum::<f64>() - 1.0).abs();
            worst_sum = worst_sum.max(dev);
            if dev > 1e-10 {
                offenders.push(format!("config {i} {name} off by {dev:.2e}"));
            }
        }

        let mut gates: Vec<&Vec<f64>> = Vec::new();
        if let Some(g) = &trace.question_gate {
            gates.push(g);
        }
        if let Some(rows) = &trace.object_gates {
            gates.extend(rows.iter());
        }
        if let Some(g) = &trace.caption_gate {
            gates.push(g);
        }
        if let Some(g) = &trace.fusion_gate {
            gates.push(g);
        }
        if !gates.iter().all(|g| strictly_inside_unit(g)) {
            gate_violations += 1;
        }

        let len = pick(&mut r, 2, 8);
        let x: Vec<f64> = (0..len).map(|_| 10.0 * unit(&mut r) - 5.0).collect();
        let c = 20.0 * unit(&mut r) - 10.0;
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let mut tape = Tape::new();
        let a = tape.constant_vec(x);
        let sa = tape.softmax(a).expect("softmax");
        let pa = tape.value(sa).to_vec();
        let b = tape.constant_vec(shifted);
        let sb = tape.softmax(b).expect("softmax");
        let pb = tape.value(sb).to_vec();
        let shift_dev = pa
            .iter()
            .zip(&pb)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0_f64, f64::max);
        worst_shift = worst_shift.max(shift_dev);

        let scores: Vec<f64> = (0..dims.n_cand).map(|_| 6.0 * unit(&mut r) - 3.0).collect();
        let scale = 0.2 + 2.8 * unit(&mut r);
        let offset = 20.0 * unit(&mut r) - 10.0;
        let affine: Vec<f64> = scores.iter().map(|s| scale * s + offset).collect();
        let exped: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let base = rank_descending(&scores);
        if rank_descending(&affine) != base || rank_descending(&exped) != base {
            rank_violations += 1;
        }
    }
    let ok = offenders.is_empty()
        && gate_violations == 0
        && rank_violations == 0
        && worst_shift <= 1e-12;
    offenders.truncate(3);
    let mut detail = format!(
        "1000 configs, worst dist-sum dev {worst_sum:.2e}, worst softmax shift dev {worst_shift:.2e}, gate violations {gate_violations}, rank violations {rank_violations}"
    );
    if !offenders.is_empty() {
        detail.push_str(&format!(", first offenders {offenders:?}"));
    }
    gate.report(2, "normalization and invariance", ok, detail);
}

// ── 3: metric oracle agreement ───────────────────────────────────────

fn dcg_at(relevance: &[f64], k: usize) -> f64 {
    let mut sum = 0.0;
    for (i, rel) in relevance.iter().take(k).enumerate() {
        sum += rel / ((i as f64) + 2.0).log2();
    }
    sum
}

fn check_metric_oracle(gate: &mut Gate) {
    let mut r = rng::stream(0x9a7e, "acceptance/metrics");
    let mut records = Vec::with_capacity(200);
    for _ in 0..200 {
        let n_cand = pick(&mut r, 2, 12);
        let rank_of_gt = pick(&mut r, 1, n_cand);
        let relevance = (r.next_u64() % 2 == 0).then(|| {
            (0..n_cand)
                .map(|_| if r.next_u64() % 3 == 0 { 0.0 } else { unit(&mut r) })
                .collect::<Vec<f64>>()
        });
        records.push(EvalRecord { rank_of_gt, relevance });
    }
    let got = compute_metrics(&records).expect("metrics");

    let n = records.len() as f64;
    let mut mrr = 0.0;
    let mut r1 = 0.0;
    let mut r5 = 0.0;
    let mut r10 = 0.0;
    let mut mean = 0.0;
    let mut ndcg_sum = 0.0;
    let mut ndcg_n = 0usize;
    for rec in &records {
        let rank = rec.rank_of_gt as f64;
        mrr += 1.0 / rank;
        if rec.rank_of_gt <= 1 {
            r1 += 1.0;
        }
        if rec.rank_of_gt <= 5 {
            r5 += 1.0;
        }
        if rec.rank_of_gt <= 10 {
            r10 += 1.0;
        }
        mean += rank;
        if let Some(rel) = &rec.relevance {
            let k = rel.iter().filter(|v| **v > 0.0).count();
            if k > 0 {
                let mut ideal = rel.clone();
                ideal.sort_by(|a, b| b.total_cmp(a));
                ndcg_sum += dcg_at(rel, k) / dcg_at(&ideal, k);
                ndcg_n += 1;
            }
        }
    }
    let mut deviations = vec![
        (got.mrr - mrr / n).abs(),
        (got.recall_at_1 - r1 / n).abs(),
        (got.recall_at_5 - r5 / n).abs(),
        (got.recall_at_10 - r10 / n).abs(),
        (got.mean_rank - mean / n).abs(),
    ];
    match (got.ndcg, ndcg_n > 0) {
        (Some(v), true) => deviations.push((v - ndcg_sum / ndcg_n as f64).abs()),
        (None, false) => {}
        _ => deviations.push(f64::INFINITY),
    }
    let worst = deviations.iter().fold(0.0_f64, |a, b| a.max(*b));

    let sanity: Vec<EvalRecord> = (0..1000)
        .map(|_| EvalRecord { rank_of_gt: pick(&mut r, 1, 10), relevance: None })
        .collect();
    let random_mrr = compute_metrics(&sanity).expect("metrics").mrr;
    let in_band = (0.25..=0.35).contains(&random_mrr);

    let ok = worst <= 1e-12 && in_band;
    gate.report(
        3,
        "metric oracle agreement",
        ok,
        format!("200 records, max oracle deviation {worst:.2e}, random-rank MRR {random_mrr:.4} over 1000 questions"),
    );
}

// ── 4: desk overfit ──────────────────────────────────────────────────

fn check_overfit(gate: &mut Gate) -> (RunConfig, TrainResult, Vec<DialogueRecord>) {
    let mut cfg = RunConfig::desk(42);
    cfg.epochs = 300;
    cfg.schedule = cfg.schedule.with_total(300);
    let (train_set, _) = generate_split(&cfg.dataset).expect("generate");

    let started = Instant::now();
    let opts = TrainOptions { out_dir: None, stop_at_r1: Some(0.95) };
    let result = train(&cfg, &train_set, None, &opts).expect("train");
    let elapsed = started.elapsed().as_secs_f64();

    let losses: Vec<f64> = if result.history.len() >= 5 {
        result.history[..5].iter().map(|e| e.train_loss).collect()
    } else {
        let mut probe = cfg.clone();
        probe.epochs = 5;
        let head = train(&probe, &train_set, None, &TrainOptions::default()).expect("train");
        head.history.iter().map(|e| e.train_loss).collect()
    };
    let decreasing = losses.windows(2).all(|w| w[1] < w[0]);
    let final_r1 = result.history.last().expect("history").train_r1;
    let ok = decreasing && final_r1 >= 0.95 && result.epochs_run <= 300 && elapsed < 300.0;
    gate.report(
        4,
        "desk overfit",
        ok,
        format!(
            "train R@1 {final_r1:.3} after {} epochs in {elapsed:.0}s, first-5 losses {} decreasing",
            result.epochs_run,
            if decreasing { "strictly" } else { "NOT strictly" }
        ),
    );
    (cfg, result, train_set)
}

// ── 5: full model beats single branches ──────────────────────────────

fn check_ablation_ordering(
    gate: &mut Gate,
    cfg: &RunConfig,
    dualvd: &TrainResult,
    train_set: &[DialogueRecord],
) {
    let full_r1 = dualvd.history.last().expect("history").train_r1;
    let mut rows = Vec::new();
    for variant in [ModelVariant::GlCap, ModelVariant::LoCap, ModelVariant::ObjRep] {
        let mut single = cfg.clone();
        single.variant = variant.name().to_string();
        single.epochs = dualvd.epochs_run;
        let result = train(&single, train_set, None, &TrainOptions::default()).expect("train");
        rows.push((variant.name(), result.history.last().expect("history").train_r1));
    }
    let best = rows.iter().map(|(_, r1)| *r1).fold(0.0_f64, f64::max);
    let ok = full_r1 >= best;
    let summary: Vec<String> = rows.iter().map(|(n, r1)| format!("{n} {r1:.3}")).collect();
    gate.report(
        5,
        "single-branch ordering",
        ok,
        format!(
            "DualVD train R@1 {full_r1:.3} vs {} at {} epochs",
            summary.join(", "),
            dualvd.epochs_run
        ),
    );
}

// ── 6: gate diagnostic ───────────────────────────────────────────────

fn check_gate_diagnostic(
    gate: &mut Gate,
    cfg: &RunConfig,
    trained: &TrainResult,
    train_set: &[DialogueRecord],
) {
    let model = cfg.model().expect("model");
    let eval = evaluate(&model, &trained.params, train_set, cfg.dims.max_len).expect("evaluate");
    let mean_for = |m: Modality| -> f64 {
        let vals: Vec<f64> = eval
            .traces
            .iter()
            .filter(|t| t.modality == m)
            .filter_map(|t| t.semantic_fraction)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    let semantic = mean_for(Modality::Semantic);
    let visual = mean_for(Modality::Visual);
    let separation = semantic - visual;
    let ok = separation >= 0.05;
    gate.report(
        6,
        "gate diagnostic",
        ok,
        format!(
            "mean semantic fraction {semantic:.3} on semantic questions vs {visual:.3} on visual, separation {separation:.3}"
        ),
    );
}

// ── 7: schedule anchors ──────────────────────────────────────────────

fn check_schedule(gate: &mut Gate) {
    let schedule = LrSchedule::default().with_total(10);
    let midpoint =
        schedule.warmup_epochs + (schedule.total_epochs - schedule.warmup_epochs) / 2;
    let anchors = [
        (0, 2e-4),
        (schedule.warmup_epochs, 1e-3),
        (midpoint, (1e-3 + 3.4e-4) / 2.0),
        (schedule.total_epochs, 3.4e-4),
    ];
    let mut worst = 0.0_f64;
    for (epoch, want) in anchors {
        let got = schedule.lr_at(epoch).expect("lr");
        worst = worst.max((got - want).abs());
    }
    let ok = worst <= 1e-12;
    gate.report(7, "schedule anchors", ok, format!("max anchor deviation {worst:.2e}"));
}

// ── 8: byte-identical reruns ─────────────────────────────────────────

fn check_determinism(gate: &mut Gate) {
    let bin = env!("CARGO_BIN_EXE_dualvd");
    let dir = tempfile::tempdir().expect("tempdir");
    let mut cfg = RunConfig::desk(7);
    cfg.dataset.n_train = 8;
    cfg.dataset.n_val = 4;
    cfg.dataset.rounds = 4;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).expect("json")).expect("write");

    let files = [
        "model.ckpt",
        "epoch_000.ckpt",
        "epoch_001.ckpt",
        "epoch_002.ckpt",
        "train_log.csv",
        "metrics.json",
        "metrics.csv",
        "predictions.jsonl",
        "traces.jsonl",
    ];
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    for name in ["one", "two"] {
        let out = dir.path().join(name);
        for sub in ["train", "eval"] {
            let status = Command::new(bin)
                .arg(sub)
                .arg("--config")
                .arg(&cfg_path)
                .arg("--out")
                .arg(&out)
                .output()
                .expect("spawn");
            assert!(
                status.status.success(),
                "{sub} run failed: {}",
                String::from_utf8_lossy(&status.stderr)
            );
        }
        runs.push(
            files
                .iter()
                .map(|f| fs::read(out.join(f)).expect("artifact"))
                .collect(),
        );
    }
    let mismatched: Vec<&str> = files
        .iter()
        .zip(runs[0].iter().zip(runs[1].iter()))
        .filter(|(_, (a, b))| a != b)
        .map(|(f, _)| *f)
        .collect();
    let ok = mismatched.is_empty();
    let detail = if ok {
        format!("{} artifacts byte-identical across two runs", files.len())
    } else {
        format!("artifacts differ: {mismatched:?}")
    };
    gate.report(8, "byte-identical reruns", ok, detail);
}

#[test]
fn acceptance() {
    let mut gate = Gate::new();
    check_gradients(&mut gate);
    check_normalization(&mut gate);
    check_metric_oracle(&mut gate);
    let (cfg, result, train_set) = check_overfit(&mut gate);
    check_ablation_ordering(&mut gate, &cfg, &result, &train_set);
    check_gate_diagnostic(&mut gate, &cfg, &result, &train_set);
    check_schedule(&mut gate);
    check_determinism(&mut gate);
    assert!(
        gate.failures.is_empty(),
        "failed criteria:\n{}",
        gate.failures.join("\n")
    );
}
