use std::time::Instant;

use dualvd::config::RunConfig;
use dualvd::data::Modality;
use dualvd::synth::generate_split;
use dualvd::train::{evaluate, train, TrainOptions};

#[test]
#[ignore]
fn probe_gate_separation() {
    let mut cfg = RunConfig::desk(42);
    cfg.epochs = 120;
    cfg.schedule = cfg.schedule.with_total(120);
    let (train_set, _) = generate_split(&cfg.dataset).expect("generate");
    let dir = tempfile::tempdir().expect("tempdir");
    let started = Instant::now();
    let opts = TrainOptions { out_dir: Some(dir.path().to_path_buf()), stop_at_r1: None };
    let result = train(&cfg, &train_set, None, &opts).expect("train");
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "trained {} epochs in {elapsed:.0}s ({:.2}s/epoch)",
        result.epochs_run,
        elapsed / result.epochs_run as f64
    );
    let first: Vec<f64> = result.history[..6].iter().map(|e| e.train_loss).collect();
    println!("first losses {first:?}");
    let r1s: Vec<f64> = result.history.iter().map(|e| e.train_r1).collect();
    let crossed = r1s.iter().position(|r| *r >= 0.95);
    println!("r1 crossed 0.95 at epoch {crossed:?}");

    let model = cfg.model().expect("model");
    for epoch in [0usize, 9, 19, 39, 59, 79, 99, 119] {
        let path = dir.path().join(format!("epoch_{epoch:03}.ckpt"));
        let params = dualvd::checkpoint::load(&path).expect("ckpt");
        let eval = evaluate(&model, &params, &train_set, cfg.dims.max_len).expect("eval");
        let stats = |m: Modality| -> (f64, f64, f64, f64) {
            let vals: Vec<f64> = eval
                .traces
                .iter()
                .filter(|t| t.modality == m)
                .filter_map(|t| t.semantic_fraction)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (mean, var.sqrt(), lo, hi)
        };
        let (sm, ss, slo, shi) = stats(Modality::Semantic);
        let (vm, vs, vlo, vhi) = stats(Modality::Visual);
        let r1 = result.history[epoch].train_r1;
        println!(
            "epoch {epoch:3}: r1 {r1:.3} sem mean {sm:.4} sd {ss:.4} [{slo:.3},{shi:.3}] | vis mean {vm:.4} sd {vs:.4} [{vlo:.3},{vhi:.3}] | sep {:.4}",
            sm - vm
        );
    }
}
