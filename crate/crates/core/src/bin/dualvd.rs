//! Command-line entry points: dataset generation, training, evaluation,
//! variant ablations, gradient checking, and gate inspection.
//!
//! Every command is a pure function of its flags, input files, and seed;
//! repeated invocations reproduce their outputs byte for byte. Exit codes:
//! 0 ok, 1 failed check, 2 input error, 3 numeric failure.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dualvd::battery;
use dualvd::checkpoint;
use dualvd::config::RunConfig;
use dualvd::data::{load_dialogues, save_dialogues, DialogueRecord};
use dualvd::error::{Error, Result};
use dualvd::fusion::{ModelVariant, ALL_VARIANTS};
use dualvd::metrics::save_predictions;
use dualvd::synth;
use dualvd::train::{self, TrainOptions};

#[derive(Parser)]
#[command(name = "dualvd", version, about = "Dual-channel visual dialogue encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigOpts {
    /// JSON run configuration; wins over --preset
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// named configuration when no file is given
    #[arg(long, default_value = "desk", value_name = "desk|paper")]
    preset: String,
    /// seed override, applied to the model and the dataset
    #[arg(long)]
    seed: Option<u64>,
    /// model variant override
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
}

#[derive(Args)]
struct DataOpts {
    /// directory holding train.jsonl and val.jsonl; when absent the
    /// splits are generated in memory from the configuration
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct EvalOpts {
    /// parameters to score; defaults to OUT/model.ckpt
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// which split to score
    #[arg(long, default_value = "val", value_name = "train|val")]
    split: String,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and validation splits plus the resolved config
    Generate {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// output directory
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Train one variant, checkpointing every epoch
    Train {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        data: DataOpts,
        /// output directory
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Score a checkpoint: metrics, predictions, and gate traces
    Eval {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        eval: EvalOpts,
        /// output directory
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Train and score several variants under one shared budget
    Ablate {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        data: DataOpts,
        /// comma-separated variant names, in table order
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        variants: Vec<String>,
        /// output directory
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Verify analytic gradients against central differences
    Gradcheck {
        /// seed for the checked configurations
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Summarize per-question gate activity as a CSV
    InspectGates {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        eval: EvalOpts,
        /// output directory
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
}

fn resolve(opts: &ConfigOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(&opts.preset, opts.seed.unwrap_or(42))?,
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
        cfg.dataset.seed = seed;
    }
    if let Some(v) = &opts.variant {
        cfg.variant = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_dims(cfg: &RunConfig, records: &[DialogueRecord]) -> Result<()> {
    let Some(r) = records.first() else {
        return Err(Error::Config("dataset is empty".into()));
    };
    let d = &cfg.dims;
    let ok = r.world.obj_feats.len() == d.n_objects
        && r.world.obj_feats.first().is_some_and(|f| f.len() == d.d_obj)
        && r.world.rel_embeds.first().and_then(|row| row.first()).is_some_and(|e| e.len() == d.d_rel)
        && r.dense_caption_tokens.len() == d.n_dense
        && r.rounds.first().is_some_and(|x| x.candidate_tokens.len() == d.n_cand);
    if !ok {
        return Err(Error::Dimension(
            "dataset shapes do not match the configured model dimensions".into(),
        ));
    }
    Ok(())
}

fn load_or_generate(
    cfg: &RunConfig,
    data: &DataOpts,
) -> Result<(Vec<DialogueRecord>, Vec<DialogueRecord>)> {
    match &data.data {
        Some(dir) => {
            let train_set = load_dialogues(&dir.join("train.jsonl"))?;
            let val_set = load_dialogues(&dir.join("val.jsonl"))?;
            for r in train_set.iter().chain(&val_set) {
                r.validate()?;
            }
            check_dims(cfg, &train_set)?;
            Ok((train_set, val_set))
        }
        None => synth::generate_split(&cfg.dataset),
    }
}

fn pick_split<'a>(
    split: &str,
    train_set: &'a [DialogueRecord],
    val_set: &'a [DialogueRecord],
) -> Result<&'a [DialogueRecord]> {
    match split {
        "train" => Ok(train_set),
        "val" => Ok(val_set),
        other => Err(Error::Config(format!(
            "unknown split `{other}`; expected train or val"
        ))),
    }
}

fn cmd_generate(cfg: &RunConfig, out: &PathBuf) -> Result<ExitCode> {
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join("config.json"))?;
    let (train_set, val_set) = synth::generate_split(&cfg.dataset)?;
    save_dialogues(&out.join("train.jsonl"), &train_set)?;
    save_dialogues(&out.join("val.jsonl"), &val_set)?;
    println!(
        "wrote {} train and {} val dialogues to {}",
        train_set.len(),
        val_set.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(cfg: &RunConfig, data: &DataOpts, out: &PathBuf) -> Result<ExitCode> {
    let (train_set, val_set) = load_or_generate(cfg, data)?;
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join("config.json"))?;
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        stop_at_r1: None,
    };
    let result = train::train(cfg, &train_set, Some(&val_set), &opts)?;
    match result.history.last() {
        Some(s) => println!(
            "trained {} for {} epochs: train_loss {:.6}, train_r1 {:.4}, val_mrr {:.4}, val_r1 {:.4}",
            cfg.variant,
            result.epochs_run,
            s.train_loss,
            s.train_r1,
            s.val_mrr.unwrap_or(f64::NAN),
            s.val_r1.unwrap_or(f64::NAN),
        ),
        None => println!("0 epochs requested; checkpoint equals the initialization"),
    }
    Ok(ExitCode::SUCCESS)
}

fn load_model_and_params(
    cfg: &RunConfig,
    eval: &EvalOpts,
    out: &PathBuf,
) -> Result<(dualvd::fusion::Model, dualvd::params::ModelParams)> {
    let path = eval
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("model.ckpt"));
    let params = checkpoint::load(&path)?;
    let model = cfg.model()?;
    let expected = model.init_params(cfg.seed)?;
    if expected.names() != params.names() {
        return Err(Error::Dimension(format!(
            "checkpoint `{}` does not hold this variant's parameter set",
            path.display()
        )));
    }
    for (name, t) in expected.iter() {
        if params.get(name)?.shape != t.shape {
            return Err(Error::Dimension(format!(
                "checkpoint tensor `{name}` has the wrong shape"
            )));
        }
    }
    Ok((model, params))
}

fn cmd_eval(cfg: &RunConfig, data: &DataOpts, eval: &EvalOpts, out: &PathBuf) -> Result<ExitCode> {
    let (train_set, val_set) = load_or_generate(cfg, data)?;
    let records = pick_split(&eval.split, &train_set, &val_set)?;
    let (model, params) = load_model_and_params(cfg, eval, out)?;
    let evaluation = train::evaluate(&model, &params, records, cfg.dims.max_len)?;
    std::fs::create_dir_all(out)?;
    evaluation.metrics.save_json(&out.join("metrics.json"))?;
    std::fs::write(out.join("metrics.csv"), evaluation.metrics.to_csv())?;
    save_predictions(&out.join("predictions.jsonl"), &evaluation.predictions)?;
    train::save_traces(&out.join("traces.jsonl"), &evaluation.traces)?;
    println!(
        "{} split, {} questions: mrr {:.4}, r@1 {:.4}, r@5 {:.4}, r@10 {:.4}, mean_rank {:.2}{}",
        eval.split,
        evaluation.metrics.count,
        evaluation.metrics.mrr,
        evaluation.metrics.recall_at_1,
        evaluation.metrics.recall_at_5,
        evaluation.metrics.recall_at_10,
        evaluation.metrics.mean_rank,
        match evaluation.metrics.ndcg {
            Some(n) => format!(", ndcg {n:.4}"),
            None => String::new(),
        }
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(
    cfg: &RunConfig,
    data: &DataOpts,
    variants: &[String],
    out: &PathBuf,
) -> Result<ExitCode> {
    let chosen: Vec<ModelVariant> = if variants.is_empty() {
        ALL_VARIANTS.to_vec()
    } else {
        variants
            .iter()
            .map(|v| ModelVariant::parse(v))
            .collect::<Result<_>>()?
    };
    let (train_set, val_set) = load_or_generate(cfg, data)?;
    let rows = train::ablate(cfg, &chosen, &train_set, &val_set, Some(out))?;
    println!("variant epochs train_r1 val_mrr val_r1 val_r5 val_r10 val_mean_rank val_ndcg");
    for r in &rows {
        println!(
            "{} {} {:.4} {:.4} {:.4} {:.4} {:.4} {:.2} {}",
            r.variant,
            r.epochs_run,
            r.train_r1,
            r.val_mrr,
            r.val_r1,
            r.val_r5,
            r.val_r10,
            r.val_mean_rank,
            r.val_ndcg.map_or_else(|| "-".into(), |n| format!("{n:.4}")),
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seed: u64) -> Result<ExitCode> {
    let rows = battery::run(seed)?;
    let mut failures = 0usize;
    for r in &rows {
        println!(
            "{}: max rel err {:.3e} {}",
            r.check,
            r.max_rel_err,
            if r.passed { "pass" } else { "FAIL" }
        );
        if !r.passed {
            failures += 1;
            for name in &r.offenders {
                println!("  offending parameter: {name}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} of {} checks failed", rows.len());
        return Ok(ExitCode::from(1));
    }
    println!("all {} checks passed", rows.len());
    Ok(ExitCode::SUCCESS)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

fn cmd_inspect_gates(
    cfg: &RunConfig,
    data: &DataOpts,
    eval: &EvalOpts,
    out: &PathBuf,
) -> Result<ExitCode> {
    let (train_set, val_set) = load_or_generate(cfg, data)?;
    let records = pick_split(&eval.split, &train_set, &val_set)?;
    let (model, params) = load_model_and_params(cfg, eval, out)?;
    let evaluation = train::evaluate(&model, &params, records, cfg.dims.max_len)?;
    let mut csv = String::from(
        "question_id,modality,visual_fraction,semantic_fraction,top_object,top_caption\n",
    );
    for t in &evaluation.traces {
        let frac = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        let top = |v: Option<&Vec<f64>>| v.map_or_else(String::new, |x| argmax(x).to_string());
        writeln!(
            csv,
            "{}:{},{},{},{},{},{}",
            t.dialogue_id,
            t.round,
            t.modality.name(),
            frac(t.visual_fraction),
            frac(t.semantic_fraction),
            top(t.trace.object_attention.as_ref()),
            top(t.trace.caption_attention.as_ref()),
        )
        .expect("writing to a string cannot fail");
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("gates.csv"), csv)?;
    println!(
        "wrote gate summaries for {} questions to {}",
        evaluation.traces.len(),
        out.join("gates.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate { cfg, out } => cmd_generate(&resolve(cfg)?, out),
        Command::Train { cfg, data, out } => cmd_train(&resolve(cfg)?, data, out),
        Command::Eval {
            cfg,
            data,
            eval,
            out,
        } => cmd_eval(&resolve(cfg)?, data, eval, out),
        Command::Ablate {
            cfg,
            data,
            variants,
            out,
        } => cmd_ablate(&resolve(cfg)?, data, variants, out),
        Command::Gradcheck { seed } => cmd_gradcheck(*seed),
        Command::InspectGates {
            cfg,
            data,
            eval,
            out,
        } => cmd_inspect_gates(&resolve(cfg)?, data, eval, out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::Domain(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = train::init_thread_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
