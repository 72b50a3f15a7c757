//! Python bindings: configuration, dataset generation, training,
//! evaluation, gate inspection, checkpoints, and the gradient battery.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dualvd::battery;
use dualvd::checkpoint;
use dualvd::config::RunConfig;
use dualvd::data::{load_dialogues, save_dialogues, DialogueRecord, Modality};
use dualvd::error::Error;
use dualvd::fusion::{ModelVariant, ALL_VARIANTS};
use dualvd::metrics::{compute_metrics, EvalRecord, Metrics};
use dualvd::train::{self, EpochStats, TrainOptions};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) | Error::Domain(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn metrics_dict(py: Python<'_>, m: &Metrics) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mrr", m.mrr)?;
    d.set_item("recall_at_1", m.recall_at_1)?;
    d.set_item("recall_at_5", m.recall_at_5)?;
    d.set_item("recall_at_10", m.recall_at_10)?;
    d.set_item("mean_rank", m.mean_rank)?;
    d.set_item("ndcg", m.ndcg)?;
    d.set_item("count", m.count)?;
    Ok(d.unbind())
}

/// Run settings: model variant, dimensions, dataset shape, and schedule.
#[pyclass(name = "RunConfig", module = "dualvd_py", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Small preset that trains in minutes on one core.
    #[staticmethod]
    fn desk(seed: u64) -> Self {
        PyRunConfig { inner: RunConfig::desk(seed) }
    }

    /// Published model capacity with desk-sized dialogue counts.
    #[staticmethod]
    fn paper(seed: u64) -> Self {
        PyRunConfig { inner: RunConfig::paper(seed) }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: RunConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyRunConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig { inner: RunConfig::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.clone()
    }

    #[setter]
    fn set_variant(&mut self, name: &str) -> PyResult<()> {
        let v = ModelVariant::parse(name).map_err(to_py)?;
        self.inner.variant = v.name().to_string();
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
        self.inner.dataset.seed = seed;
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[setter]
    fn set_epochs(&mut self, epochs: usize) {
        self.inner.epochs = epochs;
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[setter]
    fn set_batch_size(&mut self, batch_size: usize) {
        self.inner.batch_size = batch_size;
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.inner.dataset.n_train
    }

    #[setter]
    fn set_n_train(&mut self, n: usize) {
        self.inner.dataset.n_train = n;
    }

    #[getter]
    fn n_val(&self) -> usize {
        self.inner.dataset.n_val
    }

    #[setter]
    fn set_n_val(&mut self, n: usize) {
        self.inner.dataset.n_val = n;
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.dataset.rounds
    }

    #[setter]
    fn set_rounds(&mut self, rounds: usize) {
        self.inner.dataset.rounds = rounds;
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(variant='{}', seed={}, epochs={}, dialogues={}+{})",
            self.inner.variant,
            self.inner.seed,
            self.inner.epochs,
            self.inner.dataset.n_train,
            self.inner.dataset.n_val,
        )
    }
}

/// A list of synthetic dialogues.
#[pyclass(name = "Dataset", module = "dualvd_py")]
struct PyDataset {
    records: Vec<DialogueRecord>,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { records: load_dialogues(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dialogues(&path, &self.records).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }

    fn question_count(&self) -> usize {
        self.records.iter().map(|r| r.rounds.len()).sum()
    }

    /// Question counts keyed by answer source: visual, semantic, both.
    fn modality_counts<'py>(&self, py: Python<'py>) -> PyResult<Py<PyDict>> {
        let d = PyDict::new(py);
        for m in [Modality::Visual, Modality::Semantic, Modality::Both] {
            let n: usize = self
                .records
                .iter()
                .flat_map(|r| r.rounds.iter())
                .filter(|q| q.modality == m)
                .count();
            d.set_item(m.name(), n)?;
        }
        Ok(d.unbind())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} dialogues, {} questions)",
            self.records.len(),
            self.question_count()
        )
    }
}

/// Trained parameters plus the per-epoch log that produced them.
#[pyclass(name = "TrainOutcome", module = "dualvd_py")]
struct PyTrainOutcome {
    cfg: RunConfig,
    params: dualvd::params::ModelParams,
    epochs_run: usize,
    history: Vec<EpochStats>,
}

#[pymethods]
impl PyTrainOutcome {
    #[getter]
    fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    #[getter]
    fn final_train_r1(&self) -> Option<f64> {
        self.history.last().map(|e| e.train_r1)
    }

    /// Per-epoch rows as (epoch, lr, train_loss, train_r1) tuples.
    fn history(&self) -> Vec<(usize, f64, f64, f64)> {
        self.history
            .iter()
            .map(|e| (e.epoch, e.lr, e.train_loss, e.train_r1))
            .collect()
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &self.params).map_err(to_py)
    }

    fn parameter_names(&self) -> Vec<String> {
        self.params.names()
    }

    /// One named tensor as (shape, flat values).
    fn parameter(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let t = self.params.get(name).map_err(to_py)?;
        Ok((t.shape.clone(), t.data.clone()))
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainOutcome(variant='{}', epochs_run={}, parameters={})",
            self.cfg.variant,
            self.epochs_run,
            self.params.len()
        )
    }
}

/// Generates the (train, val) splits described by the config.
#[pyfunction]
fn generate(cfg: &PyRunConfig) -> PyResult<(PyDataset, PyDataset)> {
    let (train_set, val_set) = dualvd::synth::generate_split(&cfg.inner.dataset).map_err(to_py)?;
    Ok((PyDataset { records: train_set }, PyDataset { records: val_set }))
}

/// Trains the configured variant; releases the interpreter lock while
/// the optimizer runs.
#[pyfunction]
#[pyo3(signature = (cfg, train_set, val_set=None, stop_at_r1=None))]
fn fit(
    py: Python<'_>,
    cfg: &PyRunConfig,
    train_set: &PyDataset,
    val_set: Option<&PyDataset>,
    stop_at_r1: Option<f64>,
) -> PyResult<PyTrainOutcome> {
    let inner = cfg.inner.clone();
    let records = train_set.records.clone();
    let val = val_set.map(|v| v.records.clone());
    let result = py
        .detach(move || {
            let opts = TrainOptions { out_dir: None, stop_at_r1 };
            train::train(&inner, &records, val.as_deref(), &opts)
        })
        .map_err(to_py)?;
    Ok(PyTrainOutcome {
        cfg: cfg.inner.clone(),
        params: result.params,
        epochs_run: result.epochs_run,
        history: result.history,
    })
}

/// Scores every question of `data` and returns the metrics dict.
#[pyfunction]
fn evaluate(
    py: Python<'_>,
    cfg: &PyRunConfig,
    outcome: &PyTrainOutcome,
    data: &PyDataset,
) -> PyResult<Py<PyDict>> {
    let model = cfg.inner.model().map_err(to_py)?;
    let eval = train::evaluate(&model, &outcome.params, &data.records, cfg.inner.dims.max_len)
        .map_err(to_py)?;
    metrics_dict(py, &eval.metrics)
}

/// Per-question gate split as (question_id, modality, visual_fraction,
/// semantic_fraction) tuples; fractions are None for variants without
/// the final gate.
#[pyfunction]
fn gate_report(
    cfg: &PyRunConfig,
    outcome: &PyTrainOutcome,
    data: &PyDataset,
) -> PyResult<Vec<(String, String, Option<f64>, Option<f64>)>> {
    let model = cfg.inner.model().map_err(to_py)?;
    let eval = train::evaluate(&model, &outcome.params, &data.records, cfg.inner.dims.max_len)
        .map_err(to_py)?;
    Ok(eval
        .traces
        .iter()
        .map(|t| {
            (
                format!("{}:{}", t.dialogue_id, t.round),
                t.modality.name().to_string(),
                t.visual_fraction,
                t.semantic_fraction,
            )
        })
        .collect())
}

/// Loads a checkpoint saved for this config's variant and dimensions.
#[pyfunction]
fn load_checkpoint(cfg: &PyRunConfig, path: PathBuf) -> PyResult<PyTrainOutcome> {
    let model = cfg.inner.model().map_err(to_py)?;
    let expected = model.init_params(cfg.inner.seed).map_err(to_py)?;
    let params = checkpoint::load(&path).map_err(to_py)?;
    if expected.names() != params.names() {
        return Err(PyValueError::new_err(
            "checkpoint parameters do not match the configured variant",
        ));
    }
    for (name, t) in expected.iter() {
        if params.get(name).map_err(to_py)?.shape != t.shape {
            return Err(PyValueError::new_err(format!(
                "checkpoint tensor `{name}` has the wrong shape"
            )));
        }
    }
    Ok(PyTrainOutcome {
        cfg: cfg.inner.clone(),
        params,
        epochs_run: 0,
        history: Vec::new(),
    })
}

/// Central-difference verification of every block and variant; rows are
/// (check, max_rel_err, passed) tuples.
#[pyfunction]
fn gradient_battery(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let rows = py.detach(move || battery::run(seed)).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.check, r.max_rel_err, r.passed))
        .collect())
}

/// Metrics over 1-based ground-truth ranks, one per question.
#[pyfunction]
fn metrics_from_ranks(py: Python<'_>, ranks: Vec<usize>) -> PyResult<Py<PyDict>> {
    let records: Vec<EvalRecord> = ranks
        .into_iter()
        .map(|rank_of_gt| EvalRecord { rank_of_gt, relevance: None })
        .collect();
    let m = compute_metrics(&records).map_err(to_py)?;
    metrics_dict(py, &m)
}

/// Names of every model variant, ablations included.
#[pyfunction]
fn variants() -> Vec<&'static str> {
    ALL_VARIANTS.iter().map(|v| v.name()).collect()
}

#[pymodule]
fn dualvd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    train::init_thread_pool().map_err(to_py)?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainOutcome>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gate_report, m)?)?;
    m.add_function(wrap_pyfunction!(load_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_battery, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_ranks, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    Ok(())
}
