//! Python bindings. Configs and reports cross the boundary as JSON strings so
//! the Python side can use plain dicts.

use std::path::PathBuf;

use fairtab::analysis::ImportanceOptions;
use fairtab::commands::{self, CommandOptions, LoadedRun, RunConfig};
use fairtab::data::{save_csv, synthesize, SynthConfig, TabularDataset};
use fairtab::training::Method;
use fairtab::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("[{}] {e}", e.kind())),
    }
}

fn json_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(format!("[json] {e}"))
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: TabularDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a CSV with its schema JSON.
    #[staticmethod]
    fn load(data: PathBuf, schema: PathBuf) -> PyResult<Self> {
        let inner = commands::load_data(&data, &schema).map_err(err)?;
        Ok(PyDataset { inner })
    }

    /// Generates synthetic data from a generator config (JSON), or the
    /// built-in profile with `n` rows when `config` is None.
    #[staticmethod]
    #[pyo3(signature = (config=None, n=1000, seed=0))]
    fn synthesize(config: Option<&str>, n: usize, seed: u64) -> PyResult<Self> {
        let cfg = match config {
            Some(text) => serde_json::from_str::<SynthConfig>(text).map_err(json_err)?,
            None => SynthConfig::default_profile(n, seed),
        };
        Ok(PyDataset {
            inner: synthesize(&cfg).map_err(err)?,
        })
    }

    /// Writes `data.csv` and `schema.json` into `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir).map_err(|e| err(Error::io(&dir, e)))?;
        save_csv(&self.inner, &dir.join("data.csv")).map_err(err)?;
        let schema = self.inner.schema().to_json().map_err(err)?;
        std::fs::write(dir.join("schema.json"), schema).map_err(|e| err(Error::io(&dir, e)))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn tasks(&self) -> Vec<String> {
        self.inner.schema().tasks.clone()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.schema().input_features()
    }

    #[getter]
    fn sensitive(&self) -> Vec<String> {
        self.inner
            .schema()
            .sensitive
            .iter()
            .map(|a| a.name.clone())
            .collect()
    }

    fn labels(&self, task: usize) -> PyResult<Vec<u8>> {
        if task >= self.inner.schema().task_count() {
            return Err(PyValueError::new_err(format!("no task {task}")));
        }
        let rows: Vec<usize> = (0..self.inner.len()).collect();
        Ok(self.inner.task_labels(task, &rows))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(rows={}, tasks={:?})",
            self.inner.len(),
            self.inner.schema().tasks
        )
    }
}

/// A trained run directory.
#[pyclass(name = "Run", frozen)]
struct PyRun {
    dir: PathBuf,
    inner: LoadedRun,
}

#[pymethods]
impl PyRun {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = commands::load_run(&dir).map_err(err)?;
        Ok(PyRun { dir, inner })
    }

    #[getter]
    fn folds(&self) -> usize {
        self.inner.checkpoints.len()
    }

    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(json_err)
    }

    fn test_rows(&self, fold: usize) -> PyResult<Vec<usize>> {
        self.inner
            .plan
            .folds
            .get(fold)
            .map(|f| f.test.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no fold {fold}")))
    }

    /// Probabilities `[task][i]` of fold `fold`'s checkpoint on `rows`
    /// (its test rows when omitted).
    #[pyo3(signature = (dataset, fold=0, rows=None))]
    fn predict_proba(
        &self,
        dataset: &PyDataset,
        fold: usize,
        rows: Option<Vec<usize>>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let rows = match rows {
            Some(r) => r,
            None => self.test_rows(fold)?,
        };
        if let Some(&r) = rows.iter().find(|&&r| r >= dataset.inner.len()) {
            return Err(PyValueError::new_err(format!("row {r} out of range")));
        }
        self.inner.checkpoints[fold]
            .predict_proba(&dataset.inner, &rows)
            .map_err(err)
    }

    /// Re-scores every fold; returns the report JSON.
    #[pyo3(signature = (dataset, out=None))]
    fn evaluate(
        &self,
        py: Python<'_>,
        dataset: &PyDataset,
        out: Option<PathBuf>,
    ) -> PyResult<String> {
        let out = out.unwrap_or_else(|| self.dir.join("eval"));
        let report = py
            .detach(|| commands::cmd_eval(&self.inner, &dataset.inner, &out))
            .map_err(err)?;
        report.to_json().map_err(err)
    }

    #[pyo3(signature = (dataset, fold=0, repetitions=5, seed=0, identity=false, out=None))]
    fn importance(
        &self,
        py: Python<'_>,
        dataset: &PyDataset,
        fold: usize,
        repetitions: usize,
        seed: u64,
        identity: bool,
        out: Option<PathBuf>,
    ) -> PyResult<String> {
        let out = out.unwrap_or_else(|| self.dir.join("importance"));
        let opts = ImportanceOptions {
            repetitions,
            seed,
            identity,
            threads: 1,
        };
        let table = py
            .detach(|| commands::cmd_importance(&self.inner, &dataset.inner, fold, &opts, &out))
            .map_err(err)?;
        table.to_json().map_err(err)
    }

    #[pyo3(signature = (dataset, step=0.01, out=None))]
    fn cdf(
        &self,
        py: Python<'_>,
        dataset: &PyDataset,
        step: f64,
        out: Option<PathBuf>,
    ) -> PyResult<String> {
        let out = out.unwrap_or_else(|| self.dir.join("cdf"));
        let tables = py
            .detach(|| commands::cmd_cdf(&self.inner, &dataset.inner, step, &out))
            .map_err(err)?;
        serde_json::to_string(&tables).map_err(json_err)
    }
}

fn run_config(config: Option<&str>) -> PyResult<RunConfig> {
    match config {
        Some(text) => serde_json::from_str(text).map_err(json_err),
        None => Ok(RunConfig::default()),
    }
}

/// Trains every fold into `out`; returns the report JSON.
#[pyfunction]
#[pyo3(signature = (dataset, out, config=None, threads=1))]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    out: PathBuf,
    config: Option<&str>,
    threads: usize,
) -> PyResult<String> {
    let cfg = run_config(config)?;
    let outcome = py
        .detach(|| {
            let opts = CommandOptions { threads, log: None };
            commands::cmd_train(&dataset.inner, &cfg, &out, &opts)
        })
        .map_err(err)?;
    outcome.report.to_json().map_err(err)
}

/// Runs each method under each seed; returns the comparison JSON.
#[pyfunction]
#[pyo3(signature = (dataset, methods, seeds, out, config=None, threads=1))]
fn compare(
    py: Python<'_>,
    dataset: &PyDataset,
    methods: Vec<String>,
    seeds: Vec<u64>,
    out: PathBuf,
    config: Option<&str>,
    threads: usize,
) -> PyResult<String> {
    let cfg = run_config(config)?;
    let methods = methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let table = py
        .detach(|| {
            let opts = CommandOptions { threads, log: None };
            commands::cmd_compare(&dataset.inner, &cfg, &methods, &seeds, &out, &opts)
        })
        .map_err(err)?;
    serde_json::to_string(&table).map_err(json_err)
}

#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&RunConfig::default()).map_err(json_err)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<u8>) -> Option<f64> {
    fairtab::metrics::auroc(&scores, &labels)
}

#[pyfunction]
fn auprc(scores: Vec<f64>, labels: Vec<u8>) -> Option<f64> {
    fairtab::metrics::auprc(&scores, &labels)
}

#[pyfunction]
fn dpd(preds: Vec<u8>, groups: Vec<Option<u32>>) -> Option<f64> {
    fairtab::metrics::dpd(&preds, &groups)
}

#[pyfunction]
fn eod(preds: Vec<u8>, labels: Vec<u8>, groups: Vec<Option<u32>>) -> Option<f64> {
    fairtab::metrics::eod(&preds, &labels, &groups)
}

#[pyfunction]
fn reduction_fraction(before: f64, after: f64) -> PyResult<f64> {
    fairtab::metrics::reduction_fraction(before, after).map_err(err)
}

#[pymodule]
fn fairtab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(auprc, m)?)?;
    m.add_function(wrap_pyfunction!(dpd, m)?)?;
    m.add_function(wrap_pyfunction!(eod, m)?)?;
    m.add_function(wrap_pyfunction!(reduction_fraction, m)?)?;
    Ok(())
}
