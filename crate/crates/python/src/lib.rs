use std::path::PathBuf;
use std::time::Instant;

use avda::config::{ExperimentConfig, PRESETS};
use avda::data::{self, Domain, DomainDataset, Matrix};
use avda::eval::{self, RunReport};
use avda::networks::{ModelBundle, PredictMode, Route};
use avda::trainer::{self, Checkpoint, TargetData};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: avda::Error) -> PyErr {
    use avda::Error::*;
    match e {
        Io { .. } => PyIOError::new_err(e.to_string()),
        Config { .. } | Parameter { .. } | Shape { .. } | Index { .. } | Row { .. } | Missing(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn route(name: &str) -> PyResult<Route> {
    match name {
        "source" => Ok(Route::Source),
        "target" => Ok(Route::Target),
        _ => Err(PyValueError::new_err(format!("route must be `source` or `target`, got `{name}`"))),
    }
}

fn domain(name: &str) -> PyResult<Domain> {
    match name {
        "source" => Ok(Domain::Source),
        "target" => Ok(Domain::Target),
        _ => Err(PyValueError::new_err(format!("domain must be `source` or `target`, got `{name}`"))),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Matrix::new(rows.len(), cols, rows.concat()).map_err(err)
}

fn nested(data: &[f64], cols: usize) -> Vec<Vec<f64>> {
    data.chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

fn json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Experiment configuration: a preset plus `key=value` overrides.
#[pyclass(name = "Config", module = "pyavda", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (preset = "default", overrides = None))]
    fn new(preset: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = ExperimentConfig::preset(preset).map_err(err)?;
        if let Some(d) = overrides {
            let mut kv = Vec::new();
            for (k, v) in d.iter() {
                let v = match v.extract::<bool>() {
                    Ok(b) => b.to_string(),
                    Err(_) => v.str()?.to_string(),
                };
                kv.push(format!("{}={v}", k.str()?));
            }
            inner.apply_overrides(&kv).map_err(err)?;
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_text(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn presets() -> Vec<&'static str> {
        PRESETS.to_vec()
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut c = self.inner.clone();
        c.set(key, value).map_err(err)?;
        c.validate().map_err(err)?;
        self.inner = c;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn digest(&self) -> String {
        self.inner.digest_hex()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn shots(&self) -> usize {
        self.inner.shots
    }

    fn __repr__(&self) -> String {
        format!("Config(digest={})", &self.inner.digest_hex()[..12])
    }
}

/// Rows of features with optional integer labels.
#[pyclass(name = "Dataset", module = "pyavda", from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: DomainDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, labels, classes, domain = "target"))]
    fn new(features: Vec<Vec<f64>>, labels: Option<Vec<usize>>, classes: usize, domain: &str) -> PyResult<Self> {
        Ok(Self {
            inner: DomainDataset::new(matrix(features)?, labels, self::domain(domain)?, classes).map_err(err)?,
        })
    }

    /// Reads a `.csv` or `.bin` file written by `save`.
    #[staticmethod]
    #[pyo3(signature = (path, classes, domain = "target"))]
    fn load(path: PathBuf, classes: usize, domain: &str) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_labeled_array(&path, self::domain(domain)?, classes).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        if path.extension().is_some_and(|e| e == "bin") {
            data::save_binary(&self.inner, &path)
        } else {
            data::save_csv(&self.inner, &path)
        }
        .map_err(err)
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        nested(&self.inner.features.data, self.inner.dim())
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels.clone()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn domain(&self) -> &'static str {
        self.inner.domain.as_str()
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("row {i} out of range")));
        }
        Ok(Self {
            inner: self.inner.subset(&indices),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} rows, {} features, {} classes, {})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.classes,
            self.inner.domain.as_str()
        )
    }
}

/// A trained model with its optimizer states.
#[pyclass(name = "Model", module = "pyavda", from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: Checkpoint,
}

impl PyModel {
    fn bundle(&self) -> &ModelBundle {
        &self.inner.bundle
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: trainer::checkpoint_load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::checkpoint_save(&self.inner, &path).map_err(err)
    }

    #[pyo3(signature = (features, route = "target"))]
    fn predict(&self, features: Vec<Vec<f64>>, route: &str) -> PyResult<Vec<usize>> {
        self.bundle().predict(self::route(route)?, &matrix(features)?, PredictMode::MeanZ).map_err(err)
    }

    /// Posterior means of the latent code, one row per input.
    #[pyo3(signature = (features, route = "target"))]
    fn embed(&self, features: Vec<Vec<f64>>, route: &str) -> PyResult<Vec<Vec<f64>>> {
        let z = self.bundle().embed(self::route(route)?, &matrix(features)?).map_err(err)?;
        Ok(nested(&z.to_vec(), self.bundle().config.latent_dim))
    }

    /// Accuracy on a labeled dataset. Without `route` the dataset's domain
    /// picks the networks.
    #[pyo3(signature = (dataset, route = None))]
    fn accuracy(&self, dataset: &PyDataset, route: Option<&str>) -> PyResult<f64> {
        match route {
            Some(r) => eval::accuracy_with(self.bundle(), self::route(r)?, &dataset.inner),
            None => eval::evaluate_accuracy(self.bundle(), &dataset.inner),
        }
        .map_err(err)
    }

    #[pyo3(signature = (dataset, route = "target"))]
    fn confusion_matrix(&self, dataset: &PyDataset, route: &str) -> PyResult<Vec<Vec<usize>>> {
        eval::confusion_matrix(self.bundle(), self::route(route)?, &dataset.inner).map_err(err)
    }

    fn export_embeddings(&self, dataset: &PyDataset, path: PathBuf) -> PyResult<()> {
        eval::export_embeddings(self.bundle(), &dataset.inner, &path).map_err(err)
    }

    #[getter]
    fn config_digest(&self) -> String {
        avda::config::hex(&self.inner.config_digest)
    }

    #[getter]
    fn classes(&self) -> usize {
        self.bundle().config.classes
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.bundle().config.latent_dim
    }

    fn __repr__(&self) -> String {
        let c = &self.bundle().config;
        format!("Model(input_dim={}, classes={}, latent_dim={}, hidden={:?})", c.input_dim, c.classes, c.latent_dim, c.hidden)
    }
}

/// Source and target datasets described by the config.
#[pyfunction]
fn build_datasets(py: Python<'_>, config: &PyConfig) -> PyResult<(PyDataset, PyDataset)> {
    let (s, t) = py.detach(|| eval::build_datasets(&config.inner)).map_err(err)?;
    Ok((PyDataset { inner: s }, PyDataset { inner: t }))
}

/// Indices of `shots` labeled rows per class and of the remaining rows.
#[pyfunction]
fn few_shot_split(dataset: &PyDataset, shots: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let s = data::make_few_shot_split(&dataset.inner, shots, seed).map_err(err)?;
    Ok((s.labeled_indices, s.unlabeled_indices))
}

/// Returns the trained model and the run report as a dict.
#[pyfunction]
fn train_source<'py>(py: Python<'py>, config: &PyConfig, source: &PyDataset) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let start = Instant::now();
    let cfg = &config.inner;
    let run = py.detach(|| trainer::train_source(cfg, &source.inner)).map_err(err)?;
    let report = RunReport {
        command: "train-source".into(),
        config_digest: cfg.digest_hex(),
        seed: cfg.seed,
        shots: cfg.shots,
        source_metrics: run.metrics.clone(),
        adaptation_metrics: Vec::new(),
        baseline_accuracy: None,
        final_accuracy: run.metrics.last().map(|m| m.accuracy),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let model = PyModel {
        inner: Checkpoint {
            bundle: run.bundle,
            adam: vec![("source".into(), run.adam)],
            config_digest: cfg.digest(),
        },
    };
    Ok((model, json(py, &report.to_json())?))
}

/// Adapts a source model to `target`, holding out `config.shots` labeled
/// rows per class. Accuracies in the report are on the held-out rows.
#[pyfunction]
fn adapt<'py>(
    py: Python<'py>,
    config: &PyConfig,
    model: &PyModel,
    source: &PyDataset,
    target: &PyDataset,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let start = Instant::now();
    let cfg = &config.inner;
    let (run, report) = py
        .detach(|| -> avda::Result<_> {
            let split = data::make_few_shot_split(&target.inner, cfg.shots, cfg.seed)?;
            let labeled = target.inner.subset(&split.labeled_indices);
            let pool = target.inner.subset(&split.unlabeled_indices);
            let has_labels = pool.labels.is_some();
            let run = trainer::train_adaptation(
                cfg,
                model.bundle(),
                &source.inner,
                TargetData {
                    labeled: &labeled,
                    unlabeled: &pool,
                    eval: has_labels.then_some(&pool),
                },
            )?;
            let acc = |b, r| has_labels.then(|| eval::accuracy_with(b, r, &pool)).transpose();
            let report = RunReport {
                command: "adapt".into(),
                config_digest: cfg.digest_hex(),
                seed: cfg.seed,
                shots: cfg.shots,
                source_metrics: Vec::new(),
                adaptation_metrics: run.metrics.clone(),
                baseline_accuracy: acc(model.bundle(), Route::Source)?,
                final_accuracy: acc(&run.bundle, Route::Target)?,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
            };
            Ok((run, report))
        })
        .map_err(err)?;
    let adapted = PyModel {
        inner: Checkpoint {
            bundle: run.bundle,
            adam: vec![("discriminator".into(), run.discriminator_adam), ("target".into(), run.target_adam)],
            config_digest: cfg.digest(),
        },
    };
    Ok((adapted, json(py, &report.to_json())?))
}

/// Mean, sample std and best target accuracy per shots value over
/// `seeds` adaptation runs; one dict per row.
#[pyfunction]
#[pyo3(signature = (config, shots, seeds, threads = 1))]
fn shots_curve<'py>(
    py: Python<'py>,
    config: &PyConfig,
    shots: Vec<usize>,
    seeds: usize,
    threads: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = py
        .detach(|| eval::run_shots_curve(&config.inner, &shots, seeds, threads.max(1)))
        .map_err(err)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("shots", r.shots)?;
            d.set_item("mean_accuracy", r.mean_accuracy)?;
            d.set_item("std_accuracy", r.std_accuracy)?;
            d.set_item("best_accuracy", r.best_accuracy)?;
            d.set_item("runs", r.runs)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pyavda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(build_datasets, m)?)?;
    m.add_function(wrap_pyfunction!(few_shot_split, m)?)?;
    m.add_function(wrap_pyfunction!(train_source, m)?)?;
    m.add_function(wrap_pyfunction!(adapt, m)?)?;
    m.add_function(wrap_pyfunction!(shots_curve, m)?)?;
    Ok(())
}
