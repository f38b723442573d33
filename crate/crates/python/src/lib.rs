//! Python bindings: datasets, graphs, masking, losses, metrics, training,
//! distillation, evaluation and checkpoints.

use std::path::PathBuf;

use maskdistill::cli::ExperimentConfig;
use maskdistill::corpus::{self, Conversation, Utterance};
use maskdistill::graph::{self, GraphConfig};
use maskdistill::masking::{self, MaskScenarioProbs, RandomMaskParams, Scenario};
use maskdistill::network::parse_modalities;
use maskdistill::training::{self, checkpoint, metrics, TrainedModel};
use maskdistill::{losses, rng, Error};
use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts any serialisable value into plain Python objects through JSON.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Experiment configuration, as TOML.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => ExperimentConfig::from_toml(t).map_err(py_err)?,
            None => ExperimentConfig::default(),
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }

    #[setter]
    fn set_epochs(&mut self, epochs: usize) {
        self.inner.train.epochs = epochs;
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.train.mode.as_str()
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={:?})", &self.inner.hash()[..12])
    }
}

#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: corpus::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: corpus::read_dataset(path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        corpus::write_dataset(&self.inner, path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.conversations.len()
    }

    fn num_utterances(&self) -> usize {
        self.inner.num_utterances()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    /// One conversation as a dict of labels, speakers and feature rows.
    fn conversation<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyAny>> {
        let conv = self
            .inner
            .conversations
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("conversation {index} out of range")))?;
        to_py(py, conv)
    }

    fn header<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.header)
    }
}

/// Generates the train, val and test splits described by `config`.
#[pyfunction]
fn generate_splits(config: &PyConfig) -> PyResult<(PyDataset, PyDataset, PyDataset)> {
    let c = &config.inner;
    let [a, b, t] = corpus::generate_splits(&c.synth, c.splits.train, c.splits.val, c.splits.test).map_err(py_err)?;
    Ok((PyDataset { inner: a }, PyDataset { inner: b }, PyDataset { inner: t }))
}

/// Edges `(src, dst, relation)` of the utterance graph for a speaker sequence.
#[pyfunction]
#[pyo3(signature = (speakers, past_window = 5, future_window = 5, disjoint = false, self_loops = true, num_speakers = None))]
fn build_graph(
    speakers: Vec<usize>,
    past_window: usize,
    future_window: usize,
    disjoint: bool,
    self_loops: bool,
    num_speakers: Option<usize>,
) -> PyResult<Vec<(usize, usize, usize)>> {
    let m = num_speakers.unwrap_or_else(|| speakers.iter().max().map_or(1, |s| s + 1));
    if let Some(s) = speakers.iter().find(|&&s| s >= m) {
        return Err(PyValueError::new_err(format!("speaker {s} out of range for {m} speakers")));
    }
    let conv = Conversation {
        conv_id: "py".into(),
        num_speakers: m,
        utterances: speakers
            .iter()
            .enumerate()
            .map(|(index, &speaker)| Utterance {
                index,
                speaker,
                label: 0,
                audio: Vec::new(),
                video: Vec::new(),
            })
            .collect(),
    };
    let cfg = GraphConfig {
        past_window,
        future_window,
        disjoint,
        self_loops,
    };
    Ok(graph::build_graph(&conv, &cfg).edges.iter().map(|e| (e.src, e.dst, e.relation.0)).collect())
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::None => "none",
        Scenario::FullAudio => "full_audio",
        Scenario::FullVideo => "full_video",
        Scenario::Random => "random",
    }
}

/// Draws `n` masking scenarios with the given probabilities.
#[pyfunction]
#[pyo3(signature = (n, seed, probs = (0.1, 0.3, 0.3, 0.3)))]
fn sample_scenarios(n: usize, seed: u64, probs: (f64, f64, f64, f64)) -> PyResult<Vec<&'static str>> {
    let probs = MaskScenarioProbs {
        p_none: probs.0,
        p_full_audio: probs.1,
        p_full_video: probs.2,
        p_random: probs.3,
    };
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| masking::sample_scenario(&probs, &mut r).map(scenario_name).map_err(py_err))
        .collect()
}

/// Keep flags `(audio, video)` per utterance for one scenario.
#[pyfunction]
#[pyo3(signature = (scenario, length, seed, per_sample_start_prob = None, len_audio = None, len_video = None))]
fn build_mask(
    scenario: &str,
    length: usize,
    seed: u64,
    per_sample_start_prob: Option<f64>,
    len_audio: Option<usize>,
    len_video: Option<usize>,
) -> PyResult<(Vec<bool>, Vec<bool>)> {
    let s = Scenario::ALL
        .into_iter()
        .find(|s| scenario_name(*s) == scenario)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scenario {scenario:?}")))?;
    let d = RandomMaskParams::default();
    let params = RandomMaskParams {
        per_sample_start_prob: per_sample_start_prob.unwrap_or(d.per_sample_start_prob),
        len_audio: len_audio.unwrap_or(d.len_audio),
        len_video: len_video.unwrap_or(d.len_video),
    };
    params.validate().map_err(py_err)?;
    let plan = masking::build_mask(s, length, &params, &mut rng::stream(seed, 0));
    Ok((plan.keep_audio, plan.keep_video))
}

#[pyfunction]
#[pyo3(signature = (x, positive, negative, margin = 1.0, p = 2.0))]
fn triplet_loss(x: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>, margin: f64, p: f64) -> PyResult<f64> {
    losses::triplet_loss(&x, &positive, &negative, margin, p).map_err(py_err)
}

/// Mean cross entropy of logit rows against integer labels.
#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    losses::cross_entropy(matrix(&logits)?.view(), &labels).map_err(py_err)
}

#[pyfunction]
fn confusion_matrix(preds: Vec<usize>, labels: Vec<usize>, num_classes: usize) -> PyResult<Vec<Vec<u64>>> {
    metrics::confusion_matrix(&preds, &labels, num_classes).map_err(py_err)
}

#[pyfunction]
fn weighted_f1(preds: Vec<usize>, labels: Vec<usize>, num_classes: usize) -> PyResult<f64> {
    Ok(metrics::weighted_f1(&metrics::confusion_matrix(&preds, &labels, num_classes).map_err(py_err)?))
}

#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    /// Trains a model with the `[train]`, `[model]` and `[mask]` settings of `config`.
    #[staticmethod]
    fn train(py: Python<'_>, config: &PyConfig, train_set: &PyDataset, val_set: &PyDataset) -> PyResult<Self> {
        let cfg = config.inner.train_config();
        let inner = py
            .detach(|| training::train(&train_set.inner, &val_set.inner, &cfg))
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Distills a student described by `[student]` and `[distill]` from this teacher.
    fn distill(&self, py: Python<'_>, config: &PyConfig, train_set: &PyDataset, val_set: &PyDataset) -> PyResult<Self> {
        let student = config.inner.student_config();
        let inner = py
            .detach(|| training::distill(&self.inner, &train_set.inner, &val_set.inner, &student))
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Weighted F1, accuracy, per-class scores and confusion on `dataset`.
    #[pyo3(signature = (dataset, modalities = "audio,video"))]
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &PyDataset, modalities: &str) -> PyResult<Bound<'py, PyAny>> {
        let active = parse_modalities(modalities).map_err(py_err)?;
        let m = training::evaluate(&self.inner, &dataset.inner, &active).map_err(py_err)?;
        to_py(py, &m)
    }

    /// Predicted class per utterance, one list per conversation.
    #[pyo3(signature = (dataset, modalities = "audio,video"))]
    fn predict(&self, dataset: &PyDataset, modalities: &str) -> PyResult<Vec<Vec<usize>>> {
        let active = parse_modalities(modalities).map_err(py_err)?;
        let data = training::prepare(&dataset.inner, self.inner.config(), &self.inner.graph).map_err(py_err)?;
        training::predict(&self.inner.network, &data, &active).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(&path).map_err(py_err)?,
        })
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn modalities(&self) -> Vec<String> {
        self.inner.config().modalities.iter().map(|m| format!("{m:?}").to_lowercase()).collect()
    }

    fn provenance<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.provenance)
    }
}

/// Runs the command-line interface with `args` (without the program name).
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("maskdistill".to_string()).chain(args).collect();
    py.detach(|| maskdistill::cli::run_from(argv))
}

#[pymodule]
fn maskdistill_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_splits, m)?)?;
    m.add_function(wrap_pyfunction!(build_graph, m)?)?;
    m.add_function(wrap_pyfunction!(sample_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(build_mask, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_f1, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
