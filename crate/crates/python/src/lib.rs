//! Python bindings: configuration, WFDB loading, R-peak detection, EKM
//! rendering, dataset build, training, evaluation and model inference.

#![allow(clippy::type_complexity)]

use std::path::PathBuf;

use ekm_core::cnn::{self, save_model};
use ekm_core::dataset::{synth_ecg as core_synth_ecg, SynthSubjectParams};
use ekm_core::ekm::generate::{generate_ekms, prepare_record, GenerationConfig};
use ekm_core::ekm::EkmParams;
use ekm_core::eval::{confusion, metrics, EvalReport};
use ekm_core::pipeline;
use ekm_core::sigproc::PanTompkins;
use ekm_core::wfdb::{self, EcgRecord, LoadOptions};
use ekm_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

create_exception!(ekm, ConfigError, PyValueError);
create_exception!(ekm, DataError, PyRuntimeError);
create_exception!(ekm, DivergenceError, PyArithmeticError);

fn to_py(e: impl Into<Error>) -> PyErr {
    let e = e.into();
    let msg = e.to_string();
    match e.exit_code() {
        ekm_core::EXIT_CONFIG => ConfigError::new_err(msg),
        ekm_core::EXIT_DIVERGED => DivergenceError::new_err(msg),
        _ => DataError::new_err(msg),
    }
}

/// Run configuration. Keyword arguments are applied as configuration keys.
#[pyclass(name = "RunConfig", module = "ekm")]
struct PyRunConfig {
    inner: ekm_core::RunConfig,
}

fn value_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(b) = v.extract::<bool>() {
        return Ok(b.to_string());
    }
    Ok(v.str()?.to_string())
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = ekm_core::RunConfig::default();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                inner.set(&k.extract::<String>()?, &value_text(&v)?).map_err(to_py)?;
            }
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ekm_core::RunConfig::from_text(text).map_err(to_py)?,
        })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value_text(value)?).map_err(to_py)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .pairs()
            .into_iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| ConfigError::new_err(format!("unknown key {key:?}")))
    }

    fn items(&self) -> Vec<(String, String)> {
        self.inner.pairs()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let body: Vec<String> = self.inner.pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("RunConfig({})", body.join(", "))
    }
}

/// A trained network with its class vocabulary and embedded metadata.
#[pyclass(name = "Model", module = "ekm")]
struct PyModel {
    inner: cnn::Model<f32>,
}

#[pymethods]
impl PyModel {
    /// Fresh Glorot-initialized model.
    #[new]
    #[pyo3(signature = (classes, seed=42))]
    fn new(classes: usize, seed: u64) -> PyResult<Self> {
        let inner = cnn::init_model(&cnn::ModelConfig::new(classes), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: cnn::load_model(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &cnn::model_to_bytes(&self.inner))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: cnn::model_from_bytes(data).map_err(to_py)?,
        })
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.config.classes
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        let c = &self.inner.config;
        (c.input_h, c.input_w, c.channels)
    }

    #[getter]
    fn vocab(&self) -> Vec<String> {
        self.inner.vocab.clone()
    }

    #[getter]
    fn metadata(&self) -> Vec<(String, String)> {
        self.inner.metadata.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.config.param_counts().total()
    }

    /// Class index and probabilities for each image. `pixels` holds raw RGB
    /// bytes for `len(pixels) / (h*w*3)` images in row-major order.
    fn predict(&self, py: Python<'_>, pixels: &[u8]) -> PyResult<Vec<(usize, Vec<f32>)>> {
        let n = self.inner.config.input_len();
        if pixels.is_empty() || !pixels.len().is_multiple_of(n) {
            return Err(DataError::new_err(format!(
                "expected a multiple of {n} bytes, got {}",
                pixels.len()
            )));
        }
        let images: Vec<f32> = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
        let preds = py
            .detach(|| cnn::predict(&self.inner, &images, pixels.len() / n))
            .map_err(to_py)?;
        Ok(preds.into_iter().map(|p| (p.class, p.probs)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(classes={}, params={}, steps={})",
            self.inner.config.classes,
            self.inner.config.param_counts().total(),
            self.inner.adam.step
        )
    }
}

/// Calibrated samples (mV), sampling rate and subject id of one WFDB channel.
#[pyfunction]
#[pyo3(signature = (header, channel=0, verify_checksum=false))]
fn read_wfdb(header: PathBuf, channel: usize, verify_checksum: bool) -> PyResult<(Vec<f64>, f64, String)> {
    let r = wfdb::load_record(&header, channel, LoadOptions { verify_checksum }).map_err(to_py)?;
    Ok((r.samples, r.fs, r.subject_id))
}

/// R-peak sample indices found by Pan-Tompkins.
#[pyfunction]
fn detect_r_peaks(py: Python<'_>, samples: Vec<f64>, fs: f64) -> PyResult<Vec<usize>> {
    py.detach(|| {
        let record = EcgRecord::new("signal", samples, fs)?;
        Ok::<_, Error>(PanTompkins::default().detect(&record)?.peaks.indices)
    })
    .map_err(to_py)
}

/// Synthetic ECG for one subject; returns samples and true R-peak indices.
#[pyfunction]
#[pyo3(signature = (subject_seed, heart_rate=72.0, fs=360.0, duration=60.0, noise_seed=0))]
fn synth_ecg(subject_seed: u64, heart_rate: f64, fs: f64, duration: f64, noise_seed: u64) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let params = SynthSubjectParams::random_subject(subject_seed, heart_rate);
    let (record, peaks) = core_synth_ecg(&params, fs, duration, noise_seed, "synth").map_err(to_py)?;
    Ok((record.samples, peaks.indices))
}

/// EKM images of one recording as `(rgb_bytes, height, width)` tuples.
#[pyfunction]
#[pyo3(signature = (samples, fs, bpf=3, alpha_i=0.2, alpha_e=0.3, height=25, width=37))]
#[allow(clippy::too_many_arguments)]
fn ekm_images<'py>(
    py: Python<'py>,
    samples: Vec<f64>,
    fs: f64,
    bpf: usize,
    alpha_i: f64,
    alpha_e: f64,
    height: usize,
    width: usize,
) -> PyResult<Vec<(Bound<'py, PyBytes>, usize, usize)>> {
    let data = py
        .detach(|| {
            let params = EkmParams::new(bpf, alpha_i, alpha_e)?;
            let record = EcgRecord::new("signal", samples, fs)?;
            let prepared = prepare_record(&record, &PanTompkins::default())?;
            let cfg = GenerationConfig {
                out_h: height,
                out_w: width,
                ..Default::default()
            };
            Ok::<_, Error>(generate_ekms(&[prepared], &params, &cfg)?)
        })
        .map_err(to_py)?;
    Ok(data
        .ekms
        .into_iter()
        .map(|e| (PyBytes::new(py, &e.image.pixels), e.image.height, e.image.width))
        .collect())
}

/// Build a dataset directory; returns per-subject counts.
#[pyfunction]
fn build_dataset(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<Vec<(String, usize, usize, usize)>> {
    let summary = py.detach(|| pipeline::build_dataset(&config.inner, &out)).map_err(to_py)?;
    Ok(summary
        .stats
        .into_iter()
        .map(|s| (s.subject_id, s.ekms, s.train, s.test))
        .collect())
}

/// Train on a built dataset with the configuration it was built with;
/// `epochs`, `batch` and `seed` override the stored values.
#[pyfunction]
#[pyo3(signature = (dataset, epochs=None, batch=None, seed=None))]
fn train(
    py: Python<'_>,
    dataset: PathBuf,
    epochs: Option<usize>,
    batch: Option<usize>,
    seed: Option<u64>,
) -> PyResult<(PyModel, Vec<(usize, f64, Option<f64>, Option<f64>)>)> {
    let (model, history) = py
        .detach(|| {
            let mut cfg = pipeline::dataset_config(&dataset)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch {
                cfg.train.batch_size = b;
            }
            if let Some(s) = seed {
                cfg.set("seed", &s.to_string())?;
            }
            pipeline::train_model(&cfg, &dataset)
        })
        .map_err(to_py)?;
    let history = history
        .into_iter()
        .map(|r| (r.epoch, r.train_loss, r.val_loss, r.val_accuracy))
        .collect();
    Ok((PyModel { inner: model }, history))
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("classes", r.classes)?;
    d.set_item("total", r.total)?;
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("far", r.far)?;
    d.set_item("frr", r.frr)?;
    d.set_item("eer", r.eer)?;
    d.set_item("ir_at_k", r.ir_at_k.clone())?;
    d.set_item("loss", r.loss)?;
    d.set_item("per_class_recall", r.per_class_recall.clone())?;
    Ok(d)
}

/// Metrics of `model` on the dataset's test split.
#[pyfunction]
#[pyo3(signature = (model, dataset, batch=32))]
fn evaluate<'py>(py: Python<'py>, model: &PyModel, dataset: PathBuf, batch: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(|| pipeline::evaluate_model(&model.inner, &dataset, batch))
        .map_err(to_py)?;
    report_dict(py, &r)
}

/// Accuracy, FAR, FRR and EER from predicted and true class indices.
#[pyfunction]
fn identification_metrics<'py>(
    py: Python<'py>,
    predicted: Vec<usize>,
    labels: Vec<usize>,
    classes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cm = confusion(&predicted, &labels, classes).map_err(to_py)?;
    report_dict(py, &metrics(&cm, f64::NAN).map_err(to_py)?)
}

#[pymodule]
fn ekm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_wfdb, m)?)?;
    m.add_function(wrap_pyfunction!(detect_r_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(synth_ecg, m)?)?;
    m.add_function(wrap_pyfunction!(ekm_images, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(identification_metrics, m)?)?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("DivergenceError", py.get_type::<DivergenceError>())?;
    Ok(())
}
