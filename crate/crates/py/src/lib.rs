//! Python bindings: tensors and the softmax kernels, datasets, classifier heads,
//! schedules, config-driven experiments and the verification suite.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fast_transfer::adp::{self, AdpRecord};
use fast_transfer::config::ExperimentConfig;
use fast_transfer::data::{self, LabeledDataset};
use fast_transfer::experiment::DeskSetup;
use fast_transfer::nn::{self, InitMode};
use fast_transfer::tensor;
use fast_transfer::transfer::{self, StepRecord, TrainRun};

fn py_err(e: fast_transfer::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows_tensor(rows: Vec<Vec<f64>>) -> PyResult<tensor::Tensor> {
    tensor::Tensor::from_rows(&rows).map_err(py_err)
}

fn tensor_rows(t: &tensor::Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn parse_init(name: &str, scale: Option<f64>) -> PyResult<InitMode> {
    Ok(match name {
        "zero" => InitMode::Zero {
            epsilon: scale.unwrap_or(0.0),
        },
        "normal" => InitMode::Normal {
            std: scale.ok_or_else(|| PyValueError::new_err("normal init needs scale (the std)"))?,
        },
        "kaiming_fan_in" => InitMode::KaimingFanIn,
        "kaiming_fan_out" => InitMode::KaimingFanOut,
        "xavier_uniform" => InitMode::XavierUniform,
        other => return Err(PyValueError::new_err(format!("unknown init mode {other:?}"))),
    })
}

/// Dense row-major float64 tensor.
#[pyclass(name = "Tensor", module = "fast_transfer")]
#[derive(Clone)]
struct PyTensor(tensor::Tensor);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        tensor::Tensor::new(shape, data).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        rows_tensor(rows).map(Self)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self(tensor::Tensor::zeros(&shape))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    /// Rows of a matrix as nested lists.
    fn tolist(&self) -> PyResult<Vec<Vec<f64>>> {
        if self.0.shape().len() != 2 {
            return Err(PyValueError::new_err("tolist needs a matrix"));
        }
        Ok(tensor_rows(&self.0))
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<PyTensor> {
        tensor::matmul(&self.0, &other.0).map(Self).map_err(py_err)
    }

    fn __matmul__(&self, other: &PyTensor) -> PyResult<PyTensor> {
        self.matmul(other)
    }

    #[pyo3(signature = (temperature = 1.0))]
    fn softmax(&self, temperature: f64) -> PyResult<PyTensor> {
        tensor::softmax_rows(&self.0, temperature).map(Self).map_err(py_err)
    }

    fn frobenius_norm(&self) -> f64 {
        tensor::frobenius_norm(&self.0)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

#[pyfunction]
#[pyo3(signature = (rows, temperature = 1.0))]
fn softmax_rows(rows: Vec<Vec<f64>>, temperature: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(tensor_rows(&tensor::softmax_rows(&rows_tensor(rows)?, temperature).map_err(py_err)?))
}

/// Batch-mean negative log-likelihood of predicted rows against integer labels.
#[pyfunction]
fn nll_loss(y_hat: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    let p = rows_tensor(y_hat)?;
    let y = tensor::one_hot(&labels, p.cols()).map_err(py_err)?;
    tensor::nll_loss(&p, &y).map_err(py_err)
}

/// `Y − Ŷ` for integer labels.
#[pyfunction]
fn prediction_error(y_hat: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
    let p = rows_tensor(y_hat)?;
    let y = tensor::one_hot(&labels, p.cols()).map_err(py_err)?;
    Ok(tensor_rows(&tensor::prediction_error(&y, &p).map_err(py_err)?))
}

#[pyfunction]
fn fibonacci_checkpoints(max_steps: usize) -> PyResult<Vec<usize>> {
    adp::fibonacci_checkpoints(max_steps).map_err(py_err)
}

#[pyfunction]
fn validation_due(step: usize) -> bool {
    adp::validation_due(step)
}

#[pyfunction]
fn derive_seed(seed: u64, stream: u64) -> u64 {
    transfer::derive_seed(seed, stream)
}

/// Labelled images `[count, channels, height, width]` scaled to `[0, 1]`.
#[pyclass(name = "Dataset", module = "fast_transfer")]
#[derive(Clone)]
struct PyDataset(LabeledDataset);

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.0.class_count()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    #[getter]
    fn image_shape(&self) -> Vec<usize> {
        self.0.image_shape().to_vec()
    }

    fn images(&self) -> PyTensor {
        PyTensor(self.0.images().clone())
    }

    fn class_histogram(&self) -> Vec<usize> {
        self.0.class_histogram()
    }

    /// Keeps the listed classes, relabelled `0..k` in the given order.
    fn select_classes(&self, classes: Vec<usize>) -> PyResult<Self> {
        self.0.select_classes(&classes).map(Self).map_err(py_err)
    }

    /// Stratified `(rest, holdout)` split.
    fn split(&self, fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = data::stratified_split(&self.0, fraction, seed).map_err(py_err)?;
        Ok((Self(a), Self(b)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(len={}, classes={}, image_shape={:?})",
            self.0.len(),
            self.0.class_count(),
            self.0.image_shape()
        )
    }
}

#[pyfunction]
fn synth_blobs(n_classes: usize, per_class: usize, image_size: usize, seed: u64) -> PyResult<PyDataset> {
    data::synth_blobs(n_classes, per_class, image_size, seed)
        .map(PyDataset)
        .map_err(py_err)
}

#[pyfunction]
fn load_idx(images: PathBuf, labels: PathBuf) -> PyResult<PyDataset> {
    data::load_idx(&images, &labels).map(PyDataset).map_err(py_err)
}

/// Bias-free softmax head `Z = A Wᵀ`.
#[pyclass(name = "ClassifierHead", module = "fast_transfer")]
struct PyHead(nn::ClassifierHead);

#[pymethods]
impl PyHead {
    /// `init` is one of zero, normal, kaiming_fan_in, kaiming_fan_out,
    /// xavier_uniform; `scale` is ε for zero and σ for normal.
    #[new]
    #[pyo3(signature = (classes, features, init = "zero", scale = None, seed = 0))]
    fn new(classes: usize, features: usize, init: &str, scale: Option<f64>, seed: u64) -> PyResult<Self> {
        Ok(Self(nn::ClassifierHead::new(classes, features, parse_init(init, scale)?, seed)))
    }

    fn forward(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(tensor_rows(&self.0.forward(&rows_tensor(features)?).map_err(py_err)?))
    }

    /// `(grad_W, grad_A)` of the batch-mean loss for error `delta = Y − Ŷ`.
    fn backward(&self, features: Vec<Vec<f64>>, delta: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (gw, ga) = self
            .0
            .backward(&rows_tensor(features)?, &rows_tensor(delta)?)
            .map_err(py_err)?;
        Ok((tensor_rows(&gw), tensor_rows(&ga)))
    }

    #[getter]
    fn weight(&self) -> Vec<Vec<f64>> {
        tensor_rows(self.0.weight())
    }

    fn frobenius_norm(&self) -> f64 {
        tensor::frobenius_norm(self.0.weight())
    }
}

fn adp_dict<'py>(py: Python<'py>, r: &AdpRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", r.step)?;
    d.set_item("target_top1", r.target_top1)?;
    d.set_item("target_top5", r.target_top5)?;
    d.set_item("source_top1", r.source_top1)?;
    d.set_item("best_val_step", r.best_val_step)?;
    d.set_item("w_fro", r.w_fro)?;
    d.set_item("theta_dist", r.theta_dist)?;
    Ok(d)
}

fn step_dict<'py>(py: Python<'py>, r: &StepRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", r.step)?;
    d.set_item("loss", r.loss)?;
    d.set_item("entropy", r.entropy)?;
    d.set_item("delta_sq", r.delta_sq)?;
    d.set_item("feature_grad_norm", r.feature_grad_norm)?;
    d.set_item("w_fro", r.w_fro)?;
    d.set_item("theta_dist", r.theta_dist)?;
    d.set_item("val_acc", r.val_acc)?;
    Ok(d)
}

/// One finished fine-tuning run.
#[pyclass(name = "TrainRun", module = "fast_transfer")]
struct PyTrainRun(TrainRun);

#[pymethods]
impl PyTrainRun {
    #[getter]
    fn seed(&self) -> u64 {
        self.0.config.seed
    }

    #[getter]
    fn transition_step(&self) -> Option<usize> {
        self.0.transition_step
    }

    /// ADP records as dicts, one per deployment checkpoint.
    fn adp<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0.adp.records.iter().map(|r| adp_dict(py, r)).collect()
    }

    /// Per-step log as dicts.
    fn steps<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0.steps.iter().map(|r| step_dict(py, r)).collect()
    }

    fn adp_csv(&self) -> String {
        self.0.adp.to_csv()
    }

    fn metrics_csv(&self) -> String {
        transfer::metrics_csv(&self.0.steps)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(py_err)
    }
}

/// A TOML experiment: pretrains (or reuses) the source model once, then fine-tunes per seed.
#[pyclass(name = "Experiment", module = "fast_transfer")]
struct PyExperiment {
    config: ExperimentConfig,
    setup: Option<DeskSetup>,
}

impl PyExperiment {
    fn setup(&mut self, py: Python<'_>) -> PyResult<&DeskSetup> {
        if self.setup.is_none() {
            let cfg = &self.config;
            let setup = py
                .allow_threads(|| {
                    let corpus = cfg.load_corpus()?;
                    let d = &cfg.data;
                    DeskSetup::build(&corpus, &d.source_classes, &d.target_classes, &d.split, &cfg.pretrain_config())
                })
                .map_err(py_err)?;
            self.setup = Some(setup);
        }
        Ok(self.setup.as_ref().expect("just built"))
    }
}

#[pymethods]
impl PyExperiment {
    #[new]
    fn new(config_path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            config: ExperimentConfig::load(&config_path).map_err(py_err)?,
            setup: None,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, base_dir = None))]
    fn from_toml(text: &str, base_dir: Option<PathBuf>) -> PyResult<Self> {
        let mut config = ExperimentConfig::from_toml(text).map_err(py_err)?;
        config.base_dir = base_dir.unwrap_or_default();
        Ok(Self { config, setup: None })
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.config.finetune.seeds.clone()
    }

    /// Top-1 accuracy of the pretrained source model on the source test split.
    fn source_accuracy(&mut self, py: Python<'_>) -> PyResult<f64> {
        self.setup(py)?.source_accuracy().map_err(py_err)
    }

    fn finetune(&mut self, py: Python<'_>, seed: u64) -> PyResult<PyTrainRun> {
        let cfg = self.config.finetune_config(seed);
        let with_source = self.config.eval.source_retention;
        let setup = self.setup(py)?;
        py.allow_threads(|| setup.run(&cfg, with_source))
            .map(PyTrainRun)
            .map_err(py_err)
    }
}

/// `(name, passed, detail)` for every module property and analytic criterion.
#[pyfunction]
fn verify(py: Python<'_>) -> PyResult<Vec<(String, bool, String)>> {
    py.allow_threads(|| -> fast_transfer::Result<Vec<(String, bool, String)>> {
        let mut out: Vec<_> = fast_transfer::verify::module_properties()?
            .into_iter()
            .map(|p| (p.name.to_string(), p.passed, p.detail))
            .collect();
        out.extend(
            fast_transfer::verify::analytic_criteria()?
                .into_iter()
                .map(|c| (format!("criterion {}: {}", c.id, c.name), c.passed, c.detail)),
        );
        Ok(out)
    })
    .map_err(py_err)
}

#[pymodule]
#[pyo3(name = "fast_transfer")]
fn fast_transfer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyHead>()?;
    m.add_class::<PyTrainRun>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(softmax_rows, m)?)?;
    m.add_function(wrap_pyfunction!(nll_loss, m)?)?;
    m.add_function(wrap_pyfunction!(prediction_error, m)?)?;
    m.add_function(wrap_pyfunction!(fibonacci_checkpoints, m)?)?;
    m.add_function(wrap_pyfunction!(validation_due, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(synth_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
