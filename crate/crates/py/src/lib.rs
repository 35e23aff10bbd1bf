//! Python bindings: cohorts, models, staged training, checkpoints and the
//! evaluation harness. Volumes cross the boundary as `(shape, flat list)`.

use std::path::PathBuf;

use age2hie::config::RunConfig;
use age2hie::data::{self as d, Site, Task};
use age2hie::eval::{self as e, ScratchArm, TransferArm};
use age2hie::optim::StageSchedule;
use age2hie::pipeline::{self as p, checkpoint};
use age2hie::rng::seeded;
use age2hie::tensor::Tensor;
use age2hie::{Error, Partition, Variant};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for age2hie::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Tensor<f32>> {
    Tensor::from_vec(shape, data).py()
}

/// Architecture choice: `variant` is resnet18, resnet34 or resnet50.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct ModelConfig {
    inner: age2hie::ModelConfig,
}

#[pymethods]
impl ModelConfig {
    #[new]
    #[pyo3(signature = (variant = "resnet18", in_channels = 2, out_dim = 1, width = 64))]
    fn new(variant: &str, in_channels: usize, out_dim: usize, width: usize) -> PyResult<Self> {
        let inner = age2hie::ModelConfig::new(variant.parse::<Variant>().py()?, in_channels, out_dim, width);
        inner.validate().py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn in_channels(&self) -> usize {
        self.inner.in_channels
    }

    #[getter]
    fn out_dim(&self) -> usize {
        self.inner.out_dim
    }

    #[getter]
    fn feature_width(&self) -> usize {
        self.inner.feature_width()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "ModelConfig(variant='{}', in_channels={}, out_dim={}, width={})",
            c.variant, c.in_channels, c.out_dim, c.width
        )
    }
}

#[pyclass]
struct Model {
    inner: age2hie::Model<f32>,
}

#[pymethods]
impl Model {
    #[new]
    fn new(config: PyRef<'_, ModelConfig>, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: age2hie::Model::build(config.inner, &mut seeded(seed)).py()?,
        })
    }

    /// Eval-mode forward pass on an `[N, C, D, H, W]` batch.
    fn forward(&self, shape: Vec<usize>, data: Vec<f32>) -> PyResult<(Vec<usize>, Vec<f32>)> {
        let out = self.inner.forward_eval(&tensor(shape, data)?).py()?;
        Ok((out.shape().to_vec(), out.into_data()))
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.params().keys().cloned().collect()
    }

    fn parameter(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f32>)> {
        let t = self
            .inner
            .params()
            .get(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter {name:?}")))?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }

    /// SHA-256 over `"features"` or `"head"` parameters and buffers.
    fn checksum(&self, partition: &str) -> PyResult<String> {
        Ok(self.inner.checksum(partition_of(partition)?))
    }

    /// Like `checksum`, but over parameters only (no batch-norm statistics).
    fn param_checksum(&self, partition: &str) -> PyResult<String> {
        Ok(self.inner.param_checksum(partition_of(partition)?))
    }

    #[getter]
    fn config(&self) -> ModelConfig {
        ModelConfig {
            inner: *self.inner.config(),
        }
    }
}

fn partition_of(name: &str) -> PyResult<Partition> {
    match name {
        "features" => Ok(Partition::FeatureExtractor),
        "head" => Ok(Partition::Head),
        other => Err(PyValueError::new_err(format!("partition must be 'features' or 'head', got {other:?}"))),
    }
}

/// Per-stage optimization schedule with the published defaults.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Schedule {
    inner: StageSchedule,
}

#[pymethods]
impl Schedule {
    #[staticmethod]
    fn pretrain() -> Self {
        Self {
            inner: StageSchedule::pretrain(),
        }
    }

    #[staticmethod]
    fn refine() -> Self {
        Self {
            inner: StageSchedule::refine(),
        }
    }

    #[staticmethod]
    fn finetune() -> Self {
        Self {
            inner: StageSchedule::finetune(),
        }
    }

    /// Baseline matching the epochs and learning rates of refine + finetune.
    #[staticmethod]
    fn scratch(refine: PyRef<'_, Schedule>, finetune: PyRef<'_, Schedule>) -> Self {
        Self {
            inner: StageSchedule::scratch_matching(&refine.inner, &finetune.inner),
        }
    }

    #[pyo3(signature = (epochs = None, batch_size = None, weight_decay = None))]
    fn replace(&self, epochs: Option<usize>, batch_size: Option<usize>, weight_decay: Option<f64>) -> PyResult<Self> {
        let mut s = self.inner;
        s.epochs = epochs.unwrap_or(s.epochs);
        s.batch_size = batch_size.unwrap_or(s.batch_size);
        s.weight_decay = weight_decay.unwrap_or(s.weight_decay);
        s.validate().py()?;
        Ok(Self { inner: s })
    }

    fn lr_at(&self, epoch: usize) -> PyResult<f64> {
        self.inner.lr_at(epoch).py()
    }

    #[getter]
    fn stage(&self) -> String {
        self.inner.stage.to_string()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }
}

#[pyclass(frozen)]
struct Dataset {
    inner: d::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (n, dims = 16, seed = 0))]
    fn synth_age(n: usize, dims: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: d::synth_age_dataset(n, d::Dims::cube(dims), seed).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, dims = 16, seed = 0, site_mix = 0.5, gain = 1.0, offset = 0.0))]
    fn synth_hie(n: usize, dims: usize, seed: u64, site_mix: f64, gain: f64, offset: f64) -> PyResult<Self> {
        let shift = d::SiteShift { gain, offset };
        Ok(Self {
            inner: d::synth_hie_dataset(n, d::Dims::cube(dims), seed, site_mix, shift).py()?,
        })
    }

    /// `task` is "age" or "outcome".
    #[staticmethod]
    fn load_manifest(path: PathBuf, task: &str) -> PyResult<Self> {
        let task = match task {
            "age" => Task::Age,
            "outcome" => Task::Outcome,
            other => return Err(PyValueError::new_err(format!("task must be 'age' or 'outcome', got {other:?}"))),
        };
        Ok(Self {
            inner: d::load_manifest(path, task).py()?,
        })
    }

    /// Write VOL3 files and `manifest.csv` under `dir`; returns the manifest path.
    fn write(&self, dir: PathBuf) -> PyResult<PathBuf> {
        d::write_dataset(dir, &self.inner).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().into_iter().map(str::to_string).collect()
    }

    fn labels(&self) -> Vec<f64> {
        self.inner
            .samples()
            .iter()
            .map(|s| s.label.as_age().unwrap_or_else(|| s.label.as_outcome().map_or(f64::NAN, f64::from)))
            .collect()
    }

    fn sites(&self) -> Vec<String> {
        self.inner.samples().iter().map(|s| s.site.to_string()).collect()
    }

    fn volume(&self, index: usize) -> PyResult<(Vec<usize>, Vec<f32>)> {
        let s = self
            .inner
            .samples()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        let v = s.load().py()?;
        Ok((v.shape().to_vec(), v.data().to_vec()))
    }

    fn by_site(&self, site: &str) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.by_site(site.parse::<Site>().py()?),
        })
    }
}

#[pyclass(frozen)]
struct Checkpoint {
    inner: p::Checkpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load_checkpoint(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_checkpoint(path, &self.inner).py()
    }

    #[getter]
    fn stage(&self) -> String {
        self.inner.stage.to_string()
    }

    #[getter]
    fn loss_trace(&self) -> Vec<f64> {
        self.inner.meta.loss_trace.clone()
    }

    #[getter]
    fn config(&self) -> ModelConfig {
        ModelConfig {
            inner: *self.inner.config(),
        }
    }

    fn model(&self) -> Model {
        Model {
            inner: self.inner.model.clone(),
        }
    }
}

#[pyfunction]
fn pretrain(
    py: Python<'_>,
    data: PyRef<'_, Dataset>,
    config: PyRef<'_, ModelConfig>,
    schedule: PyRef<'_, Schedule>,
    seed: u64,
) -> PyResult<Checkpoint> {
    let (data, config, schedule) = (&data.inner, config.inner, schedule.inner);
    let inner = py.detach(|| p::pretrain(data, config, &schedule, seed)).py()?;
    Ok(Checkpoint { inner })
}

#[pyfunction]
fn refine(
    py: Python<'_>,
    pretrained: PyRef<'_, Checkpoint>,
    data: PyRef<'_, Dataset>,
    schedule: PyRef<'_, Schedule>,
    seed: u64,
) -> PyResult<Checkpoint> {
    let (ck, data, schedule) = (&pretrained.inner, &data.inner, schedule.inner);
    let inner = py.detach(|| p::refine(ck, data, &schedule, seed)).py()?;
    Ok(Checkpoint { inner })
}

#[pyfunction]
fn finetune(
    py: Python<'_>,
    refined: PyRef<'_, Checkpoint>,
    data: PyRef<'_, Dataset>,
    schedule: PyRef<'_, Schedule>,
    seed: u64,
) -> PyResult<Checkpoint> {
    let (ck, data, schedule) = (&refined.inner, &data.inner, schedule.inner);
    let inner = py.detach(|| p::finetune(ck, data, &schedule, seed)).py()?;
    Ok(Checkpoint { inner })
}

#[pyfunction]
fn train_scratch(
    py: Python<'_>,
    data: PyRef<'_, Dataset>,
    config: PyRef<'_, ModelConfig>,
    schedule: PyRef<'_, Schedule>,
    seed: u64,
) -> PyResult<Checkpoint> {
    let (data, config, schedule) = (&data.inner, config.inner, schedule.inner);
    let inner = py.detach(|| p::train_scratch(data, config, &schedule, seed)).py()?;
    Ok(Checkpoint { inner })
}

/// `[(id, class, probability_of_class_1)]` for an outcome checkpoint.
#[pyfunction]
fn predict(ck: PyRef<'_, Checkpoint>, data: PyRef<'_, Dataset>) -> PyResult<Vec<(String, u8, f64)>> {
    Ok(p::predict(&ck.inner, &data.inner)
        .py()?
        .into_iter()
        .map(|p| (p.id, p.class, p.probability))
        .collect())
}

/// Fold index of each id.
#[pyfunction]
fn kfold_split(ids: Vec<String>, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    Ok(e::kfold_split(&ids, k, seed).py()?.assignments.into_values().collect())
}

/// `(tp, tn, fp, fn, accuracy, sensitivity, specificity)`; rates in percent
/// or None when undefined.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn confusion_metrics(
    preds: Vec<u8>,
    labels: Vec<u8>,
) -> PyResult<(usize, usize, usize, usize, Option<f64>, Option<f64>, Option<f64>)> {
    let r = e::confusion_metrics(&preds, &labels).py()?;
    let c = r.counts;
    Ok((c.tp, c.tn, c.fp, c.fn_, r.accuracy, r.sensitivity, r.specificity))
}

/// k-fold cross-validation; returns the key=value report table. Passing a
/// pretrained checkpoint selects the transfer arm.
#[pyfunction]
#[pyo3(signature = (data, k = 5, seed = 0, pretrained = None, config = None, refine = None, finetune = None))]
fn cross_validate(
    py: Python<'_>,
    data: PyRef<'_, Dataset>,
    k: usize,
    seed: u64,
    pretrained: Option<PyRef<'_, Checkpoint>>,
    config: Option<PyRef<'_, ModelConfig>>,
    refine: Option<PyRef<'_, Schedule>>,
    finetune: Option<PyRef<'_, Schedule>>,
) -> PyResult<String> {
    let refine = refine.map_or_else(StageSchedule::refine, |s| s.inner);
    let finetune = finetune.map_or_else(StageSchedule::finetune, |s| s.inner);
    let data = &data.inner;
    let report = match (&pretrained, &config) {
        (Some(ck), _) => {
            let arm = TransferArm {
                pretrained: &ck.inner,
                refine,
                finetune,
            };
            py.detach(|| e::cross_validate(data, &arm, k, seed, 1))
        }
        (None, Some(c)) => {
            let arm = ScratchArm {
                config: c.inner,
                schedule: StageSchedule::scratch_matching(&refine, &finetune),
            };
            py.detach(|| e::cross_validate(data, &arm, k, seed, 1))
        }
        (None, None) => return Err(PyValueError::new_err("pass either pretrained or config")),
    }
    .py()?;
    Ok(report.render_table())
}

/// The default run configuration as key=value text.
#[pyfunction]
fn default_run_config() -> String {
    RunConfig::default().render()
}

#[pymodule]
#[pyo3(name = "age2hie")]
fn age2hie_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ModelConfig>()?;
    m.add_class::<Model>()?;
    m.add_class::<Schedule>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(train_scratch, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(kfold_split, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(default_run_config, m)?)?;
    Ok(())
}
