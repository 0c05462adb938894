//! Python bindings: architectures, parameter sets, the forward pass,
//! aggregation, partitioning helpers and whole experiments.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use modfl_core::federation::{self, RoundMetrics};
use modfl_core::harness::{self, ExperimentConfig};
use modfl_core::nn::{self, gradcheck, Tensor};
use modfl_core::{data, registry, Error};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        2 => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A registered network architecture.
#[pyclass(name = "ModelSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: registry::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[getter]
    fn arch_id(&self) -> String {
        self.inner.arch_id.clone()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape.clone()
    }

    #[getter]
    fn split_point(&self) -> usize {
        self.inner.split_point
    }

    /// Output shape of every layer, excluding the batch axis.
    fn shapes(&self) -> PyResult<Vec<Vec<usize>>> {
        self.inner.shapes().map_err(to_py)
    }

    fn with_operation_layers(&self, n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.clone().with_operation_layers(n).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec({}, {} layers, split at {})",
            self.inner.arch_id,
            self.inner.layers.len(),
            self.inner.split_point
        )
    }
}

/// Named weight and bias tensors.
#[pyclass(name = "ParamSet", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParamSet {
    inner: nn::ParamSet,
}

#[pymethods]
impl PyParamSet {
    fn names(&self) -> Vec<String> {
        self.inner.names().map(String::from).collect()
    }

    fn num_scalars(&self) -> usize {
        self.inner.num_scalars()
    }

    /// `{name: (weight_shape, weights, bias_shape, bias)}` with flat lists.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for e in self.inner.entries() {
            d.set_item(
                &e.name,
                (
                    e.weights.shape().to_vec(),
                    e.weights.data().to_vec(),
                    e.bias.shape().to_vec(),
                    e.bias.data().to_vec(),
                ),
            )?;
        }
        Ok(d)
    }

    fn flatten(&self) -> Vec<f64> {
        self.inner.flatten()
    }

    fn bit_eq(&self, other: &PyParamSet) -> bool {
        self.inner.bit_eq(&other.inner)
    }

    fn max_abs_diff(&self, other: &PyParamSet) -> Option<f64> {
        self.inner.max_abs_diff(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
fn build_arch(arch_id: &str) -> PyResult<PyModelSpec> {
    Ok(PyModelSpec {
        inner: registry::build_arch(arch_id).map_err(to_py)?,
    })
}

#[pyfunction]
fn arch_ids() -> Vec<&'static str> {
    registry::ARCH_IDS.to_vec()
}

#[pyfunction]
fn init_params(spec: &PyModelSpec, seed: u64) -> PyResult<PyParamSet> {
    Ok(PyParamSet {
        inner: nn::init_params(&spec.inner, seed).map_err(to_py)?,
    })
}

/// Logits for a flat batch of `batch_size` samples shaped like the spec's input.
#[pyfunction]
fn forward(spec: &PyModelSpec, params: &PyParamSet, batch: Vec<f64>, batch_size: usize) -> PyResult<Vec<Vec<f64>>> {
    let mut shape = vec![batch_size];
    shape.extend(&spec.inner.input_shape);
    let x = Tensor::new(shape, batch).map_err(to_py)?;
    let (logits, _) = nn::forward(&spec.inner, &params.inner, &x).map_err(to_py)?;
    Ok((0..logits.rows()).map(|r| logits.row(r).to_vec()).collect())
}

/// Mean cross-entropy and its gradient for a flat batch.
#[pyfunction]
fn loss_and_grad(spec: &PyModelSpec, params: &PyParamSet, batch: Vec<f64>, labels: Vec<usize>) -> PyResult<(f64, PyParamSet)> {
    let mut shape = vec![labels.len()];
    shape.extend(&spec.inner.input_shape);
    let x = Tensor::new(shape, batch).map_err(to_py)?;
    let (loss, grads) = nn::loss_and_grad(&spec.inner, &params.inner, &x, &labels).map_err(to_py)?;
    Ok((loss, PyParamSet { inner: grads }))
}

/// Unweighted mean of compatible parameter sets, in list order.
#[pyfunction]
fn aggregate(sets: Vec<PyRef<'_, PyParamSet>>) -> PyResult<PyParamSet> {
    let refs: Vec<&nn::ParamSet> = sets.iter().map(|s| &s.inner).collect();
    Ok(PyParamSet {
        inner: federation::aggregate(&refs).map_err(to_py)?,
    })
}

#[pyfunction]
fn make_label_sets(num_groups: usize, labels_per_group: usize) -> PyResult<Vec<Vec<usize>>> {
    let sets = data::make_label_sets(num_groups, labels_per_group).map_err(to_py)?;
    Ok(sets.into_iter().map(|s| s.into_iter().collect()).collect())
}

/// `(pixels, labels)`: pixels flat, one `resolution x resolution` plane per sample.
#[pyfunction]
fn generate_synthetic(resolution: usize, n_per_class: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let ds = data::generate_synthetic(resolution, n_per_class, seed).map_err(to_py)?;
    Ok((ds.images().into_data(), ds.labels().to_vec()))
}

/// `[(kind, seed, max_relative_error)]` for the finite-difference suite.
#[pyfunction]
fn check_gradients(instances: usize, seed: u64) -> PyResult<Vec<(String, u64, f64)>> {
    let reports = gradcheck::run_suite(instances, seed).map_err(to_py)?;
    Ok(reports.into_iter().map(|r| (r.kind.to_string(), r.seed, r.max_rel_error)).collect())
}

/// Parses, validates and normalises a TOML configuration.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    Ok(harness::parse_config_str(text).map_err(to_py)?.to_toml())
}

fn metrics_dict<'py>(py: Python<'py>, m: &RoundMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", m.round)?;
    d.set_item("framework", m.framework.name())?;
    d.set_item("per_client_accuracy", &m.per_client_accuracy)?;
    d.set_item("per_client_loss", &m.per_client_loss)?;
    d.set_item("per_client_train_loss", &m.per_client_train_loss)?;
    d.set_item("cohort_mean", &m.cohort_mean)?;
    d.set_item("cohort_loss", &m.cohort_loss)?;
    d.set_item("cohort_train_loss", &m.cohort_train_loss)?;
    d.set_item("global_accuracy", &m.global_accuracy)?;
    Ok(d)
}

/// A running experiment, stepped one round at a time.
#[pyclass(name = "Simulation")]
struct PySimulation {
    inner: federation::Simulation,
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(py: Python<'_>, config_toml: &str) -> PyResult<Self> {
        let config: ExperimentConfig = harness::parse_config_str(config_toml).map_err(to_py)?;
        let inner = py.detach(|| federation::Simulation::new(&config)).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = py.detach(|| self.inner.step()).map_err(to_py)?;
        metrics_dict(py, &m)
    }

    #[getter]
    fn round(&self) -> usize {
        self.inner.round()
    }

    /// Full model currently held by each client, by client id.
    fn client_models(&self) -> PyResult<BTreeMap<usize, PyParamSet>> {
        self.inner
            .clients()
            .iter()
            .map(|c| Ok((c.id, PyParamSet { inner: c.model().map_err(to_py)? })))
            .collect()
    }

    /// `(config_group, op_group)` of each client, by client id.
    fn groups(&self) -> BTreeMap<usize, (usize, usize)> {
        self.inner
            .clients()
            .iter()
            .map(|c| (c.id, (c.config_group, c.op_group)))
            .collect()
    }

    fn distinct_models(&self) -> PyResult<usize> {
        federation::distinct_models(self.inner.clients()).map_err(to_py)
    }
}

/// Runs every round of a TOML configuration; returns one dict per round.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config = harness::parse_config_str(config_toml).map_err(to_py)?;
    let metrics = py.detach(|| federation::run_experiment(&config)).map_err(to_py)?;
    metrics.iter().map(|m| metrics_dict(py, m)).collect()
}

#[pymodule]
fn modfl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyParamSet>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(arch_ids, m)?)?;
    m.add_function(wrap_pyfunction!(build_arch, m)?)?;
    m.add_function(wrap_pyfunction!(init_params, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(loss_and_grad, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(make_label_sets, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(check_gradients, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
