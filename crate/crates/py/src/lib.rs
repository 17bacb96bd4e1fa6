//! Python bindings for the `porenet` library.

use std::path::PathBuf;

use porenet::adjoint;
use porenet::eval::{self, EvalModel};
use porenet::gnn::{gnn_forward, Checkpoint, ModelKind, ModelParameters};
use porenet::network::{self, DatasetSpec, PoreNetwork};
use porenet::solver::{self, ShapeFactor};
use porenet::training::{self, Optimizer, TrainConfig, Trainer};
use porenet::{Error, ErrorKind};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Numeric => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// A pore network: pores, throats, features, boundary sets and physical constants.
#[pyclass(module = "porenet_py", name = "Network", from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: PoreNetwork,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: PoreNetwork::from_json(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: PoreNetwork::load(path).map_err(to_py)?,
        })
    }

    /// Random synthetic network; `truth_seed` attaches a target permeability.
    #[staticmethod]
    #[pyo3(signature = (seed, pores, coordination = 4.0, truth_seed = None))]
    fn generate(
        seed: u64,
        pores: usize,
        coordination: f64,
        truth_seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut net = network::generate_synthetic(seed, pores, coordination).map_err(to_py)?;
        if let Some(t) = truth_seed {
            net = network::synthetic_truth(&net, t).map_err(to_py)?;
        }
        Ok(PyNetwork { inner: net })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn num_pores(&self) -> usize {
        self.inner.num_pores
    }

    #[getter]
    fn num_throats(&self) -> usize {
        self.inner.num_throats
    }

    #[getter]
    fn throat_endpoints(&self) -> Vec<[usize; 2]> {
        self.inner.throat_endpoints.clone()
    }

    #[getter]
    fn inlet_pores(&self) -> Vec<usize> {
        self.inner.inlet_pores.clone()
    }

    #[getter]
    fn outlet_pores(&self) -> Vec<usize> {
        self.inner.outlet_pores.clone()
    }

    #[getter]
    fn target_permeability(&self) -> Option<f64> {
        self.inner.target_permeability
    }

    #[setter]
    fn set_target_permeability(&mut self, value: Option<f64>) {
        self.inner.target_permeability = value;
    }

    /// Per-throat conductance of an idealized conduit geometry.
    #[pyo3(signature = (shape = "cones-cylinders"))]
    fn analytic_conductance(&self, shape: &str) -> PyResult<Vec<f64>> {
        solver::analytic_conductance(&self.inner, parse::<ShapeFactor>(shape)?).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let target = self.inner.target_permeability.map_or("None".to_string(), |k| format!("{k:e}"));
        format!(
            "Network(num_pores={}, num_throats={}, target_permeability={target})",
            self.inner.num_pores, self.inner.num_throats
        )
    }
}

/// Seeded dataset of networks carrying target permeabilities.
#[pyfunction]
#[pyo3(signature = (seed, count, pores, coordination = 4.0, pores_jitter = 0.0, coordination_jitter = 0.0))]
fn generate_dataset(
    py: Python<'_>,
    seed: u64,
    count: usize,
    pores: usize,
    coordination: f64,
    pores_jitter: f64,
    coordination_jitter: f64,
) -> PyResult<Vec<PyNetwork>> {
    let mut spec = DatasetSpec::new(seed, count, pores, coordination);
    spec.pores_jitter = pores_jitter;
    spec.coordination_jitter = coordination_jitter;
    let nets = py
        .detach(|| network::generate_dataset(&spec))
        .map_err(to_py)?;
    Ok(nets.into_iter().map(|inner| PyNetwork { inner }).collect())
}

/// Pressures, inlet flow and permeability for the given throat conductances.
#[pyfunction]
fn solve<'py>(py: Python<'py>, network: &PyNetwork, g: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let sol = solver::forward(&network.inner, &g).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("pressures", sol.pressures.clone())?;
    d.set_item(
        "throat_flows",
        solver::throat_flows(&network.inner, &g, &sol.pressures),
    )?;
    d.set_item("inlet_flow", sol.inlet_flow)?;
    d.set_item("permeability", sol.permeability)?;
    d.set_item("darcy_factor", sol.darcy_factor)?;
    Ok(d)
}

/// `dJ/dg` of `J = ½ (K − K*)²` by the discrete adjoint.
#[pyfunction]
fn loss_gradient(network: &PyNetwork, g: Vec<f64>, target: f64) -> PyResult<Vec<f64>> {
    let sol = solver::forward(&network.inner, &g).map_err(to_py)?;
    Ok(adjoint::adjoint_solve(&network.inner, &g, &sol, target)
        .map_err(to_py)?
        .dj_dg)
}

/// `dK/dg` by the discrete adjoint.
#[pyfunction]
fn permeability_gradient(network: &PyNetwork, g: Vec<f64>) -> PyResult<Vec<f64>> {
    let sol = solver::forward(&network.inner, &g).map_err(to_py)?;
    adjoint::permeability_gradient(&network.inner, &g, &sol).map_err(to_py)
}

/// Adjoint against central finite differences.
#[pyfunction]
#[pyo3(signature = (network, g, target, delta = 1e-6, tolerance = 1e-5))]
fn gradient_check<'py>(
    py: Python<'py>,
    network: &PyNetwork,
    g: Vec<f64>,
    target: f64,
    delta: f64,
    tolerance: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let c = adjoint::gradient_check(&network.inner, &g, target, delta, tolerance).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("adjoint", c.adjoint.clone())?;
    d.set_item("finite_difference", c.finite_difference.clone())?;
    d.set_item("max_relative_error", c.max_relative_error)?;
    d.set_item("passed", c.passed())?;
    Ok(d)
}

/// MAE, RMSE, MAPE (percent) and R²; undefined entries are `None`.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, y: Vec<f64>, y_hat: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::metrics(&y, &y_hat).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("n", m.n)?;
    d.set_item("mae", m.mae)?;
    d.set_item("rmse", m.rmse)?;
    d.set_item("mape_percent", m.mape_percent)?;
    d.set_item("r_squared", m.r_squared)?;
    Ok(d)
}

/// A trained model together with its normalization statistics.
#[pyclass(module = "porenet_py", name = "Model", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    checkpoint: Checkpoint,
    params: ModelParameters,
}

impl PyModel {
    fn new(checkpoint: Checkpoint) -> PyResult<Self> {
        let params = checkpoint.parameters().map_err(to_py)?;
        Ok(PyModel { checkpoint, params })
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PyModel::new(Checkpoint::load(path).map_err(to_py)?)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        PyModel::new(Checkpoint::from_json(text).map_err(to_py)?)
    }

    fn to_json(&self) -> String {
        self.checkpoint.to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> String {
        self.checkpoint.model.to_string()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.checkpoint.progress.epoch
    }

    #[getter]
    fn train_loss(&self) -> Vec<f64> {
        self.checkpoint.progress.train_loss.clone()
    }

    /// Predicted permeability of a raw network.
    fn predict(&self, network: &PyNetwork) -> PyResult<f64> {
        let model = EvalModel::Trained(self.checkpoint.clone());
        eval::predict_raw(&model, Some(&self.params), &network.inner).map_err(to_py)
    }

    /// Per-throat conductances predicted by the embedded GNN for a raw network.
    fn conductances(&self, network: &PyNetwork) -> PyResult<Vec<f64>> {
        let ModelParameters::Embedded(p) = &self.params else {
            return Err(PyValueError::new_err(
                "baseline models do not predict conductances",
            ));
        };
        let net = network::normalize(&network.inner, &self.checkpoint.norm_stats).map_err(to_py)?;
        Ok(gnn_forward(&net, p).map_err(to_py)?.0)
    }

    /// Metrics and predictions over networks carrying targets.
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        networks: Vec<PyNetwork>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let data: Vec<PoreNetwork> = networks.into_iter().map(|n| n.inner).collect();
        let model = EvalModel::Trained(self.checkpoint.clone());
        let result = py.detach(|| eval::evaluate(&model, &data)).map_err(to_py)?;
        let d = metrics(
            py,
            result.predictions.iter().map(|p| p.target).collect(),
            result.predictions.iter().map(|p| p.predicted).collect(),
        )?;
        d.set_item(
            "predictions",
            result
                .predictions
                .iter()
                .map(|p| p.predicted)
                .collect::<Vec<f64>>(),
        )?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, num_params={}, epochs={})",
            self.checkpoint.model.to_string(),
            self.params.num_params(),
            self.checkpoint.progress.epoch
        )
    }
}

/// Trains a model and returns it with one `(epoch, train_loss, val_loss)` tuple per epoch.
#[pyfunction]
#[pyo3(signature = (
    networks,
    model = "embedded",
    learning_rate = 0.05,
    epochs = 200,
    batch_size = 10,
    seed = 0,
    hidden = 32,
    predictor = 32,
    validation_fraction = 0.1,
    optimizer = "gd",
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    networks: Vec<PyNetwork>,
    model: &str,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    hidden: usize,
    predictor: usize,
    validation_fraction: f64,
    optimizer: &str,
) -> PyResult<(PyModel, Vec<(usize, f64, Option<f64>)>)> {
    let optimizer = match optimizer {
        "gd" => Optimizer::Gd,
        "adam" => Optimizer::adam(),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown optimizer {other:?}"
            )))
        }
    };
    let config = TrainConfig {
        model: parse::<ModelKind>(model)?,
        learning_rate,
        num_epochs: epochs,
        batch_size,
        seed,
        validation_fraction,
        dims: porenet::gnn::GnnDims::new(hidden, hidden, predictor),
        optimizer,
        ..TrainConfig::default()
    };
    let data: Vec<PoreNetwork> = networks.into_iter().map(|n| n.inner).collect();
    let (state, log) = py
        .detach(|| {
            let mut log = Vec::new();
            let mut trainer = Trainer::new(config, &data)?;
            trainer.run(|l| log.push((l.epoch, l.train_loss, l.val_loss)))?;
            Ok::<_, Error>((trainer.state, log))
        })
        .map_err(to_py)?;
    Ok((PyModel::new(state.checkpoint())?, log))
}

/// Permeability of a raw network under a named analytic conduit geometry.
#[pyfunction]
#[pyo3(signature = (network, shape = "cones-cylinders"))]
fn analytic_permeability(network: &PyNetwork, shape: &str) -> PyResult<f64> {
    let model = EvalModel::Analytic(parse::<ShapeFactor>(shape)?);
    eval::predict_raw(&model, None, &network.inner).map_err(to_py)
}

/// Mean scaled loss of `model` on networks with targets.
#[pyfunction]
#[pyo3(signature = (model, networks, loss_scale = None))]
fn mean_loss(model: &PyModel, networks: Vec<PyNetwork>, loss_scale: Option<f64>) -> PyResult<f64> {
    let stats = &model.checkpoint.norm_stats;
    let normalized: Vec<PoreNetwork> = networks
        .iter()
        .map(|n| network::normalize(&n.inner, stats))
        .collect::<Result<_, _>>()
        .map_err(to_py)?;
    let refs: Vec<&PoreNetwork> = normalized.iter().collect();
    let scale = loss_scale.unwrap_or(model.checkpoint.progress.loss_scale);
    training::mean_loss(&model.params, &refs, scale).map_err(to_py)
}

#[pymodule]
fn porenet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(permeability_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_permeability, m)?)?;
    m.add_function(wrap_pyfunction!(mean_loss, m)?)?;
    m.add("NODE_FEATURES", network::NODE_FEATURES.to_vec())?;
    m.add("EDGE_FEATURES", network::EDGE_FEATURES.to_vec())?;
    Ok(())
}
