//! Python bindings: rollout files, transition graphs, advantages, training
//! and evaluation.

use std::collections::BTreeMap;

use graphgpo_core::credit::{advantage_table, group_normalize as normalize, CreditParams, Estimator};
use graphgpo_core::envs::EnvKind;
use graphgpo_core::graph::{aggregate, compute_distances, export_dot, Distance, DistanceMap, TransitionGraph};
use graphgpo_core::harness::{evaluate_kind, ExperimentConfig};
use graphgpo_core::policy::TabularPolicy;
use graphgpo_core::rollout::{read_rollouts, write_rollouts, TrajectorySet};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: graphgpo_core::Error) -> PyErr {
    match e {
        graphgpo_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A validated rollout group.
#[pyclass(name = "Rollouts", module = "graphgpo", frozen)]
struct PyRollouts {
    set: TrajectorySet,
}

#[pymethods]
impl PyRollouts {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        let set = read_rollouts(text.as_bytes()).map_err(to_py)?;
        Ok(PyRollouts { set })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let set = read_rollouts(std::io::BufReader::new(file)).map_err(to_py)?;
        Ok(PyRollouts { set })
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_rollouts(&self.set, &mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn task_id(&self) -> &str {
        &self.set.task_id
    }

    #[getter]
    fn r_succ(&self) -> f64 {
        self.set.r_succ
    }

    fn __len__(&self) -> usize {
        self.set.group_size()
    }

    fn returns(&self) -> Vec<f64> {
        self.set.returns()
    }

    fn outcomes(&self) -> Vec<String> {
        self.set
            .trajectories
            .iter()
            .map(|t| format!("{:?}", t.outcome).to_lowercase())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Rollouts(task_id={:?}, trajectories={}, steps={})",
            self.set.task_id,
            self.set.group_size(),
            self.set.total_steps()
        )
    }
}

/// The transition graph of one rollout group with its goal distances.
#[pyclass(name = "Graph", module = "graphgpo", frozen)]
struct PyGraph {
    rollouts: Py<PyRollouts>,
    graph: TransitionGraph,
    distances: DistanceMap,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(rollouts: Bound<'_, PyRollouts>) -> PyResult<Self> {
        let graph = aggregate(&rollouts.get().set).map_err(to_py)?;
        let distances = compute_distances(&graph).map_err(to_py)?;
        Ok(PyGraph {
            rollouts: rollouts.unbind(),
            graph,
            distances,
        })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    #[getter]
    fn d_max(&self) -> f64 {
        self.distances.d_max
    }

    /// Node labels in canonical key order.
    fn nodes(&self) -> Vec<String> {
        self.graph
            .nodes_by_key()
            .iter()
            .map(|&n| self.graph.key(n).describe())
            .collect()
    }

    /// `{label: distance}`; unreachable nodes map to `None`.
    fn distances(&self) -> BTreeMap<String, Option<f64>> {
        (0..self.graph.node_count())
            .map(|n| {
                let d = match self.distances.get(n) {
                    Distance::Finite(d) => Some(d),
                    Distance::Unreachable => None,
                };
                (self.graph.key(n).describe(), d)
            })
            .collect()
    }

    /// `(source, action, target, cost)` for every edge.
    fn edges(&self) -> Vec<(String, u32, String, f64)> {
        self.graph
            .edges()
            .iter()
            .map(|e| (self.graph.key(e.src).describe(), e.action, self.graph.key(e.dst).describe(), e.cost))
            .collect()
    }

    fn to_dot(&self) -> String {
        export_dot(&self.graph, &self.distances)
    }

    /// Advantage signals for this group as a dict with `edge_reward`,
    /// `edge_adv`, `episode_adv` and `step_adv`.
    #[pyo3(signature = (omega=0.1, beta_g=1.0, beta_e=1.0, algo="graphgpo", gigpo_lambda=0.95))]
    fn advantages<'py>(
        &self,
        py: Python<'py>,
        omega: f64,
        beta_g: f64,
        beta_e: f64,
        algo: &str,
        gigpo_lambda: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let estimator: Estimator = algo.parse().map_err(to_py)?;
        let set = &self.rollouts.get().set;
        let p = CreditParams {
            omega,
            r_succ: set.r_succ,
            beta_g,
            beta_e,
            gigpo_lambda,
            ..CreditParams::default()
        };
        p.validate().map_err(to_py)?;
        let table = advantage_table(estimator, set, &self.graph, &self.distances, &p);
        let out = PyDict::new(py);
        out.set_item("edge_reward", table.edge_reward)?;
        out.set_item("edge_adv", table.edge_adv)?;
        out.set_item("episode_adv", table.episode_adv)?;
        out.set_item("step_adv", table.step_adv)?;
        Ok(out)
    }
}

/// Zero-mean, unit population deviation; groups below the floor map to 0.
#[pyfunction]
#[pyo3(signature = (values, std_floor=1e-8))]
fn group_normalize(values: Vec<f64>, std_floor: f64) -> Vec<f64> {
    normalize(&values, None, std_floor)
}

/// Trains with `key=value` settings given as keyword arguments, e.g.
/// `train(env="keydoor", iters=20, seed=3)`. Returns
/// `(metrics_csv, policy_checkpoint)`.
#[pyfunction]
#[pyo3(signature = (**settings))]
fn train(py: Python<'_>, settings: Option<&Bound<'_, PyDict>>) -> PyResult<(String, String)> {
    let mut pairs = BTreeMap::new();
    if let Some(settings) = settings {
        for (k, v) in settings.iter() {
            let value = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.to_string(),
            };
            pairs.insert(k.extract::<String>()?, value);
        }
    }
    let cfg = ExperimentConfig::from_pairs(&pairs).map_err(to_py)?;
    let outcome = py.detach(|| graphgpo_core::harness::train(&cfg)).map_err(to_py)?;
    let mut ckpt = Vec::new();
    outcome.policy.write_checkpoint(&mut ckpt).map_err(to_py)?;
    let ckpt = String::from_utf8(ckpt).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((outcome.metrics.to_csv(), ckpt))
}

/// Success rate of a checkpoint (or the uniform policy when `None`).
#[pyfunction]
#[pyo3(signature = (env, checkpoint=None, episodes=100, temperature=0.4, seed=0))]
fn evaluate(env: &str, checkpoint: Option<&str>, episodes: usize, temperature: f64, seed: u64) -> PyResult<f64> {
    let kind: EnvKind = env.parse().map_err(to_py)?;
    let pol = match checkpoint {
        Some(text) => TabularPolicy::read_checkpoint(text.as_bytes()).map_err(to_py)?,
        None => TabularPolicy::new(),
    };
    evaluate_kind(kind, None, &pol, episodes, temperature, seed).map_err(to_py)
}

#[pymodule]
fn graphgpo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRollouts>()?;
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(group_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("CSV_HEADER", graphgpo_core::harness::CSV_HEADER)?;
    Ok(())
}
