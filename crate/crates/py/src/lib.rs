//! Python bindings: environments, automata, training, testing, the exact oracle
//! and robustness sweeps. Reports come back as plain dicts.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use ldba_synth_core::automaton::LdbaSpec;
use ldba_synth_core::benchmarks;
use ldba_synth_core::envs::{EnvState, GridEnv};
use ldba_synth_core::eval::{self, SweepConfig, TestConfig};
use ldba_synth_core::learner::{self, ModelFile, ModelFileError};
use ldba_synth_core::oracle::{self as core_oracle, OracleError, DEFAULT_STATE_CAP};
use ldba_synth_core::product::{Product, ProductState, RewardSpec};

create_exception!(ldba_synth, IncompatibleModelError, PyValueError);
create_exception!(ldba_synth, SizeCapError, PyRuntimeError);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn oracle_err(e: OracleError) -> PyErr {
    match e {
        OracleError::SizeCap { .. } => SizeCapError::new_err(e.to_string()),
        other => runtime_err(other),
    }
}

/// Parses JSON text with Python's `json` module.
fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn py_to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<String> {
    py.import("json")?.call_method1("dumps", (obj,))?.extract()
}

/// A slippery labelled grid world.
#[pyclass(name = "GridEnv", module = "ldba_synth", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGridEnv {
    inner: GridEnv,
}

#[pymethods]
impl PyGridEnv {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        GridEnv::from_json(text).map(|inner| PyGridEnv { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn actions(&self) -> Vec<&'static str> {
        self.inner.actions().iter().map(|a| a.name()).collect()
    }

    #[getter]
    fn initial_state(&self) -> (usize, usize) {
        let s = self.inner.initial_state();
        (s.row, s.col)
    }

    /// Propositions that hold at a cell, sorted.
    fn label(&self, row: usize, col: usize) -> PyResult<Vec<String>> {
        let s = EnvState::new(row, col);
        if !self.inner.contains(s) {
            return Err(value_err(format!("cell {s} is outside the grid")));
        }
        Ok(self.inner.state_label(s).iter().map(|l| l.to_string()).collect())
    }

    fn __repr__(&self) -> String {
        format!("GridEnv({}x{}, slip={})", self.inner.height(), self.inner.width(), self.inner.slip_probability())
    }
}

/// A limit-deterministic Büchi automaton.
#[pyclass(name = "Ldba", module = "ldba_synth", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLdba {
    inner: Arc<LdbaSpec>,
}

#[pymethods]
impl PyLdba {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        LdbaSpec::from_json(text).map(|s| PyLdba { inner: Arc::new(s) }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    #[getter]
    fn states(&self) -> Vec<i32> {
        self.inner.states().to_vec()
    }

    #[getter]
    fn initial_state(&self) -> i32 {
        self.inner.initial_state()
    }

    #[getter]
    fn alphabet(&self) -> Vec<String> {
        self.inner.alphabet().to_vec()
    }

    #[getter]
    fn accepting_sets(&self) -> Vec<Vec<i32>> {
        self.inner.accepting_sets().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Ldba(states={}, accepting_sets={})",
            self.inner.states().len(),
            self.inner.accepting_sets().len()
        )
    }
}

/// Training hyper-parameters. Keyword arguments use the command-line names.
#[pyclass(name = "Hyperparams", module = "ldba_synth", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHyperparams {
    inner: learner::Hyperparams,
}

#[pymethods]
impl PyHyperparams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let inner = match kwargs {
            Some(kw) => serde_json::from_str(&py_to_json(py, kw.as_any())?).map_err(value_err)?,
            None => learner::Hyperparams::default(),
        };
        PyHyperparams::checked(inner)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        PyHyperparams::checked(serde_json::from_str(text).map_err(value_err)?)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("hyper-parameters serialize")
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.to_json())
    }

    /// Copy with some fields replaced.
    #[pyo3(signature = (**kwargs))]
    fn replace(&self, py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut doc: serde_json::Value = serde_json::to_value(&self.inner).expect("hyper-parameters serialize");
        if let Some(kw) = kwargs {
            let patch: serde_json::Value = serde_json::from_str(&py_to_json(py, kw.as_any())?).map_err(value_err)?;
            for (k, v) in patch.as_object().into_iter().flatten() {
                doc[k] = v.clone();
            }
        }
        PyHyperparams::checked(serde_json::from_value(doc).map_err(value_err)?)
    }

    fn __getattr__<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        let dict = self.to_dict(py)?;
        dict.get_item(name)
            .map_err(|_| pyo3::exceptions::PyAttributeError::new_err(format!("no hyper-parameter '{name}'")))
    }

    fn __repr__(&self) -> String {
        format!("Hyperparams({})", self.to_json())
    }
}

impl PyHyperparams {
    fn checked(inner: learner::Hyperparams) -> PyResult<Self> {
        inner.validate().map_err(value_err)?;
        Ok(PyHyperparams { inner })
    }
}

/// A learned Q-table tied to the environment and automaton it was trained on.
#[pyclass(name = "QTable", module = "ldba_synth", frozen)]
struct PyQTable {
    q: learner::QTable,
    env: GridEnv,
    spec: Arc<LdbaSpec>,
    hp: learner::Hyperparams,
}

#[pymethods]
impl PyQTable {
    /// Loads a saved model, refusing files trained on a different environment or automaton.
    #[staticmethod]
    fn from_model_json(text: &str, env: &PyGridEnv, ldba: &PyLdba) -> PyResult<Self> {
        let file = ModelFile::from_json(text).map_err(value_err)?;
        let q = file.to_table(&env.inner, &ldba.inner).map_err(|e| match e {
            ModelFileError::HashMismatch { .. } => IncompatibleModelError::new_err(e.to_string()),
            other => value_err(other),
        })?;
        Ok(PyQTable { q, env: env.inner.clone(), spec: ldba.inner.clone(), hp: file.metadata.hyperparams })
    }

    fn to_model_json(&self) -> String {
        ModelFile::from_table(&self.q, &self.env, &self.spec, &self.hp).to_json()
    }

    /// Largest value over the actions of a product state.
    fn max_value(&self, row: usize, col: usize, q: i32) -> f64 {
        self.q.max_value(ProductState::new(EnvState::new(row, col), q))
    }

    /// Learner estimate of the satisfaction probability: max Q at the initial product state.
    fn max_value_initial(&self) -> PyResult<f64> {
        let p0 = Product::new(self.env.clone(), self.spec.clone(), RewardSpec::new(self.hp.discount_factor))
            .map_err(value_err)?
            .reset();
        Ok(self.q.max_value(p0))
    }

    fn __len__(&self) -> usize {
        self.q.len()
    }
}

/// Output of a training run.
#[pyclass(name = "TrainResult", module = "ldba_synth", frozen)]
struct PyTrainResult {
    #[pyo3(get)]
    qtable: Py<PyQTable>,
    #[pyo3(get)]
    returns: Vec<f64>,
    #[pyo3(get)]
    steps: Vec<usize>,
    #[pyo3(get)]
    sweeps: Vec<u64>,
    #[pyo3(get)]
    reached_sink: Vec<bool>,
    #[pyo3(get)]
    moving_average: Vec<f64>,
}

/// Trains a Q-table; the GIL is released while training runs.
#[pyfunction]
#[pyo3(signature = (env, ldba, hyperparams=None))]
fn train(py: Python<'_>, env: &PyGridEnv, ldba: &PyLdba, hyperparams: Option<&PyHyperparams>) -> PyResult<PyTrainResult> {
    let hp = hyperparams.map(|h| h.inner.clone()).unwrap_or_default();
    let (e, s) = (env.inner.clone(), ldba.inner.clone());
    let out = py.detach(|| learner::train(&e, &s, &hp)).map_err(value_err)?;
    let returns: Vec<f64> = out.stats.iter().map(|s| s.cumulative_reward).collect();
    let moving_average = learner::moving_average(&returns, hp.resolved_average_window());
    Ok(PyTrainResult {
        steps: out.stats.iter().map(|s| s.steps).collect(),
        sweeps: out.stats.iter().map(|s| s.sweeps_completed).collect(),
        reached_sink: out.stats.iter().map(|s| s.reached_sink).collect(),
        returns,
        moving_average,
        qtable: Py::new(py, PyQTable { q: out.q, env: e, spec: s, hp })?,
    })
}

/// Greedy test rollouts of a Q-table; returns the report as a dict. The oracle
/// reference is left as None when the product exceeds `state_cap`.
#[pyfunction]
#[pyo3(signature = (qtable, rollouts=100, horizon=None, required_sweeps=1, seed=0, state_cap=DEFAULT_STATE_CAP))]
fn test<'py>(
    py: Python<'py>,
    qtable: &PyQTable,
    rollouts: usize,
    horizon: Option<usize>,
    required_sweeps: u64,
    seed: u64,
    state_cap: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = TestConfig {
        rollouts,
        horizon: horizon.unwrap_or(qtable.hp.iteration_num_max),
        required_sweeps,
        seed,
    };
    let policy = learner::greedy_policy(&qtable.q);
    let report = py
        .detach(|| {
            let mut report = eval::run_test(&policy, &qtable.env, &qtable.spec, &cfg)?;
            report.oracle_reference = core_oracle::oracle(&qtable.env, &qtable.spec, state_cap)
                .ok()
                .map(|(_, res)| res.initial_value);
            Ok::<_, eval::EvalError>(report)
        })
        .map_err(value_err)?;
    json_to_py(py, &serde_json::to_string(&report).expect("report serializes"))
}

/// Exact solution of the explicit product.
#[pyclass(name = "OracleResult", module = "ldba_synth", frozen)]
struct PyOracleResult {
    #[pyo3(get)]
    initial_value: f64,
    #[pyo3(get)]
    num_states: usize,
    #[pyo3(get)]
    num_choices: usize,
    #[pyo3(get)]
    accepting_mecs: usize,
    #[pyo3(get)]
    iterations: usize,
    csv: String,
}

#[pymethods]
impl PyOracleResult {
    /// Value of every product state as CSV text.
    fn values_csv(&self) -> String {
        self.csv.clone()
    }

    fn __repr__(&self) -> String {
        format!("OracleResult(initial_value={:.4}, num_states={})", self.initial_value, self.num_states)
    }
}

/// Maximal probability of satisfying the automaton from the initial state.
#[pyfunction]
#[pyo3(signature = (env, ldba, state_cap=DEFAULT_STATE_CAP))]
fn oracle(py: Python<'_>, env: &PyGridEnv, ldba: &PyLdba, state_cap: usize) -> PyResult<PyOracleResult> {
    let (prod, res) = py
        .detach(|| core_oracle::oracle(&env.inner, &ldba.inner, state_cap))
        .map_err(oracle_err)?;
    Ok(PyOracleResult {
        initial_value: res.initial_value,
        num_states: prod.num_states(),
        num_choices: prod.num_choices(),
        accepting_mecs: res.accepting_mecs,
        iterations: res.iterations,
        csv: core_oracle::values_csv(&prod, &res),
    })
}

/// Trains and tests over an (eta, mu) grid; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (
    env, ldba, etas, mus, trainings=3, tests=20, hyperparams=None,
    horizon=None, required_sweeps=1, seed=0, workers=4
))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    env: &PyGridEnv,
    ldba: &PyLdba,
    etas: Vec<f64>,
    mus: Vec<f64>,
    trainings: usize,
    tests: usize,
    hyperparams: Option<&PyHyperparams>,
    horizon: Option<usize>,
    required_sweeps: u64,
    seed: u64,
    workers: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let base = hyperparams.map(|h| h.inner.clone()).unwrap_or_default();
    let cfg = SweepConfig {
        etas,
        mus,
        trainings,
        tests,
        horizon: horizon.unwrap_or(base.iteration_num_max),
        required_sweeps,
        seed,
        workers,
        base,
    };
    let report = py
        .detach(|| eval::robustness_sweep(&env.inner, &ldba.inner, &cfg))
        .map_err(value_err)?;
    json_to_py(py, &serde_json::to_string(&report).expect("report serializes"))
}

/// Names of the bundled benchmarks.
#[pyfunction]
fn benchmark_names() -> Vec<&'static str> {
    benchmarks::names().collect()
}

/// A bundled benchmark as `(env, ldba, hyperparams, required_sweeps)`.
#[pyfunction]
fn benchmark(name: &str) -> PyResult<(PyGridEnv, PyLdba, PyHyperparams, u64)> {
    let b = benchmarks::benchmark(name).ok_or_else(|| value_err(format!("unknown benchmark '{name}'")))?;
    Ok((
        PyGridEnv { inner: b.env().map_err(runtime_err)? },
        PyLdba { inner: b.ldba().map_err(runtime_err)? },
        PyHyperparams { inner: b.hyperparams() },
        b.required_sweeps,
    ))
}

#[pymodule]
fn ldba_synth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyGridEnv>()?;
    m.add_class::<PyLdba>()?;
    m.add_class::<PyHyperparams>()?;
    m.add_class::<PyQTable>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_class::<PyOracleResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(test, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark_names, m)?)?;
    m.add("IncompatibleModelError", py.get_type::<IncompatibleModelError>())?;
    m.add("SizeCapError", py.get_type::<SizeCapError>())?;
    m.add("DEFAULT_STATE_CAP", DEFAULT_STATE_CAP)?;
    m.add("__all__", PyList::new(py, [
        "GridEnv", "Ldba", "Hyperparams", "QTable", "TrainResult", "OracleResult", "train", "test",
        "oracle", "sweep", "benchmark", "benchmark_names", "IncompatibleModelError", "SizeCapError",
    ])?)?;
    Ok(())
}
