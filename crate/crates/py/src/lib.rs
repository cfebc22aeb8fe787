//! Python bindings: instances, schedules, episodes, regret summaries,
//! the confidence-width minimiser, sweeps and concentration checks.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mpmab_core::env::{generate_instance, reporting_alpha, GenerationParams, MpmabInstance};
use mpmab_core::experiment::{run_sweep as core_sweep, run_validation as core_validation};
use mpmab_core::experiment::{ExperimentConfig, ValidationConfig};
use mpmab_core::metrics::{default_checkpoints, final_count_regret, summarize_run, RegretKind};
use mpmab_core::policies::{Algorithm, ConfidenceWidth, ConstantsPreset, PolicyConfig};
use mpmab_core::protocol::{self, EpisodeOptions, RunTrace};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Player × arm Bernoulli mean matrix with dissimilarity bound ε.
#[pyclass(name = "Instance", module = "mpmab", frozen)]
struct PyInstance {
    inner: MpmabInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    fn new(epsilon: f64, means: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: MpmabInstance::from_rows(epsilon, &means).map_err(value_err)?,
        })
    }

    /// Random instance with exactly `target_subpar` arms in the 5ε subpar set.
    #[staticmethod]
    fn generate(
        num_players: usize,
        num_arms: usize,
        epsilon: f64,
        target_subpar: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let params = GenerationParams {
            num_players,
            num_arms,
            epsilon,
            target_subpar,
        };
        Ok(Self {
            inner: generate_instance(params, seed).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: MpmabInstance::from_json(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(value_err)
    }

    #[getter]
    fn num_players(&self) -> usize {
        self.inner.num_players()
    }

    #[getter]
    fn num_arms(&self) -> usize {
        self.inner.num_arms()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        (0..self.inner.num_players())
            .map(|p| self.inner.row(p).to_vec())
            .collect()
    }

    /// Gap matrix Δ, one row per player.
    fn gaps(&self) -> Vec<Vec<f64>> {
        let g = self.inner.gaps();
        (0..g.num_players())
            .map(|p| (0..g.num_arms()).map(|i| g.gap(p, i)).collect())
            .collect()
    }

    /// 0-based arms with some player's gap strictly above `alpha` (5ε by default).
    #[pyo3(signature = (alpha = None))]
    fn subpar_set(&self, alpha: Option<f64>) -> Vec<usize> {
        let alpha = alpha.unwrap_or_else(|| reporting_alpha(self.inner.epsilon()));
        self.inner.gaps().subpar_set(alpha).arms()
    }

    /// Human-readable constraint violations; empty when valid.
    fn violations(&self) -> Vec<String> {
        self.inner
            .validate()
            .violations
            .iter()
            .map(|v| format!("{v:?}"))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(M={}, K={}, epsilon={})",
            self.inner.num_players(),
            self.inner.num_arms(),
            self.inner.epsilon()
        )
    }
}

/// Oblivious sequence of active player sets (0-based players).
#[pyclass(name = "Schedule", module = "mpmab", frozen)]
struct PySchedule {
    inner: protocol::Schedule,
}

#[pymethods]
impl PySchedule {
    #[staticmethod]
    fn concurrent(num_players: usize, horizon: usize) -> Self {
        Self {
            inner: protocol::Schedule::concurrent(num_players, horizon),
        }
    }

    #[staticmethod]
    fn sequential(num_players: usize, horizon: usize) -> Self {
        Self {
            inner: protocol::Schedule::sequential(num_players, horizon),
        }
    }

    #[staticmethod]
    fn random_subset(num_players: usize, horizon: usize, q: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: protocol::Schedule::random_subset(num_players, horizon, q, seed)
                .map_err(value_err)?,
        })
    }

    /// Parses the text format (1-based indices, one line per round).
    #[staticmethod]
    fn parse(num_players: usize, text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: protocol::Schedule::parse(num_players, text).map_err(value_err)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn total_activations(&self) -> usize {
        self.inner.total_activations()
    }

    /// Active players of 1-based round `t`.
    fn active(&self, t: usize) -> PyResult<Vec<u32>> {
        if t == 0 || t > self.inner.horizon() {
            return Err(value_err(format!("round {t} outside 1..={}", self.inner.horizon())));
        }
        Ok(self.inner.active(t - 1).to_vec())
    }
}

/// Interaction log of one episode.
#[pyclass(name = "Trace", module = "mpmab", frozen)]
struct PyTrace {
    inner: RunTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn total_pulls(&self) -> usize {
        self.inner.total_pulls()
    }

    /// `(round, player, arm, reward)` tuples in round order.
    fn records(&self) -> Vec<(usize, usize, usize, f64)> {
        self.inner
            .records()
            .map(|r| (r.round, r.player, r.arm, r.reward))
            .collect()
    }

    /// Own-pull counts, one row per player.
    fn final_counts(&self) -> Vec<Vec<u64>> {
        self.inner
            .final_counts()
            .chunks(self.inner.num_arms())
            .map(<[u64]>::to_vec)
            .collect()
    }

    fn tau_k(&self, arm: usize, k: u64) -> usize {
        self.inner.tau_k(arm, k)
    }

    fn pi_k(&self, arm: usize, player: usize, k: u64) -> usize {
        self.inner.pi_k(arm, player, k)
    }
}

/// Runs one episode of `algorithm` (e.g. "robust_agg_ts").
#[pyfunction]
#[pyo3(signature = (instance, schedule, algorithm, seed, preset = "experiment"))]
fn run_episode(
    instance: &PyInstance,
    schedule: &PySchedule,
    algorithm: &str,
    seed: u64,
    preset: &str,
) -> PyResult<PyTrace> {
    let algorithm: Algorithm = algorithm.parse().map_err(value_err)?;
    let preset = match preset {
        "experiment" => ConstantsPreset::Experiment,
        "analysis" => ConstantsPreset::Analysis,
        other => return Err(value_err(format!("unknown preset {other:?}"))),
    };
    let inst = &instance.inner;
    let cfg = PolicyConfig::with_preset(algorithm, schedule.inner.horizon(), inst.epsilon(), preset);
    let mut policy = cfg.build(inst.num_players(), inst.num_arms()).map_err(value_err)?;
    let trace = protocol::run_episode(
        inst,
        &schedule.inner,
        policy.as_mut(),
        seed,
        EpisodeOptions::default(),
    )
    .map_err(value_err)?;
    Ok(PyTrace { inner: trace })
}

/// Regret summary of a trace as a dict of lists.
#[pyfunction]
#[pyo3(signature = (trace, instance, checkpoints = None))]
fn summarize(
    py: Python<'_>,
    trace: &PyTrace,
    instance: &PyInstance,
    checkpoints: Option<Vec<usize>>,
) -> PyResult<Py<PyAny>> {
    let gaps = instance.inner.gaps();
    let subpar = gaps.subpar_set(reporting_alpha(instance.inner.epsilon()));
    let grid = checkpoints.unwrap_or_else(|| default_checkpoints(trace.inner.horizon(), 100));
    let s = summarize_run(&trace.inner, &gaps, &subpar, &grid, RegretKind::Pseudo)
        .map_err(value_err)?;
    let count_form = final_count_regret(&trace.inner, &gaps).map_err(value_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("checkpoints", s.checkpoints.clone())?;
    dict.set_item("regret", s.regret.clone())?;
    dict.set_item(
        "category_pulls",
        s.categories.iter().map(|c| c.pulls.to_vec()).collect::<Vec<_>>(),
    )?;
    dict.set_item(
        "category_regret",
        s.categories.iter().map(|c| c.regret.to_vec()).collect::<Vec<_>>(),
    )?;
    dict.set_item("final_count_regret", count_form)?;
    dict.set_item("total_activations", s.total_activations)?;
    Ok(dict.into_any().unbind())
}

/// `(λ*, F(λ*))` for the RobustAgg-UCB confidence width; `coef` defaults to 8√13.
#[pyfunction]
#[pyo3(signature = (n_bar, m_bar, epsilon, horizon, coef = None))]
fn minimize_f(n_bar: f64, m_bar: f64, epsilon: f64, horizon: usize, coef: Option<f64>) -> PyResult<(f64, f64)> {
    if !(n_bar >= 1.0 && m_bar >= 1.0) {
        return Err(value_err("n_bar and m_bar must be at least 1"));
    }
    let width = ConfidenceWidth::new(coef.unwrap_or(ConfidenceWidth::ANALYSIS_COEF), horizon);
    Ok(width.minimize(n_bar, m_bar, epsilon))
}

/// Runs a sweep described by a JSON config; returns summary rows as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, workers = None))]
fn run_sweep(py: Python<'_>, config_json: &str, workers: Option<usize>) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(value_err)?;
    let result = py.detach(|| core_sweep(&cfg, workers)).map_err(value_err)?;
    serde_json::to_string(&result.rows(&cfg)).map_err(value_err)
}

/// Runs the concentration grid described by a JSON config; returns reports as JSON.
#[pyfunction]
#[pyo3(signature = (config_json = "{}", workers = None))]
fn run_validation(py: Python<'_>, config_json: &str, workers: Option<usize>) -> PyResult<String> {
    let cfg = ValidationConfig::from_json(config_json).map_err(value_err)?;
    let reports = py.detach(|| core_validation(&cfg, workers)).map_err(value_err)?;
    serde_json::to_string(&reports).map_err(value_err)
}

/// Names accepted by `run_episode`.
#[pyfunction]
fn algorithms() -> Vec<&'static str> {
    Algorithm::ALL.iter().map(|a| a.as_str()).collect()
}

#[pymodule]
fn mpmab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_f, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_validation, m)?)?;
    m.add_function(wrap_pyfunction!(algorithms, m)?)?;
    Ok(())
}
