//! Python bindings: environments, advantage estimation, losses, training
//! and the gradient check.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ppg_core::advantage::{self, GaeConfig};
use ppg_core::env::{EnvConfig, EnvName};
use ppg_core::harness::{self, ExperimentConfig, HarnessError};
use ppg_core::nn::{CategoricalDist, Matrix};
use ppg_core::phasic::{self, MetricsRow, PhasicError};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn phasic_err(e: PhasicError) -> PyErr {
    match e {
        PhasicError::Config(c) => PyValueError::new_err(c.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    let n = rows.len();
    Ok(Matrix::from_vec(n, cols, rows.into_iter().flatten().collect()))
}

fn to_rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn dist(logits: Vec<Vec<f64>>) -> PyResult<CategoricalDist<f64>> {
    Ok(CategoricalDist::new(matrix(logits)?))
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iteration", r.iteration)?;
    d.set_item("phase", r.phase)?;
    d.set_item("env_steps", r.env_steps)?;
    d.set_item("episodes", r.episodes)?;
    for (k, v) in [
        ("ep_return_mean", r.ep_return_mean),
        ("ep_len_mean", r.ep_len_mean),
        ("policy_loss", r.policy_loss),
        ("entropy", r.entropy),
        ("approx_kl", r.approx_kl),
        ("clip_frac", r.clip_frac),
        ("value_loss", r.value_loss),
        ("explained_var", r.explained_var),
        ("aux_loss", r.aux_loss),
        ("clone_kl", r.clone_kl),
        ("aux_value_loss", r.aux_value_loss),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// Batch of environment instances stepped in lockstep with auto-reset.
#[pyclass(unsendable, name = "VecEnv")]
struct PyVecEnv {
    inner: ppg_core::env::VecEnv,
}

#[pymethods]
impl PyVecEnv {
    #[new]
    #[pyo3(signature = (name = "keydoor", num_envs = 4, seed = 0, max_steps = None))]
    fn new(name: &str, num_envs: usize, seed: u64, max_steps: Option<usize>) -> PyResult<Self> {
        let name: EnvName = match name {
            "keydoor" => EnvName::KeyDoor,
            "chain" => EnvName::Chain,
            "bandit" => EnvName::Bandit,
            other => return Err(PyValueError::new_err(format!("unknown env `{other}`"))),
        };
        let cfg = EnvConfig {
            name,
            num_envs,
            max_steps,
            ..Default::default()
        };
        Ok(Self {
            inner: ppg_core::env::VecEnv::new(&cfg, seed).map_err(value_err)?,
        })
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.spec().obs_dim
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.spec().num_actions
    }

    #[getter]
    fn num_envs(&self) -> usize {
        self.inner.num_envs()
    }

    /// Resets every instance; returns one observation row per instance.
    fn reset(&mut self) -> Vec<Vec<f64>> {
        let d = self.inner.spec().obs_dim;
        self.inner.reset().chunks(d).map(<[f64]>::to_vec).collect()
    }

    /// Returns `(observations, rewards, dones)`.
    fn step(&mut self, actions: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<bool>)> {
        let d = self.inner.spec().obs_dim;
        let r = self.inner.step(&actions).map_err(value_err)?;
        Ok((r.obs.chunks(d).map(<[f64]>::to_vec).collect(), r.rewards, r.dones))
    }
}

/// GAE over env-major `num_envs x T` arrays; `values` has `T + 1` entries
/// per instance. Returns `(advantages, targets)`.
#[pyfunction]
#[pyo3(signature = (rewards, values, dones, num_envs, gamma = 0.999, lam = 0.95))]
fn compute_gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    num_envs: usize,
    gamma: f64,
    lam: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let out = advantage::compute_gae(&rewards, &values, &dones, num_envs, GaeConfig { gamma, lambda: lam })
        .map_err(value_err)?;
    Ok((out.advantages, out.targets))
}

#[pyfunction]
fn loss_clip(logp_new: Vec<f64>, logp_old: Vec<f64>, adv: Vec<f64>, eps: f64) -> PyResult<f64> {
    phasic::loss_clip(&logp_new, &logp_old, &adv, eps).map_err(value_err)
}

#[pyfunction]
fn loss_value(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    if pred.len() != target.len() {
        return Err(PyValueError::new_err("prediction and target lengths differ"));
    }
    Ok(phasic::loss_value(&pred, &target))
}

#[pyfunction]
fn loss_joint(
    aux_pred: Vec<f64>,
    target: Vec<f64>,
    logits_frozen: Vec<Vec<f64>>,
    logits_current: Vec<Vec<f64>>,
    beta_clone: f64,
) -> PyResult<f64> {
    if aux_pred.len() != target.len() || logits_frozen.len() != logits_current.len() {
        return Err(PyValueError::new_err("length mismatch"));
    }
    Ok(phasic::loss_joint(&aux_pred, &target, &dist(logits_frozen)?, &dist(logits_current)?, beta_clone))
}

#[pyfunction]
fn loss_kl_policy(
    actions: Vec<usize>,
    adv: Vec<f64>,
    logits_old: Vec<Vec<f64>>,
    logits_new: Vec<Vec<f64>>,
    beta_pi: f64,
) -> PyResult<f64> {
    phasic::loss_kl_policy(&actions, &adv, &dist(logits_old)?, &dist(logits_new)?, beta_pi).map_err(value_err)
}

#[pyfunction]
fn entropy(logits: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(phasic::entropy(&dist(logits)?))
}

/// Trainer over `f64` built from TOML text plus `section.key=value` overrides.
#[pyclass(unsendable, name = "Trainer")]
struct PyTrainer {
    inner: phasic::Trainer<f64>,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config = "", overrides = Vec::new(), seed = 0))]
    fn new(config: &str, overrides: Vec<String>, seed: u64) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_toml_str(config, &overrides).map_err(harness_err)?;
        Ok(Self {
            inner: phasic::Trainer::new(cfg.hyperparameters(), seed).map_err(phasic_err)?,
        })
    }

    #[getter]
    fn env_steps(&self) -> u64 {
        self.inner.env_steps()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    /// One rollout plus its policy-phase updates.
    fn policy_iteration<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let row = self.inner.policy_iteration().map_err(phasic_err)?;
        row_dict(py, &row)
    }

    /// Policy iterations plus the auxiliary phase that follows them.
    fn phase<'py>(&mut self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let (rows, _) = self.inner.phase_step().map_err(phasic_err)?;
        rows.iter().map(|r| row_dict(py, r)).collect()
    }

    /// Trains to the step budget and returns every metrics row.
    fn train<'py>(&mut self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let summary = self.inner.train(|_| Ok(())).map_err(phasic_err)?;
        summary.rows.iter().map(|r| row_dict(py, r)).collect()
    }

    fn action_probs(&self, obs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let p = self.inner.action_probs(&matrix(obs)?).map_err(phasic_err)?;
        Ok(to_rows(&p))
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        self.inner
            .checkpoint()
            .save(&path)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Runs all seeds of a config file into `output`; returns final returns by seed.
#[pyfunction]
#[pyo3(signature = (config, output, overrides = Vec::new()))]
fn run(config: PathBuf, output: PathBuf, overrides: Vec<String>) -> PyResult<Vec<(u64, f64)>> {
    let cfg = ExperimentConfig::load(&config, &overrides).map_err(harness_err)?;
    let s = harness::run_experiment(&cfg, &output).map_err(harness_err)?;
    Ok(s.seeds.iter().map(|r| (r.seed, r.final_return)).collect())
}

/// Worst relative error per loss between backprop and finite differences.
#[pyfunction]
#[pyo3(signature = (seed = 0, instances = 20))]
fn gradcheck(seed: u64, instances: usize) -> Vec<(String, f64)> {
    harness::gradcheck(seed, instances)
        .checks
        .into_iter()
        .map(|c| (c.loss.to_string(), c.max_rel_error))
        .collect()
}

#[pymodule]
fn ppg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVecEnv>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(loss_clip, m)?)?;
    m.add_function(wrap_pyfunction!(loss_value, m)?)?;
    m.add_function(wrap_pyfunction!(loss_joint, m)?)?;
    m.add_function(wrap_pyfunction!(loss_kl_policy, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
