//! Experiment plumbing: configs, seeded runs, sweep suites, plots and the
//! finite-difference gradient check.

pub mod config;
pub mod gradcheck;
pub mod plot;
pub mod run;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use crate::phasic::PhasicError;

pub use config::{ExperimentConfig, HarnessConfig};
pub use gradcheck::{gradcheck, GradcheckReport, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use plot::{plot, PlotOptions};
pub use run::{run_experiment, run_seed, RunSummary, SeedResult};
pub use sweep::{run_sweep, SweepSuite};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PPG_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training failed: {0}")]
    Training(#[from] PhasicError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("plot: {0}")]
    Plot(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

impl HarnessError {
    /// Process exit status: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Training(PhasicError::Config(_)) => 1,
            _ => 2,
        }
    }

    pub(crate) fn message(&self) -> String {
        match self {
            HarnessError::Config(m) => m.clone(),
            other => other.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

/// Output root from the environment, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Median, averaging the middle pair for even counts. NaNs sort last.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
