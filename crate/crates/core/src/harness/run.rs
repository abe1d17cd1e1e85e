use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::harness::{mean_std, ExperimentConfig, HarnessError};
use crate::nn::Precision;
use crate::phasic::{final_return, MetricsWriter, Trainer};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_return: f64,
    pub env_steps: u64,
    pub iterations: u64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub dir: PathBuf,
    pub seeds: Vec<SeedResult>,
}

impl RunSummary {
    pub fn final_returns(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.final_return).collect()
    }

    pub fn line(&self) -> String {
        let (m, s) = mean_std(&self.final_returns());
        format!(
            "{}: final return {m:.4} ± {s:.4} over {} seed(s)",
            self.label,
            self.seeds.len()
        )
    }
}

fn train<T: Real>(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedResult, HarnessError> {
    let start = Instant::now();
    let metrics_path = dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_path).map_err(HarnessError::io(&metrics_path))?;
    let mut trainer = Trainer::<T>::new(cfg.hyperparameters(), seed)?;
    trainer.set_checkpointing(dir.join("checkpoints"), cfg.harness.checkpoint_every);
    let summary = trainer.train(|row| writer.write(row))?;
    trainer
        .checkpoint()
        .save(&dir.join("checkpoints").join("final.ckpt"))
        .map_err(HarnessError::io(dir.join("checkpoints")))?;
    Ok(SeedResult {
        seed,
        final_return: final_return(&summary.rows, cfg.harness.final_window),
        env_steps: trainer.env_steps(),
        iterations: trainer.iteration(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains one seed into `dir`, writing `config.toml`, `metrics.csv` and
/// `checkpoints/`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedResult, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(HarnessError::io(dir))?;
    let mut snapshot = cfg.clone();
    snapshot.harness.seeds = vec![seed];
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, snapshot.to_toml()).map_err(HarnessError::io(&cfg_path))?;
    match cfg.nn.precision {
        Precision::F64 => train::<f64>(cfg, seed, dir),
        Precision::F32 => train::<f32>(cfg, seed, dir),
    }
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

/// Resolves where a config's run directory lives under `root`.
pub fn run_dir(cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    match &cfg.harness.output_dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => root.join(d),
        None => root.join(cfg.label()),
    }
}

pub(crate) fn write_summary(dir: &Path, label: &str, seeds: &[SeedResult]) -> Result<RunSummary, HarnessError> {
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Io {
        path: path.clone(),
        source: std::io::Error::other(e),
    })?;
    for s in seeds {
        w.serialize(s).map_err(|e| HarnessError::Io {
            path: path.clone(),
            source: std::io::Error::other(e),
        })?;
    }
    w.flush().map_err(HarnessError::io(&path))?;
    Ok(RunSummary {
        label: label.to_string(),
        dir: dir.to_path_buf(),
        seeds: seeds.to_vec(),
    })
}

/// Trains every seed (in parallel) into `dir/seed-N/` and writes
/// `dir/summary.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let results: Vec<SeedResult> = cfg
        .harness
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s, &seed_dir(dir, s)))
        .collect::<Result<_, _>>()?;
    write_summary(dir, &cfg.label(), &results)
}
