use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// First line of every metrics file.
pub const METRICS_SCHEMA: &str = "# ppg-metrics v1";

/// One policy iteration. Auxiliary-phase columns are NaN except on the last
/// iteration of a phase that was followed by an auxiliary phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub phase: u64,
    pub env_steps: u64,
    /// Episodes finished during this iteration's rollout.
    pub episodes: u64,
    /// Mean raw return of those episodes; NaN when none finished.
    pub ep_return_mean: f64,
    pub ep_len_mean: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub value_loss: f64,
    pub explained_var: f64,
    pub aux_loss: f64,
    /// Mean KL(frozen || current) over the buffer after the auxiliary phase.
    pub clone_kl: f64,
    pub aux_value_loss: f64,
}

impl MetricsRow {
    pub fn empty(iteration: u64, phase: u64, env_steps: u64) -> Self {
        Self {
            iteration,
            phase,
            env_steps,
            episodes: 0,
            ep_return_mean: f64::NAN,
            ep_len_mean: f64::NAN,
            policy_loss: f64::NAN,
            entropy: f64::NAN,
            approx_kl: f64::NAN,
            clip_frac: f64::NAN,
            value_loss: f64::NAN,
            explained_var: f64::NAN,
            aux_loss: f64::NAN,
            clone_kl: f64::NAN,
            aux_value_loss: f64::NAN,
        }
    }
}

/// Mean episode return over the last `window` iterations that saw at least
/// one finished episode.
pub fn final_return(rows: &[MetricsRow], window: usize) -> f64 {
    let vals: Vec<f64> = rows
        .iter()
        .rev()
        .map(|r| r.ep_return_mean)
        .filter(|x| x.is_finite())
        .take(window)
        .collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Streams rows to a CSV file that starts with [`METRICS_SCHEMA`].
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{METRICS_SCHEMA}")?;
        Ok(Self {
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        self.inner.serialize(row).map_err(std::io::Error::other)?;
        self.inner.flush()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsReadError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("missing or unsupported schema line (expected `{METRICS_SCHEMA}`)")]
    Schema,
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, MetricsReadError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != METRICS_SCHEMA {
        return Err(MetricsReadError::Schema);
    }
    let mut csv = csv::Reader::from_reader(reader);
    Ok(csv.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_nan_and_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut a = MetricsRow::empty(0, 0, 256);
        a.policy_loss = 0.1 + 0.2;
        let mut b = MetricsRow::empty(1, 0, 512);
        b.ep_return_mean = -1.5e-7;
        b.episodes = 3;
        {
            let mut w = MetricsWriter::create(&path).unwrap();
            w.write(&a).unwrap();
            w.write(&b).unwrap();
        }
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].policy_loss, 0.1 + 0.2);
        assert!(rows[0].ep_return_mean.is_nan());
        assert_eq!(rows[1].ep_return_mean, -1.5e-7);
        assert_eq!(rows[1].episodes, 3);
    }

    #[test]
    fn rejects_missing_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "iteration\n1\n").unwrap();
        assert!(matches!(read_metrics(&path), Err(MetricsReadError::Schema)));
    }

    #[test]
    fn final_return_skips_empty_iterations() {
        let mut rows: Vec<_> = (0..20).map(|i| MetricsRow::empty(i, 0, 0)).collect();
        for (i, r) in rows.iter_mut().enumerate() {
            if i % 2 == 0 {
                r.ep_return_mean = i as f64;
            }
        }
        assert_eq!(final_return(&rows, 2), 17.0);
        assert!(final_return(&rows[..0], 10).is_nan());
    }
}
