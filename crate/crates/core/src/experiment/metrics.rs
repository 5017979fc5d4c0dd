//! CSV outputs of a run. Every file is headered and append-only; rows are
//! keyed by their first column so a resumed run can drop rows written after
//! the checkpoint it resumes from.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub const METRICS_COLUMNS: [&str; 23] = [
    "iteration",
    "env_step",
    "seed",
    "episodes",
    "mean_return",
    "max_mean_return",
    "mean_shaped_reward",
    "mean_ext_reward",
    "mean_bonus",
    "max_bonus",
    "policy_loss",
    "value_loss",
    "policy_entropy",
    "adm_loss",
    "adm_action_loss",
    "adm_cell_loss",
    "adm_entropy_loss",
    "adm_accuracy",
    "distance",
    "ari",
    "clusters",
    "distinct_psi",
    "tau",
];

pub const TIMING_COLUMNS: [&str; 4] = ["iteration", "env_step", "seed", "wall_seconds"];
pub const DISTANCE_COLUMNS: [&str; 2] = ["env_step", "mean_distance"];
pub const ARI_COLUMNS: [&str; 2] = ["env_step", "ari"];
pub const CLUSTER_COLUMNS: [&str; 4] = ["step", "actor", "cluster", "room"];

/// Formats an optional number; absent values are empty cells.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Append-mode CSV writer.
pub struct CsvLog {
    out: BufWriter<File>,
}

impl CsvLog {
    /// Starts a fresh file with the header.
    pub fn create(path: &Path, columns: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", columns.join(","))?;
        Ok(Self { out })
    }

    /// Reopens an existing file, keeping the header and rows whose first
    /// column is at most `max_key`. A missing file starts fresh.
    pub fn resume(path: &Path, columns: &[&str], max_key: u64) -> Result<Self> {
        if !path.exists() {
            return Self::create(path, columns);
        }
        let kept: Vec<String> = BufReader::new(File::open(path)?)
            .lines()
            .enumerate()
            .filter_map(|(i, line)| {
                let line = line.ok()?;
                if i == 0 {
                    return Some(line);
                }
                let key: u64 = line.split(',').next()?.parse().ok()?;
                (key <= max_key).then_some(line)
            })
            .collect();
        let mut out = BufWriter::new(File::create(path)?);
        for line in kept {
            writeln!(out, "{line}")?;
        }
        Ok(Self { out })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Opens `path` for appending raw lines (used for wide heatmap rows).
pub fn append_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?))
}
