use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_experiment, Summary};
use crate::abstraction::PsiComponents;
use crate::adm::LossTerms;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// Which terms of the dynamics-model loss are active.
    AdmLosses,
    /// Which components enter the counting key.
    PsiComponents,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adm-losses" => Ok(Self::AdmLosses),
            "psi-components" | "psi" => Ok(Self::PsiComponents),
            other => Err(Error::Config(format!(
                "unknown ablation axis `{other}` (expected adm-losses or psi-components)"
            ))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AdmLosses => "adm-losses",
            Self::PsiComponents => "psi-components",
        })
    }
}

/// The four variants of an axis, applied to `base`.
pub fn ablation_variants(base: &ExperimentConfig, axis: AblationAxis) -> Vec<(String, ExperimentConfig)> {
    match axis {
        AblationAxis::PsiComponents => PsiComponents::ABLATION
            .iter()
            .map(|&psi| {
                let mut c = base.clone();
                c.abstraction.psi = psi;
                // Localization is still trained so distances stay comparable.
                c.adm.enabled = true;
                (psi.label(), c)
            })
            .collect(),
        AblationAxis::AdmLosses => LossTerms::ABLATION
            .iter()
            .map(|&losses| {
                let mut c = base.clone();
                c.adm.model.losses = losses;
                c.adm.enabled = true;
                (losses.label(), c)
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub runs: usize,
    pub mean_max_mean_return: f64,
    pub mean_final_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub runs: Vec<AblationRun>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,runs,mean_max_mean_return,mean_final_distance\n");
        for r in &self.rows {
            let d = r.mean_final_distance.map(|d| d.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.variant, r.runs, r.mean_max_mean_return, d));
        }
        s
    }
}

/// Aggregates finished runs by variant, in first-seen order. A run that
/// never finished an episode scores zero.
pub fn tabulate(axis: AblationAxis, runs: Vec<AblationRun>) -> AblationTable {
    let mut rows: Vec<AblationRow> = Vec::new();
    let mut order: Vec<String> = Vec::new();
    for r in &runs {
        if !order.contains(&r.variant) {
            order.push(r.variant.clone());
        }
    }
    for v in order {
        let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == v).collect();
        let n = mine.len() as f64;
        let score = mine.iter().map(|r| r.summary.max_mean_return.unwrap_or(0.0)).sum::<f64>() / n;
        let dists: Vec<f64> = mine.iter().filter_map(|r| r.summary.final_distance).collect();
        rows.push(AblationRow {
            variant: v,
            runs: mine.len(),
            mean_max_mean_return: score,
            mean_final_distance: (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64),
        });
    }
    AblationTable { axis, runs, rows }
}

/// Runs every variant of `axis` for every seed under `out_root`, one
/// directory per run, and writes `ablation.csv` there.
pub fn run_ablation_suite(
    base: &ExperimentConfig,
    axis: AblationAxis,
    seeds: &[u64],
    out_root: &Path,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for (label, cfg) in ablation_variants(base, axis) {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.name = format!("{}-{}-s{seed}", base.name, label.trim_matches(['(', ')']).replace(',', "_"));
            let dir = out_root.join(&c.name);
            let art = run_experiment(c, &dir)?;
            runs.push(AblationRun {
                variant: label.clone(),
                seed,
                out_dir: dir,
                summary: art.summary,
            });
        }
    }
    let table = tabulate(axis, runs);
    std::fs::create_dir_all(out_root)?;
    std::fs::write(out_root.join("ablation.csv"), table.to_csv())?;
    Ok(table)
}
