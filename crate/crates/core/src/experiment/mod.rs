//! Seeded end-to-end runs: config ingestion, the training loop, metric
//! logs, checkpoints and the ablation harness.

mod ablation;
mod checkpoint;
mod config;
mod evaluate;
mod metrics;
mod run;

pub use ablation::{
    ablation_variants, run_ablation_suite, tabulate, AblationAxis, AblationRow, AblationRun, AblationTable,
};
pub use checkpoint::{read_sections, write_sections, RUN_MAGIC, RUN_VERSION, SECTIONS};
pub use config::{
    set_path, AbstractionConfig, AdmSection, EnvConfig, ExperimentConfig, ExportConfig, CONFIG_PRESETS,
};
pub use evaluate::EvalReport;
pub use metrics::{ARI_COLUMNS, CLUSTER_COLUMNS, DISTANCE_COLUMNS, METRICS_COLUMNS, TIMING_COLUMNS};
pub use run::{
    derive_tau, room_sample, run_experiment, Experiment, RunArtifacts, RunOutcome, Summary, ARI_FILE,
    ATTENTION_FILE, CLUSTERS_FILE, DISTANCE_FILE, FINAL_CHECKPOINT, METRICS_FILE, SUMMARY_FILE, TIMING_FILE,
};
