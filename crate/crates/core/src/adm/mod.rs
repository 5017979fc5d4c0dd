//! Attentive dynamics model: inverse-dynamics action prediction from
//! per-cell features, spatial attention over the feature grid, and
//! attention-based localization of the controllable avatar.

mod attention;
mod model;

pub use attention::{localize, write_heatmap_header, write_heatmap_row, AttentionMap};
pub use model::{
    Adm, AdmBatch, AdmConfig, AdmGraph, AdmLoss, AdmMetrics, AdmOutput, LossTerms, Normalizer, Transition,
};
