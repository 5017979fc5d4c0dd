//! Counting machinery: random-projection embeddings, threshold clustering
//! for visual context, the abstract state key and the visit counter.

mod cluster;
mod counter;
mod projector;

pub use cluster::{calibrate_tau, Cluster, ClusterSet, TauCalibration};
pub use counter::{AbstractState, PsiComponents, VisitCounter};
pub use projector::Projector;
