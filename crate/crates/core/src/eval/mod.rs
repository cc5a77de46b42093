//! Metrics: verification error rates, cosine and PLDA scoring, cluster recovery,
//! Gaussianity and linear-probe leakage.

mod cluster;
mod cosine;
mod eer;
mod gaussianity;
mod plda;
mod probe;

pub use cluster::{adjusted_rand_index, cluster_recovery, kmeans, KMeansConfig};
pub use cosine::{cosine_score, score_trials_cosine};
pub use eer::{auc, eer, TrialScoreSet};
pub use gaussianity::{gaussianity, MardiaReport, SIGNIFICANCE};
pub use plda::{fit_plda, score_trials, PldaModel};
pub use probe::{chance_level, residual_leakage, LinearProbe, ProbeConfig};
