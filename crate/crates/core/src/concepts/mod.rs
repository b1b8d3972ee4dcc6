//! Concept directions and the scores derived from them.

mod clusters;
mod direction;
mod kmeans;
mod scores;

pub use clusters::{cluster_activation_summary, ClusterSummary};
pub use direction::{direction_to_input_space, sample_sphere, ConceptDirection, Space};
pub use kmeans::{kmeans, Clustering};
pub use scores::{
    activation_scores, population_sd, sd_statistic, tcav_fraction, tcav_score, GradientKind,
    GradientTensor, ScoreMatrix, StatScope,
};
