//! Concept discovery in learned feature spaces.
//!
//! Candidate concept directions are sampled on the unit sphere of a
//! classifier's hidden-feature space, scored by directional derivatives of the
//! class outputs, and screened with randomization p-values, Benjamini-Hochberg
//! or local false discovery rates. A PCA projection of the features and of the
//! per-class gradients backs an interactive explorer that rescores
//! user-drawn directions on the fly.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod concepts;
pub mod error;
pub mod export;
pub mod figures;
pub mod inference;
pub mod model;
pub mod pipeline;
pub mod reduce;
pub mod rng;
pub mod screening;
pub mod service;
pub mod simdata;

pub use concepts::{ConceptDirection, GradientKind, GradientTensor, ScoreMatrix, Space, StatScope};
pub use error::{Error, Result};
pub use export::LoadedBundle;
pub use inference::{EmpiricalNull, Method, ScreeningResult};
pub use model::{train, FeatureMatrix, HalfSpace, MlpModel, TrainConfig, TrainReport};
pub use pipeline::{run_pipeline, PipelineConfig, RunManifest};
pub use reduce::{projected_tcav, PcaModel, ProjectionBundle};
pub use screening::{ScreeningConfig, ScreeningOutput, Statistic};
pub use service::Service;
pub use simdata::{distance_to_boundary, generate_simulation, Dataset};
