//! Cluster-level activation screening for a single basis direction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concepts::{
    activation_scores, cluster_activation_summary, kmeans, ConceptDirection, GradientKind, Space,
};
use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, MlpModel};
use crate::simdata::{distance_to_boundary, Dataset};

/// Which hidden feature to test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureChoice {
    /// Zero-based index into the hidden layer.
    Index(usize),
    /// `"auto"`: the live feature whose input-space normal is closest to
    /// vertical.
    Named(String),
}

impl Default for FeatureChoice {
    fn default() -> Self {
        FeatureChoice::Named("auto".into())
    }
}

impl std::str::FromStr for FeatureChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(FeatureChoice::Named("auto".into())),
            _ => s
                .parse()
                .map(FeatureChoice::Index)
                .map_err(|_| Error::InvalidArgument(format!("feature must be `auto` or an index, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub feature: FeatureChoice,
    /// Flip the direction so its input-space rendering points downward.
    pub orient_down: bool,
    pub max_iters: usize,
    pub gradient_kind: GradientKind,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 25,
            feature: FeatureChoice::default(),
            orient_down: true,
            max_iters: 300,
            gradient_kind: GradientKind::Probability,
        }
    }
}

/// Fraction of samples on which each hidden feature is active.
pub fn active_fractions(feats: &FeatureMatrix) -> Vec<f64> {
    let m = feats.as_matrix();
    (0..m.ncols())
        .map(|j| m.column(j).iter().filter(|&&z| z > 0.0).count() as f64 / m.nrows() as f64)
        .collect()
}

/// Index of the feature whose first-layer weight row is most vertical among
/// features active on 5–95% of samples (all features if none qualifies).
pub fn most_vertical_feature(model: &MlpModel, feats: &FeatureMatrix) -> Result<usize> {
    if model.input_dim() < 2 {
        return Err(Error::InvalidArgument("vertical feature needs 2-D inputs".into()));
    }
    let active = active_fractions(feats);
    let verticality = |j: usize| {
        let w = model.w1().row(j);
        let norm = w.norm();
        if norm > 0.0 {
            w[1].abs() / norm
        } else {
            -1.0
        }
    };
    let pick = |live: &dyn Fn(usize) -> bool| {
        (0..model.hidden_dim())
            .filter(|&j| live(j))
            .max_by(|&a, &b| verticality(a).total_cmp(&verticality(b)).then(b.cmp(&a)))
    };
    pick(&|j| (0.05..=0.95).contains(&active[j]))
        .or_else(|| pick(&|j| active[j] > 0.0))
        .ok_or_else(|| Error::DegenerateDirection("no hidden feature is ever active".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub id: usize,
    pub centroid: Vec<f64>,
    pub size: usize,
    pub singleton: bool,
    /// Distance of the centroid to the decision boundary (2-D simulation only).
    pub distance_to_boundary: Option<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Per-cluster activation statistics for `v = sign · e_feature`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub feature: usize,
    pub sign: f64,
    pub direction: Vec<f64>,
    pub active_fraction: f64,
    pub gradient_kind: GradientKind,
    pub k: usize,
    pub converged: bool,
    pub inertia: f64,
    /// Clusters in id order.
    pub clusters: Vec<ClusterRow>,
    /// For every class, cluster ids sorted by decreasing SD of that class.
    pub order_by_sd: Vec<Vec<usize>>,
    /// Mean activation of class `k` over the samples labelled `k`.
    pub class_means: Vec<f64>,
    /// Cluster of every sample.
    pub assignments: Vec<usize>,
}

impl ClusterReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

/// Cluster the inputs with k-means and summarize the activation scores of the
/// chosen feature direction inside each cluster.
pub fn cluster_screen(model: &MlpModel, data: &Dataset, config: &ClusterConfig, seed: u64) -> Result<ClusterReport> {
    let feats = model.feature_matrix(data.samples())?;
    let feature = match &config.feature {
        FeatureChoice::Index(j) => *j,
        FeatureChoice::Named(s) if s == "auto" => most_vertical_feature(model, &feats)?,
        FeatureChoice::Named(s) => {
            return Err(Error::Config(format!("clusters.feature must be `auto` or an index, got `{s}`")))
        }
    };
    let halfspace = model.feature_halfspace(feature)?;
    let sign = if config.orient_down && halfspace.normal.len() >= 2 && halfspace.normal[1] > 0.0 {
        -1.0
    } else {
        1.0
    };
    let mut v = ConceptDirection::basis(model.hidden_dim(), feature, Space::Feature)?;
    if sign < 0.0 {
        v = v.negated();
    }
    let scores = activation_scores(model, &feats, &v, config.gradient_kind)?;
    let clustering = kmeans(data.samples(), config.k, seed, config.max_iters)?;
    let base = clustering.clusters();
    let n_classes = model.n_classes();
    let mut order_by_sd = Vec::with_capacity(n_classes);
    let mut rows = Vec::new();
    for class in 0..n_classes {
        let summary = cluster_activation_summary(&base, &scores, class)?;
        order_by_sd.push(summary.iter().map(|c| c.id).collect());
        if class == 0 {
            let mut sorted = summary;
            sorted.sort_by_key(|c| c.id);
            rows = sorted
                .into_iter()
                .map(|c| ClusterRow {
                    distance_to_boundary: (c.centroid.len() == 2).then(|| distance_to_boundary([c.centroid[0], c.centroid[1]])),
                    id: c.id,
                    size: c.members.len(),
                    singleton: c.singleton,
                    centroid: c.centroid,
                    mean: c.mean,
                    sd: c.sd,
                })
                .collect();
        }
    }
    let class_means = (0..n_classes)
        .map(|k| {
            let (sum, count) = scores
                .class_column(k)
                .iter()
                .zip(data.labels())
                .filter(|(_, &l)| l == k)
                .fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
            if count == 0 {
                Err(Error::EmptyClass(k))
            } else {
                Ok(sum / count as f64)
            }
        })
        .collect::<Result<_>>()?;
    Ok(ClusterReport {
        feature,
        sign,
        direction: v.as_slice().to_vec(),
        active_fraction: active_fractions(&feats)[feature],
        gradient_kind: config.gradient_kind,
        k: config.k,
        converged: clustering.converged,
        inertia: clustering.inertia(),
        clusters: rows,
        order_by_sd,
        class_means,
        assignments: clustering.assignments,
    })
}
