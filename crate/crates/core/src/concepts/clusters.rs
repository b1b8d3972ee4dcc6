use serde::{Deserialize, Serialize};

use super::scores::{population_sd, ScoreMatrix};
use crate::error::{Error, Result};

/// One cluster with per-class activation statistics over its members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub centroid: Vec<f64>,
    pub members: Vec<usize>,
    /// Per-class mean activation; empty until summarized.
    pub mean: Vec<f64>,
    /// Per-class population SD of activations; empty until summarized.
    pub sd: Vec<f64>,
    /// Set when the cluster has a single member (its SD is 0 by definition).
    pub singleton: bool,
}

impl ClusterSummary {
    pub fn new(id: usize, centroid: Vec<f64>, members: Vec<usize>) -> Self {
        let singleton = members.len() == 1;
        Self {
            id,
            centroid,
            members,
            mean: Vec::new(),
            sd: Vec::new(),
            singleton,
        }
    }
}

/// Fill per-class activation means and SDs, then order clusters by
/// decreasing SD for class `k` (ties keep cluster id order).
pub fn cluster_activation_summary(
    clusters: &[ClusterSummary],
    scores: &ScoreMatrix,
    k: usize,
) -> Result<Vec<ClusterSummary>> {
    let n = scores.n_points();
    let classes = scores.n_classes();
    if k >= classes {
        return Err(Error::IndexOutOfRange {
            what: "classes",
            index: k,
            len: classes,
        });
    }
    let mut covered = vec![false; n];
    let mut out = Vec::with_capacity(clusters.len());
    for cluster in clusters {
        if cluster.members.is_empty() {
            return Err(Error::InvalidArgument(format!("cluster {} has no members", cluster.id)));
        }
        let mut summary = ClusterSummary::new(cluster.id, cluster.centroid.clone(), cluster.members.clone());
        for &i in &cluster.members {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    what: "score rows",
                    index: i,
                    len: n,
                });
            }
            covered[i] = true;
        }
        for c in 0..classes {
            let values = cluster.members.iter().map(|&i| scores.values()[(i, c)]);
            summary.mean.push(values.clone().sum::<f64>() / cluster.members.len() as f64);
            summary.sd.push(population_sd(values)?);
        }
        out.push(summary);
    }
    if let Some(missing) = covered.iter().position(|c| !c) {
        return Err(Error::InvalidArgument(format!(
            "cluster membership does not cover score row {missing}"
        )));
    }
    out.sort_by(|a, b| b.sd[k].total_cmp(&a.sd[k]).then(a.id.cmp(&b.id)));
    Ok(out)
}
