use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::direction::{ConceptDirection, Space};
use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, MlpModel};

/// Which class output the directional derivative is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientKind {
    Probability,
    Logit,
}

impl GradientKind {
    pub fn name(self) -> &'static str {
        match self {
            GradientKind::Probability => "probability",
            GradientKind::Logit => "logit",
        }
    }
}

impl std::str::FromStr for GradientKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" | "prob" => Ok(GradientKind::Probability),
            "logit" => Ok(GradientKind::Logit),
            other => Err(Error::InvalidArgument(format!(
                "unknown gradient kind `{other}` (expected probability or logit)"
            ))),
        }
    }
}

/// Per-point, per-class gradients with respect to a feature space, stored
/// row-major as `[point][class][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTensor {
    points: usize,
    classes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl GradientTensor {
    pub fn new(points: usize, classes: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != points * classes * dim {
            return Err(Error::ShapeMismatch {
                what: "gradient tensor".into(),
                expected: vec![points, classes, dim],
                found: vec![data.len()],
            });
        }
        Ok(Self {
            points,
            classes,
            dim,
            data,
        })
    }

    /// Jacobians of the selected outputs at every feature row.
    pub fn from_model(model: &MlpModel, feats: &FeatureMatrix, kind: GradientKind) -> Result<Self> {
        if feats.dim() != model.hidden_dim() {
            return Err(Error::DimensionMismatch {
                what: "feature matrix",
                expected: model.hidden_dim(),
                found: feats.dim(),
            });
        }
        let (k, j) = (model.n_classes(), model.hidden_dim());
        let mut data = Vec::with_capacity(feats.nrows() * k * j);
        let logit = model.logit_jacobian();
        for i in 0..feats.nrows() {
            let jac = match kind {
                GradientKind::Probability => model.prob_jacobian(&feats.row(i))?,
                GradientKind::Logit => logit.clone(),
            };
            for row in jac.row_iter() {
                data.extend(row.iter());
            }
        }
        Self::new(feats.nrows(), k, j, data)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.points, self.classes, self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn gradient(&self, point: usize, class: usize) -> &[f64] {
        let start = (point * self.classes + class) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Map every gradient vector through `f`, producing vectors of `new_dim`.
    pub(crate) fn map_vectors(&self, new_dim: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut data = vec![0.0; self.points * self.classes * new_dim];
        for (src, dst) in self.data.chunks_exact(self.dim).zip(data.chunks_exact_mut(new_dim)) {
            f(src, dst);
        }
        Self {
            points: self.points,
            classes: self.classes,
            dim: new_dim,
            data,
        }
    }

    /// `n × K` matrix of dot products with `v`; `v` need not be unit length.
    pub fn directional(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "direction",
                expected: self.dim,
                found: v.len(),
            });
        }
        let mut out = DMatrix::zeros(self.points, self.classes);
        for (idx, g) in self.data.chunks_exact(self.dim).enumerate() {
            out[(idx / self.classes, idx % self.classes)] = dot(g, v);
        }
        Ok(out)
    }

    /// Directional derivatives of one class output along `v`, one per point.
    pub fn class_directional(&self, class: usize, v: &[f64]) -> Vec<f64> {
        (0..self.points).map(|i| dot(self.gradient(i, class), v)).collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `S_v(x_i)` for every sample: row `i` is the Jacobian at `z_i` times `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: DMatrix<f64>,
    direction: ConceptDirection,
    kind: GradientKind,
}

impl ScoreMatrix {
    pub fn new(values: DMatrix<f64>, direction: ConceptDirection, kind: GradientKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(Self {
            values,
            direction,
            kind,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn direction(&self) -> &ConceptDirection {
        &self.direction
    }

    pub fn kind(&self) -> GradientKind {
        self.kind
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn class_column(&self, k: usize) -> Vec<f64> {
        self.values.column(k).iter().copied().collect()
    }
}

pub fn activation_scores(
    model: &MlpModel,
    feats: &FeatureMatrix,
    v: &ConceptDirection,
    kind: GradientKind,
) -> Result<ScoreMatrix> {
    v.require(Space::Feature)?;
    if v.dim() != feats.dim() {
        return Err(Error::DimensionMismatch {
            what: "concept direction",
            expected: feats.dim(),
            found: v.dim(),
        });
    }
    let mut values = DMatrix::zeros(feats.nrows(), model.n_classes());
    let logit_row = model.logit_jacobian() * v.vector();
    for i in 0..feats.nrows() {
        let row: DVector<f64> = match kind {
            GradientKind::Probability => model.prob_jacobian(&feats.row(i))? * v.vector(),
            GradientKind::Logit => logit_row.clone(),
        };
        values.set_row(i, &row.transpose());
    }
    ScoreMatrix::new(values, v.clone(), kind)
}

/// Fraction of class-`k` values that are strictly positive. Exact zeros
/// count against the concept.
pub fn tcav_fraction(values: &[f64], labels: &[usize], k: usize) -> Result<f64> {
    let mut total = 0usize;
    let mut positive = 0usize;
    for (v, &l) in values.iter().zip(labels) {
        if l == k {
            total += 1;
            if *v > 0.0 {
                positive += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyClass(k));
    }
    Ok(positive as f64 / total as f64)
}

pub fn tcav_score(scores: &ScoreMatrix, labels: &[usize], k: usize) -> Result<f64> {
    check_labels(scores, labels, k)?;
    tcav_fraction(&scores.class_column(k), labels, k)
}

/// Population over which the SD statistic is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatScope {
    /// Every sample, whatever its label.
    #[default]
    All,
    /// Only the samples labelled with the class being scored.
    Class,
}

/// Population standard deviation (divide by `n`).
pub fn population_sd(values: impl IntoIterator<Item = f64>) -> Result<f64> {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    if n == 0 {
        return Err(Error::EmptyScope);
    }
    Ok((m2 / n as f64).max(0.0).sqrt())
}

pub fn sd_statistic(scores: &ScoreMatrix, labels: &[usize], k: usize, scope: StatScope) -> Result<f64> {
    check_labels(scores, labels, k)?;
    let column = scores.values.column(k);
    match scope {
        StatScope::All => population_sd(column.iter().copied()),
        StatScope::Class => population_sd(
            column
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == k)
                .map(|(v, _)| *v),
        ),
    }
}

fn check_labels(scores: &ScoreMatrix, labels: &[usize], k: usize) -> Result<()> {
    if labels.len() != scores.n_points() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: scores.n_points(),
            found: labels.len(),
        });
    }
    if k >= scores.n_classes() {
        return Err(Error::IndexOutOfRange {
            what: "classes",
            index: k,
            len: scores.n_classes(),
        });
    }
    Ok(())
}
