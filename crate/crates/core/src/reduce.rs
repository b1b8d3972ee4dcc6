//! PCA of learned features and the projected-gradient fast scoring path.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::concepts::{tcav_fraction, GradientKind, GradientTensor};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};

const ORTHONORMAL_TOL: f64 = 1e-8;

/// Principal components of a point cloud. `components` is `n × k` with
/// orthonormal columns ordered by decreasing explained variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
    variance_ratios: Vec<f64>,
}

impl PcaModel {
    /// Rebuild a model from stored parts, re-checking its invariants.
    pub fn from_parts(mean: DVector<f64>, components: DMatrix<f64>, variance_ratios: Vec<f64>) -> Result<Self> {
        if components.nrows() != mean.len() || components.ncols() != variance_ratios.len() {
            return Err(Error::ShapeMismatch {
                what: "pca components".into(),
                expected: vec![mean.len(), variance_ratios.len()],
                found: vec![components.nrows(), components.ncols()],
            });
        }
        let model = Self {
            mean,
            components,
            explained_variance: Vec::new(),
            variance_ratios,
        };
        model.check()?;
        Ok(model)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn component(&self, j: usize) -> DVector<f64> {
        self.components.column(j).into_owned()
    }

    /// Eigenvalues of the sample covariance (divisor `m − 1`); empty when
    /// the model was rebuilt from an export.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn variance_ratios(&self) -> &[f64] {
        &self.variance_ratios
    }

    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        pca_transform(self, x)
    }

    pub fn inverse(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        pca_inverse(self, z)
    }

    /// `Vᵀv` for a single feature-space vector (no centering).
    pub fn project_vector(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.require_dim("vector", v.len())?;
        let mut out = vec![0.0; self.k()];
        project_into(&self.components, v, &mut out);
        Ok(out)
    }

    /// `V u`: the feature-space vector whose projection is `u`.
    pub fn lift_vector(&self, u: &[f64]) -> Result<DVector<f64>> {
        if u.len() != self.k() {
            return Err(Error::DimensionMismatch {
                what: "projected vector",
                expected: self.k(),
                found: u.len(),
            });
        }
        Ok(&self.components * DVector::from_column_slice(u))
    }

    fn require_dim(&self, what: &'static str, found: usize) -> Result<()> {
        if found != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.input_dim(),
                found,
            });
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let gram = self.components.tr_mul(&self.components);
        let k = self.k();
        if (gram - DMatrix::identity(k, k)).amax() > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument("pca components are not orthonormal".into()));
        }
        let r = &self.variance_ratios;
        let ordered = r.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let bounded = r.iter().all(|x| (0.0..=1.0 + 1e-12).contains(x));
        if !ordered || !bounded || r.iter().sum::<f64>() > 1.0 + ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(
                "variance ratios must be nonincreasing and sum to at most 1".into(),
            ));
        }
        Ok(())
    }
}

fn project_into(components: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = components.column(j).iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Fit the top `k` principal components of the rows of `x`.
///
/// Uses the SVD of the centered matrix. Tall inputs are first reduced to
/// their `n × n` triangular QR factor, which has the same right singular
/// vectors. Each component's largest-magnitude entry is made positive.
pub fn pca_fit(x: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (m, n) = x.shape();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("pca needs at least 2 rows, got {m}")));
    }
    if k == 0 || k > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "pca k = {k} must lie in 1..={} for a {m}×{n} matrix",
            m.min(n)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("pca input must be finite".into()));
    }
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let total: f64 = centered.norm_squared();
    if !(total > 0.0) {
        return Err(Error::DegenerateSpread("pca input has zero variance".into()));
    }
    let reduced = if m > n { centered.qr().unpack_r() } else { centered };
    let svd = reduced.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let mut components = DMatrix::zeros(n, k);
    let mut explained_variance = Vec::with_capacity(k);
    let mut variance_ratios = Vec::with_capacity(k);
    for (j, &src) in order.iter().take(k).enumerate() {
        let mut c: DVector<f64> = v_t.row(src).transpose();
        let lead = c.iamax();
        if c[lead] < 0.0 {
            c.neg_mut();
        }
        components.set_column(j, &c);
        let s2 = svd.singular_values[src].powi(2);
        explained_variance.push(s2 / (m - 1) as f64);
        variance_ratios.push((s2 / total).min(1.0));
    }
    let model = PcaModel {
        mean,
        components,
        explained_variance,
        variance_ratios,
    };
    model.check()?;
    Ok(model)
}

/// Fit on `sample` rows drawn without replacement, or on all rows when the
/// sample is absent or not smaller than the data.
pub fn pca_fit_sampled(x: &DMatrix<f64>, k: usize, sample: Option<usize>, seed: u64) -> Result<PcaModel> {
    match sample {
        Some(s) if s < x.nrows() => {
            let rows = subsample_rows(x.nrows(), s, seed);
            pca_fit(&x.select_rows(rows.iter()), k)
        }
        _ => pca_fit(x, k),
    }
}

/// Sorted row indices of a without-replacement sample of size `count`.
pub fn subsample_rows(rows: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, purpose::PCA_SAMPLE);
    let mut picked = index::sample(&mut rng, rows, count.min(rows)).into_vec();
    picked.sort_unstable();
    picked
}

/// `Z = (X − μ) V`.
pub fn pca_transform(p: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    p.require_dim("pca input", x.ncols())?;
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= p.mean.transpose();
    }
    Ok(centered * &p.components)
}

/// `X̂ = Z Vᵀ + μ`.
pub fn pca_inverse(p: &PcaModel, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != p.k() {
        return Err(Error::DimensionMismatch {
            what: "pca scores",
            expected: p.k(),
            found: z.ncols(),
        });
    }
    let mut x = z * p.components.transpose();
    for mut row in x.row_iter_mut() {
        row += p.mean.transpose();
    }
    Ok(x)
}

/// Map every gradient `g` to `Vᵀg`. Gradients are directions, so the mean is
/// not subtracted.
pub fn project_gradients(p: &PcaModel, grads: &GradientTensor) -> Result<GradientTensor> {
    p.require_dim("gradient", grads.dim())?;
    Ok(grads.map_vectors(p.k(), |g, out| project_into(&p.components, g, out)))
}

/// Everything the explorer needs: projected points, projected per-class
/// gradients and the PCA model that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBundle {
    classes: Vec<String>,
    ids: Vec<String>,
    z: DMatrix<f64>,
    labels: Vec<usize>,
    gradients: GradientTensor,
    gradient_kind: GradientKind,
    pca: PcaModel,
}

impl ProjectionBundle {
    pub fn new(
        classes: Vec<String>,
        ids: Vec<String>,
        z: DMatrix<f64>,
        labels: Vec<usize>,
        gradients: GradientTensor,
        gradient_kind: GradientKind,
        pca: PcaModel,
    ) -> Result<Self> {
        let m = z.nrows();
        let k = pca.k();
        if ids.len() != m || labels.len() != m || gradients.points() != m {
            return Err(Error::ShapeMismatch {
                what: "bundle rows (points, ids, labels, gradients)".into(),
                expected: vec![m, m, m, m],
                found: vec![m, ids.len(), labels.len(), gradients.points()],
            });
        }
        if z.ncols() != k || gradients.dim() != k {
            return Err(Error::ShapeMismatch {
                what: "bundle projected width (points, gradients)".into(),
                expected: vec![k, k],
                found: vec![z.ncols(), gradients.dim()],
            });
        }
        if gradients.classes() != classes.len() {
            return Err(Error::DimensionMismatch {
                what: "gradient classes",
                expected: classes.len(),
                found: gradients.classes(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::IndexOutOfRange {
                what: "classes",
                index: bad,
                len: classes.len(),
            });
        }
        Ok(Self {
            classes,
            ids,
            z,
            labels,
            gradients,
            gradient_kind,
            pca,
        })
    }

    /// Fit PCA on `features` (optionally on a row sample), then project the
    /// features and the full-space gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        features: &DMatrix<f64>,
        gradients: &GradientTensor,
        labels: Vec<usize>,
        classes: Vec<String>,
        kind: GradientKind,
        k: usize,
        fit_sample: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if gradients.points() != features.nrows() || gradients.dim() != features.ncols() {
            return Err(Error::ShapeMismatch {
                what: "gradient tensor".into(),
                expected: vec![features.nrows(), classes.len(), features.ncols()],
                found: gradients.shape().to_vec(),
            });
        }
        let pca = pca_fit_sampled(features, k, fit_sample, seed)?;
        let z = pca.transform(features)?;
        let g = project_gradients(&pca, gradients)?;
        let ids = (0..features.nrows()).map(|i| i.to_string()).collect();
        Self::new(classes, ids, z, labels, g, kind, pca)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn gradients(&self) -> &GradientTensor {
        &self.gradients
    }

    pub fn gradient_kind(&self) -> GradientKind {
        self.gradient_kind
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn k(&self) -> usize {
        self.pca.k()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&BundleJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<BundleJson>(text)?.try_into()
    }
}

/// Projected TCAV of class `class` along `v2`: per-point scores
/// `G[i, class, :]·v2` for every point and the fraction of class members
/// with a strictly positive score.
pub fn projected_tcav(bundle: &ProjectionBundle, v2: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    if v2.len() != bundle.k() {
        return Err(Error::DimensionMismatch {
            what: "projected direction",
            expected: bundle.k(),
            found: v2.len(),
        });
    }
    if v2.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("direction must be finite".into()));
    }
    if v2.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateDirection("zero vector".into()));
    }
    if class >= bundle.classes.len() {
        return Err(Error::IndexOutOfRange {
            what: "classes",
            index: class,
            len: bundle.classes.len(),
        });
    }
    let per_point = bundle.gradients.class_directional(class, v2);
    let score = tcav_fraction(&per_point, &bundle.labels, class)?;
    Ok((score, per_point))
}

#[derive(Serialize, Deserialize)]
struct BundleJson {
    classes: Vec<String>,
    points: Vec<PointJson>,
    gradients: Vec<Vec<Vec<f64>>>,
    variance_ratios: Vec<f64>,
    gradient_kind: GradientKind,
    pca: PcaJson,
}

#[derive(Serialize, Deserialize)]
struct PointJson {
    id: String,
    z: Vec<f64>,
    label: usize,
}

/// `components[j]` is the j-th principal direction (length `n`).
#[derive(Serialize, Deserialize)]
struct PcaJson {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    explained_variance: Vec<f64>,
}

impl From<&ProjectionBundle> for BundleJson {
    fn from(b: &ProjectionBundle) -> Self {
        let k = b.k();
        let points = (0..b.len())
            .map(|i| PointJson {
                id: b.ids[i].clone(),
                z: b.z.row(i).iter().copied().collect(),
                label: b.labels[i],
            })
            .collect();
        let gradients = (0..b.len())
            .map(|i| {
                (0..b.classes.len())
                    .map(|c| b.gradients.gradient(i, c).to_vec())
                    .collect()
            })
            .collect();
        BundleJson {
            classes: b.classes.clone(),
            points,
            gradients,
            variance_ratios: b.pca.variance_ratios.clone(),
            gradient_kind: b.gradient_kind,
            pca: PcaJson {
                mean: b.pca.mean.iter().copied().collect(),
                components: (0..k).map(|j| b.pca.components.column(j).iter().copied().collect()).collect(),
                explained_variance: b.pca.explained_variance.clone(),
            },
        }
    }
}

impl TryFrom<BundleJson> for ProjectionBundle {
    type Error = Error;

    fn try_from(j: BundleJson) -> Result<Self> {
        let n = j.pca.mean.len();
        let k = j.pca.components.len();
        if let Some(bad) = j.pca.components.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "pca component",
                expected: n,
                found: bad.len(),
            });
        }
        let components = DMatrix::from_fn(n, k, |r, c| j.pca.components[c][r]);
        let mut pca = PcaModel::from_parts(DVector::from_vec(j.pca.mean), components, j.variance_ratios)?;
        if !j.pca.explained_variance.is_empty() {
            if j.pca.explained_variance.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "explained variance",
                    expected: k,
                    found: j.pca.explained_variance.len(),
                });
            }
            pca.explained_variance = j.pca.explained_variance;
        }
        let m = j.points.len();
        let n_classes = j.classes.len();
        let mut z = DMatrix::zeros(m, k);
        let mut ids = Vec::with_capacity(m);
        let mut labels = Vec::with_capacity(m);
        for (i, p) in j.points.into_iter().enumerate() {
            if p.z.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "point coordinates",
                    expected: k,
                    found: p.z.len(),
                });
            }
            z.set_row(i, &DVector::from_vec(p.z).transpose());
            ids.push(p.id);
            labels.push(p.label);
        }
        if j.gradients.len() != m {
            return Err(Error::DimensionMismatch {
                what: "gradient rows",
                expected: m,
                found: j.gradients.len(),
            });
        }
        let mut data = Vec::with_capacity(m * n_classes * k);
        for per_point in &j.gradients {
            if per_point.len() != n_classes || per_point.iter().any(|g| g.len() != k) {
                return Err(Error::ShapeMismatch {
                    what: "per-point gradients".into(),
                    expected: vec![n_classes, k],
                    found: vec![per_point.len(), per_point.first().map_or(0, Vec::len)],
                });
            }
            for g in per_point {
                data.extend_from_slice(g);
            }
        }
        let gradients = GradientTensor::new(m, n_classes, k, data)?;
        ProjectionBundle::new(j.classes, ids, z, labels, gradients, j.gradient_kind, pca)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(seed: u64, m: usize, n: usize) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 11);
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Eigenvalues of the sample covariance, largest first.
    fn covariance_eigen(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let m = x.nrows() as f64;
        let mean = x.row_mean();
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            row -= &mean;
        }
        let cov = c.tr_mul(&c) / (m - 1.0);
        let eig = cov.symmetric_eigen();
        let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = eig.eigenvectors.select_columns(idx.iter());
        (vals, vecs)
    }

    #[test]
    fn line_data_has_one_component() {
        let x = DMatrix::from_fn(50, 2, |i, j| (i as f64 - 20.0) * if j == 0 { 3.0 } else { 4.0 });
        let p = pca_fit(&x, 1).unwrap();
        assert!((p.variance_ratios()[0] - 1.0).abs() < 1e-12);
        let c = p.component(0);
        assert!((c[0] - 0.6).abs() < 1e-12 && (c[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ratios_match_covariance_oracle() {
        let x = random_matrix(1, 200, 20);
        let p = pca_fit(&x, 20).unwrap();
        let (vals, vecs) = covariance_eigen(&x);
        let total: f64 = vals.iter().sum();
        for j in 0..20 {
            assert!((p.variance_ratios()[j] - vals[j] / total).abs() < 1e-8);
            assert!((p.explained_variance()[j] - vals[j]).abs() < 1e-8);
            let dot = p.component(j).dot(&vecs.column(j)).abs();
            assert!((dot - 1.0).abs() < 1e-6, "component {j}: {dot}");
        }
        assert!((p.variance_ratios().iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn wide_input_uses_direct_svd() {
        let x = random_matrix(2, 8, 30);
        let p = pca_fit(&x, 7).unwrap();
        let (vals, _) = covariance_eigen(&x);
        let total: f64 = vals.iter().sum();
        for j in 0..7 {
            assert!((p.variance_ratios()[j] - vals[j] / total).abs() < 1e-8);
        }
        assert!(pca_fit(&x, 9).is_err());
    }

    #[test]
    fn sign_convention() {
        let p = pca_fit(&random_matrix(3, 100, 6), 6).unwrap();
        for j in 0..6 {
            let c = p.component(j);
            assert!(c[c.iamax()] > 0.0);
        }
    }

    #[test]
    fn transform_examples() {
        let x = random_matrix(4, 60, 5);
        let p = pca_fit(&x, 5).unwrap();
        let mu = DMatrix::from_fn(3, 5, |_, j| p.mean()[j]);
        assert!(p.transform(&mu).unwrap().amax() < 1e-12);
        let round = p.inverse(&p.transform(&x).unwrap()).unwrap();
        assert!((round - &x).amax() < 1e-8);
        let one = DMatrix::from_fn(1, 5, |_, j| p.mean()[j] + p.components()[(j, 0)]);
        let z = p.transform(&one).unwrap();
        assert!((z[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(z.columns(1, 4).amax() < 1e-12);
        let back = p.inverse(&DMatrix::zeros(2, 5)).unwrap();
        assert!((back.row(1).transpose() - p.mean()).amax() < 1e-15);
        assert!(p.transform(&DMatrix::zeros(1, 4)).is_err());
        assert!(p.inverse(&DMatrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn reconstruction_error_matches_discarded_eigenvalues() {
        let x = random_matrix(5, 150, 10);
        let (vals, _) = covariance_eigen(&x);
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let p = pca_fit(&x, k).unwrap();
            let err = (p.inverse(&p.transform(&x).unwrap()).unwrap() - &x).norm_squared();
            let expected: f64 = vals[k..].iter().sum::<f64>() * 149.0;
            assert!((err - expected).abs() < 1e-8 * (1.0 + expected), "k={k}");
            assert!(err <= last + 1e-10);
            last = err;
        }
    }

    #[test]
    fn fit_errors() {
        assert!(pca_fit(&DMatrix::zeros(1, 3), 1).is_err());
        assert!(matches!(
            pca_fit(&DMatrix::from_element(10, 3, 2.0), 1),
            Err(Error::DegenerateSpread(_))
        ));
        assert!(pca_fit(&random_matrix(0, 10, 3), 0).is_err());
    }

    #[test]
    fn isotropic_features_have_small_first_ratio() {
        let mut rng = stream_rng(6, 0);
        let x = DMatrix::from_fn(500, 200, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let p = pca_fit(&x, 10).unwrap();
        assert!(p.variance_ratios()[0] < 0.05);
    }

    fn tensor(seed: u64, m: usize, k: usize, n: usize) -> GradientTensor {
        let mut rng = stream_rng(seed, 12);
        let data = (0..m * k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        GradientTensor::new(m, k, n, data).unwrap()
    }

    #[test]
    fn projected_gradients_examples() {
        let p = pca_fit(&random_matrix(7, 80, 6), 3).unwrap();
        let v1 = p.component(0);
        let g = GradientTensor::new(1, 1, 6, v1.iter().copied().collect()).unwrap();
        let out = project_gradients(&p, &g).unwrap();
        assert!((out.gradient(0, 0)[0] - 1.0).abs() < 1e-12);
        assert!(out.gradient(0, 0)[1..].iter().all(|x| x.abs() < 1e-12));

        // remove the span of the kept components
        let mut h = DVector::from_fn(6, |i, _| (i as f64).sin());
        for j in 0..3 {
            let c = p.component(j);
            h -= &c * c.dot(&h);
        }
        let g = GradientTensor::new(1, 1, 6, h.iter().copied().collect()).unwrap();
        let out = project_gradients(&p, &g).unwrap();
        assert!(out.gradient(0, 0).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn in_span_directional_derivatives_are_exact() {
        let p = pca_fit(&random_matrix(8, 100, 8), 3).unwrap();
        let grads = tensor(9, 40, 3, 8);
        let proj = project_gradients(&p, &grads).unwrap();
        let u = [0.3, -1.2, 0.5];
        let v = p.lift_vector(&u).unwrap();
        assert!((DVector::from_vec(p.project_vector(v.as_slice()).unwrap()) - DVector::from_row_slice(&u)).amax() < 1e-12);
        for i in 0..40 {
            for c in 0..3 {
                let full: f64 = grads.gradient(i, c).iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                let fast: f64 = proj.gradient(i, c).iter().zip(&u).map(|(a, b)| a * b).sum();
                assert!((full - fast).abs() < 1e-10);
            }
        }
    }

    fn small_bundle() -> ProjectionBundle {
        let x = random_matrix(10, 30, 4);
        let grads = tensor(11, 30, 2, 4);
        let labels = (0..30).map(|i| i % 2).collect();
        ProjectionBundle::build(&x, &grads, labels, vec!["a".into(), "b".into()], GradientKind::Probability, 2, None, 0)
            .unwrap()
    }

    #[test]
    fn bundle_json_round_trip_is_exact() {
        let b = small_bundle();
        let text = b.to_json().unwrap();
        let back = ProjectionBundle::from_json(&text).unwrap();
        assert_eq!(back.points(), b.points());
        assert_eq!(back.gradients(), b.gradients());
        assert_eq!(back.pca().components(), b.pca().components());
        assert_eq!(back.to_json().unwrap(), text);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["classes", "points", "gradients", "variance_ratios", "gradient_kind", "pca"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["points"][0]["z"].as_array().unwrap().len(), 2);
        assert_eq!(v["gradients"][0].as_array().unwrap().len(), 2);
        assert_eq!(v["gradient_kind"], "probability");
    }

    #[test]
    fn projected_tcav_examples() {
        let b = small_bundle();
        assert!(projected_tcav(&b, &[0.0, 0.0], 0).is_err());
        assert!(projected_tcav(&b, &[1.0], 0).is_err());
        assert!(projected_tcav(&b, &[1.0, 0.0], 5).is_err());
        let (s, per) = projected_tcav(&b, &[0.4, -0.7], 1).unwrap();
        let (t, _) = projected_tcav(&b, &[-0.4, 0.7], 1).unwrap();
        assert_eq!(per.len(), 30);
        assert!((s + t - 1.0).abs() < 1e-12);

        // every class-0 gradient aligned with v2
        let data = (0..5).flat_map(|i| [1.0 + i as f64, 0.5, -1.0, 2.0]).collect();
        let g = GradientTensor::new(5, 2, 2, data).unwrap();
        let pca = PcaModel::from_parts(DVector::zeros(2), DMatrix::identity(2, 2), vec![0.6, 0.4]).unwrap();
        let b = ProjectionBundle::new(
            vec!["a".into(), "b".into()],
            (0..5).map(|i| i.to_string()).collect(),
            DMatrix::zeros(5, 2),
            vec![0, 0, 0, 1, 1],
            g,
            GradientKind::Logit,
            pca,
        )
        .unwrap();
        assert_eq!(projected_tcav(&b, &[1.0, 0.5], 0).unwrap().0, 1.0);
    }

    #[test]
    fn subsample_is_sorted_and_deterministic() {
        let a = subsample_rows(1000, 600, 3);
        assert_eq!(a, subsample_rows(1000, 600, 3));
        assert_eq!(a.len(), 600);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn projection_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..50) {
            let p = pca_fit(&random_matrix(seed, 40, 5), 3).unwrap();
            let g = tensor(seed + 100, 2, 1, 5);
            let (g1, g2) = (g.gradient(0, 0), g.gradient(1, 0));
            let combo: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = p.project_vector(&combo).unwrap();
            let (p1, p2) = (p.project_vector(g1).unwrap(), p.project_vector(g2).unwrap());
            for j in 0..3 {
                prop_assert!((lhs[j] - (alpha * p1[j] + beta * p2[j])).abs() < 1e-10);
            }
        }
    }
}
