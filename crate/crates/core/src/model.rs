//! One-hidden-layer ReLU classifier with closed-form Jacobians.
//!
//! `z(x) = ReLU(W1·x + b1)`, `p(z) = softmax(W2·z + b2)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng, SeededRng};
use crate::simdata::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

/// A hidden unit's activating half-space: active where `normal·x + offset > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn activation(&self, x: &[f64]) -> f64 {
        let pre: f64 = self.normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.offset;
        pre.max(0.0)
    }
}

/// Post-ReLU features, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "feature values must be finite and non-negative".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.0.row(i).transpose()
    }
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let mut out = logits.map(|l| (l - max).exp());
    let total = out.sum();
    out /= total;
    out
}

impl MlpModel {
    pub fn new(
        w1: DMatrix<f64>,
        b1: DVector<f64>,
        w2: DMatrix<f64>,
        b2: DVector<f64>,
    ) -> Result<Self> {
        check_dim("b1 length", w1.nrows(), b1.len())?;
        check_dim("W2 columns", w1.nrows(), w2.ncols())?;
        check_dim("b2 length", w2.nrows(), b2.len())?;
        if w1.nrows() == 0 || w1.ncols() == 0 || w2.nrows() == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        let finite = w1.iter().chain(b1.iter()).chain(w2.iter()).chain(b2.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("model weights must be finite".into()));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(input_dim: usize, hidden: usize, classes: usize, rng: &mut SeededRng) -> Self {
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + classes) as f64).sqrt();
        // row-major draw order
        let w1 = DMatrix::from_row_iterator(
            hidden,
            input_dim,
            (0..hidden * input_dim).map(|_| rng.random_range(-a1..a1)).collect::<Vec<_>>(),
        );
        let w2 = DMatrix::from_row_iterator(
            classes,
            hidden,
            (0..classes * hidden).map(|_| rng.random_range(-a2..a2)).collect::<Vec<_>>(),
        );
        Self {
            w1,
            b1: DVector::zeros(hidden),
            w2,
            b2: DVector::zeros(classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.w2.nrows()
    }

    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &DVector<f64> {
        &self.b1
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    pub fn b2(&self) -> &DVector<f64> {
        &self.b2
    }

    pub fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("input", self.input_dim(), x.len())?;
        let x = DVector::from_column_slice(x);
        Ok((&self.w1 * x + &self.b1).map(|v| v.max(0.0)))
    }

    pub fn feature_matrix(&self, samples: &DMatrix<f64>) -> Result<FeatureMatrix> {
        check_dim("input", self.input_dim(), samples.ncols())?;
        let mut pre = samples * self.w1.transpose();
        for mut row in pre.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b1.iter()) {
                *v = (*v + b).max(0.0);
            }
        }
        Ok(FeatureMatrix(pre))
    }

    pub fn logits(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("features", self.hidden_dim(), z.len())?;
        Ok(&self.w2 * z + &self.b2)
    }

    pub fn class_probs(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(softmax(&self.logits(z)?))
    }

    /// `∂p_k/∂z_j = p_k (W2[k, j] − Σ_m p_m W2[m, j])`, a `K × J` matrix.
    pub fn prob_jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = self.class_probs(z)?;
        let mean_row = self.w2.tr_mul(&p);
        let mut jac = self.w2.clone();
        for (k, mut row) in jac.row_iter_mut().enumerate() {
            for (v, m) in row.iter_mut().zip(mean_row.iter()) {
                *v = p[k] * (*v - m);
            }
        }
        Ok(jac)
    }

    /// Logits are affine in `z`, so their Jacobian is `W2` everywhere.
    pub fn logit_jacobian(&self) -> DMatrix<f64> {
        self.w2.clone()
    }

    pub fn feature_halfspace(&self, j: usize) -> Result<HalfSpace> {
        if j >= self.hidden_dim() {
            return Err(Error::IndexOutOfRange {
                what: "hidden features",
                index: j,
                len: self.hidden_dim(),
            });
        }
        Ok(HalfSpace {
            normal: self.w1.row(j).transpose(),
            offset: self.b1[j],
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(&self.features(x)?)?;
        Ok(logits.argmax().0)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let logits = self.batch_logits(&self.feature_matrix(data.samples())?);
        let correct = logits
            .row_iter()
            .zip(data.labels())
            .filter(|(row, &y)| row.transpose().argmax().0 == y)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    fn batch_logits(&self, feats: &FeatureMatrix) -> DMatrix<f64> {
        let mut logits = feats.as_matrix() * self.w2.transpose();
        for mut row in logits.row_iter_mut() {
            row += self.b2.transpose();
        }
        logits
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let json: ModelJson = serde_json::from_str(text)?;
        json.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e))
    }
}

/// On-disk model layout: explicit shapes plus row-major weights.
#[derive(Debug, Serialize, Deserialize)]
struct ModelJson {
    input_dim: usize,
    hidden: usize,
    classes: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&MlpModel> for ModelJson {
    fn from(m: &MlpModel) -> Self {
        Self {
            input_dim: m.input_dim(),
            hidden: m.hidden_dim(),
            classes: m.n_classes(),
            w1: row_major(&m.w1),
            b1: m.b1.as_slice().to_vec(),
            w2: row_major(&m.w2),
            b2: m.b2.as_slice().to_vec(),
        }
    }
}

impl TryFrom<ModelJson> for MlpModel {
    type Error = Error;

    fn try_from(j: ModelJson) -> Result<Self> {
        let shape = |what: &str, v: &[f64], expected: usize| {
            if v.len() == expected {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    what: what.to_string(),
                    expected: vec![expected],
                    found: vec![v.len()],
                })
            }
        };
        shape("w1", &j.w1, j.hidden * j.input_dim)?;
        shape("b1", &j.b1, j.hidden)?;
        shape("w2", &j.w2, j.classes * j.hidden)?;
        shape("b2", &j.b2, j.classes)?;
        MlpModel::new(
            DMatrix::from_row_slice(j.hidden, j.input_dim, &j.w1),
            DVector::from_vec(j.b1),
            DMatrix::from_row_slice(j.classes, j.hidden, &j.w2),
            DVector::from_vec(j.b2),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 20,
            epochs: 3000,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub accuracy: f64,
}

/// Full-batch gradient descent on mean cross-entropy.
///
/// Weights start from [`MlpModel::glorot`] on the `INIT` stream of
/// `config.seed`. The ReLU subgradient at 0 is 0.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    if config.hidden == 0 {
        return Err(Error::InvalidArgument("hidden width must be at least 1".into()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    let n = data.len();
    let k = data.n_classes();
    let x = data.samples();
    let mut rng = stream_rng(config.seed, purpose::INIT);
    let mut model = MlpModel::glorot(data.dim(), config.hidden, k, &mut rng);
    let inv_n = 1.0 / n as f64;

    let mut loss = f64::NAN;
    for epoch in 0..=config.epochs {
        let mut pre = x * model.w1.transpose();
        for mut row in pre.row_iter_mut() {
            row += model.b1.transpose();
        }
        let z = pre.map(|v| v.max(0.0));
        let mut g = &z * model.w2.transpose();
        loss = 0.0;
        for (i, mut row) in g.row_iter_mut().enumerate() {
            row += model.b2.transpose();
            let max = row.max();
            let target = row[data.labels()[i]] - max;
            row.apply(|v| *v = (*v - max).exp());
            let total = row.sum();
            loss -= target - total.ln();
            row /= total;
            row[data.labels()[i]] -= 1.0;
            row *= inv_n;
        }
        loss *= inv_n;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if epoch == config.epochs {
            break;
        }
        // g now holds ∂loss/∂logits
        let grad_w2 = g.tr_mul(&z);
        let grad_b2 = row_sums(&g);
        let mut gz = &g * &model.w2;
        gz.zip_apply(&pre, |v, p| {
            if p <= 0.0 {
                *v = 0.0
            }
        });
        let grad_w1 = gz.tr_mul(x);
        let grad_b1 = row_sums(&gz);

        let lr = config.learning_rate;
        model.w1 -= grad_w1 * lr;
        model.b1 -= grad_b1 * lr;
        model.w2 -= grad_w2 * lr;
        model.b2 -= grad_b2 * lr;
        if !model.is_finite() {
            return Err(Error::TrainingDiverged { epoch: epoch + 1 });
        }
    }
    let accuracy = model.accuracy(data)?;
    Ok((
        model,
        TrainReport {
            epochs: config.epochs,
            final_loss: loss,
            accuracy,
        },
    ))
}

impl MlpModel {
    fn is_finite(&self) -> bool {
        [&self.w1, &self.w2].iter().all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.b1, &self.b2].iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    m.row_sum().transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::generate_simulation;

    fn random_model(seed: u64, d: usize, h: usize, k: usize) -> MlpModel {
        let mut rng = stream_rng(seed, 99);
        let mut m = MlpModel::glorot(d, h, k, &mut rng);
        m.b1 = DVector::from_fn(h, |_, _| rng.random_range(-0.5..0.5));
        m.b2 = DVector::from_fn(k, |_, _| rng.random_range(-0.5..0.5));
        m
    }

    #[test]
    fn relu_features() {
        let m = MlpModel::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(3, 2),
            DVector::zeros(3),
        )
        .unwrap();
        assert_eq!(m.features(&[-1.0, 2.0]).unwrap().as_slice(), &[0.0, 2.0]);
        assert_eq!(m.features(&[0.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(matches!(
            m.features(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn features_match_direct_formula() {
        let m = random_model(1, 3, 7, 4);
        let x = [0.3, -0.7, 0.2];
        let z = m.features(&x).unwrap();
        for j in 0..7 {
            let mut pre = m.b1[j];
            for i in 0..3 {
                pre += m.w1[(j, i)] * x[i];
            }
            assert!((z[j] - pre.max(0.0)).abs() < 1e-14);
        }
        let batch = m.feature_matrix(&DMatrix::from_row_slice(1, 3, &x)).unwrap();
        assert!((batch.row(0) - z).amax() < 1e-15);
    }

    #[test]
    fn uniform_and_saturated_softmax() {
        let m = MlpModel::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(3, 2),
            DVector::zeros(3),
        )
        .unwrap();
        let p = m.class_probs(&DVector::from_vec(vec![0.4, 1.0])).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let m = MlpModel::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(3, 2),
            DVector::from_vec(vec![1000.0, 0.0, 0.0]),
        )
        .unwrap();
        let p = m.class_probs(&DVector::zeros(2)).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_class_identity_jacobian() {
        let m = MlpModel::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .unwrap();
        let z = DVector::from_vec(vec![0.3, 0.3]);
        let jac = m.prob_jacobian(&z).unwrap();
        // frozen from central finite differences with step 1e-6
        let expected = [[0.25, -0.25], [-0.25, 0.25]];
        for k in 0..2 {
            for j in 0..2 {
                assert!((jac[(k, j)] - expected[k][j]).abs() < 1e-9);
            }
        }
    }

    fn fd_prob_jacobian(m: &MlpModel, z: &DVector<f64>, step: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.n_classes(), z.len());
        for j in 0..z.len() {
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[j] += step;
            minus[j] -= step;
            let dp = (m.class_probs(&plus).unwrap() - m.class_probs(&minus).unwrap()) / (2.0 * step);
            out.set_column(j, &dp);
        }
        out
    }

    #[test]
    fn prob_jacobian_matches_finite_differences() {
        for seed in 0..100 {
            let m = random_model(seed, 2, 20, 3);
            let mut rng = stream_rng(seed, 7);
            let z = DVector::from_fn(20, |_, _| rng.random_range(0.0..2.0));
            let jac = m.prob_jacobian(&z).unwrap();
            let fd = fd_prob_jacobian(&m, &z, 1e-6);
            assert!((&jac - fd).amax() <= 1e-5, "seed {seed}");
            for col in jac.column_iter() {
                assert!(col.sum().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn logit_jacobian_is_w2() {
        let m = random_model(5, 2, 6, 3);
        assert_eq!(m.logit_jacobian(), *m.w2());
        let z = DVector::from_element(6, 0.7);
        let h = 1e-4;
        for j in 0..6 {
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[j] += h;
            minus[j] -= h;
            let d = (m.logits(&plus).unwrap() - m.logits(&minus).unwrap()) / (2.0 * h);
            for k in 0..3 {
                assert!((d[k] - m.w2[(k, j)]).abs() < 1e-7);
            }
        }
        let single = MlpModel::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[0.5, -2.0]),
            DVector::zeros(1),
        )
        .unwrap();
        assert_eq!(single.logit_jacobian().as_slice(), &[0.5, -2.0]);
    }

    #[test]
    fn halfspace_examples() {
        let m = MlpModel::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::zeros(1),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
        )
        .unwrap();
        let hs = m.feature_halfspace(0).unwrap();
        assert_eq!(hs.activation(&[0.3, 0.5]), 0.5);
        assert_eq!(hs.activation(&[0.3, -0.5]), 0.0);
        assert_eq!(hs.activation(&[0.3, 0.0]), 0.0);
        assert!(matches!(
            m.feature_halfspace(1),
            Err(Error::IndexOutOfRange { .. })
        ));
        let m = random_model(3, 2, 20, 3);
        for j in 0..20 {
            let hs = m.feature_halfspace(j).unwrap();
            let x = [0.37, -0.81];
            assert_eq!(m.features(&x).unwrap()[j], hs.activation(&x));
        }
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let mut rng = stream_rng(4, 0);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100 {
            let c = if i % 2 == 0 { -2.0 } else { 2.0 };
            values.push(c + rng.random_range(-0.5..0.5));
            values.push(c + rng.random_range(-0.5..0.5));
            labels.push(i % 2);
        }
        let data = Dataset::new(DMatrix::from_row_slice(100, 2, &values), labels, 2).unwrap();
        let cfg = TrainConfig {
            hidden: 2,
            epochs: 500,
            learning_rate: 0.5,
            seed: 1,
        };
        let (_, report) = train(&data, &cfg).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn training_is_deterministic_and_accurate() {
        let data = generate_simulation(2000, 0).unwrap();
        let cfg = TrainConfig::default();
        let (a, report) = train(&data, &cfg).unwrap();
        let (b, _) = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(report.accuracy >= 0.98, "accuracy {}", report.accuracy);
        assert!(report.final_loss < 0.1);
    }

    #[test]
    fn divergence_is_reported() {
        // inputs this large overflow the hidden layer after one update
        let base = generate_simulation(200, 0).unwrap();
        let data = Dataset::new(base.samples() * 1e200, base.labels().to_vec(), 3).unwrap();
        let cfg = TrainConfig {
            hidden: 20,
            epochs: 200,
            learning_rate: 1.0,
            seed: 0,
        };
        match train(&data, &cfg) {
            Err(Error::TrainingDiverged { epoch }) => assert!(epoch > 0),
            Ok((_, r)) => panic!("expected divergence, got {r:?}"),
            Err(e) => panic!("expected divergence, got {e}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let m = random_model(9, 2, 5, 3);
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        assert!(MlpModel::from_json(r#"{"input_dim":2,"hidden":1,"classes":1,"w1":[1],"b1":[0],"w2":[1],"b2":[0]}"#).is_err());
    }
}
