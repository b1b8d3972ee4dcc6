//! Synthetic fixtures shared by the benchmarks and the latency tests.

use conceptscope::concepts::{GradientKind, GradientTensor};
use conceptscope::reduce::{PcaModel, ProjectionBundle};
use conceptscope::rng::stream_rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// A bundle of `m` points with `classes` classes in `k` projected dimensions,
/// filled with uniform noise.
pub fn synthetic_bundle(m: usize, classes: usize, k: usize, seed: u64) -> ProjectionBundle {
    let mut rng = stream_rng(seed, 0);
    let z = DMatrix::from_fn(m, k, |_, _| rng.random_range(-1.0..1.0));
    let data = (0..m * classes * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gradients = GradientTensor::new(m, classes, k, data).expect("consistent shape");
    let ratios = (0..k).map(|j| 0.5f64.powi(j as i32 + 1)).collect();
    let pca = PcaModel::from_parts(DVector::zeros(k), DMatrix::identity(k, k), ratios).expect("identity components");
    ProjectionBundle::new(
        (0..classes).map(|c| format!("class{c}")).collect(),
        (0..m).map(|i| i.to_string()).collect(),
        z,
        (0..m).map(|i| i % classes).collect(),
        gradients,
        GradientKind::Probability,
        pca,
    )
    .expect("consistent bundle")
}

/// Uniform features and gradients for ingest-scale benchmarks.
pub fn synthetic_features(m: usize, n: usize, classes: usize, seed: u64) -> (DMatrix<f64>, GradientTensor) {
    let mut rng = stream_rng(seed, 1);
    let feats = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.0..1.0));
    let data = (0..m * classes * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (feats, GradientTensor::new(m, classes, n, data).expect("consistent shape"))
}
