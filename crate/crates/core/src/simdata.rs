//! Three-class disc/half-plane simulation and its geometric ground truth.
//!
//! Points are uniform on `[-1, 1]²`. Class 1 is the closed disc of radius
//! 0.25, class 0 the rest of the lower half plane (`x₂ < 0`), class 2 the
//! rest of the upper half plane (`x₂ ≥ 0`).

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};

pub const DISC_RADIUS: f64 = 0.25;
pub const SIMULATION_CLASSES: usize = 3;

/// Labelled samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: DMatrix<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(samples: DMatrix<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if samples.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset labels",
                expected: samples.nrows(),
                found: labels.len(),
            });
        }
        if samples.nrows() == 0 {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::IndexOutOfRange {
                what: "class labels",
                index: bad,
                len: n_classes,
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Self {
            samples,
            labels,
            n_classes,
        })
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sample(&self, i: usize) -> Vec<f64> {
        self.samples.row(i).iter().copied().collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Write `x1,...,xd,label` rows with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let header: Vec<String> = (1..=self.dim())
            .map(|i| format!("x{i}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "{}", header.join(","))?;
            for (i, &label) in self.labels.iter().enumerate() {
                for v in self.samples.row(i).iter() {
                    write!(out, "{v:.16e},")?;
                }
                writeln!(out, "{label}")?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Read a CSV written by [`Dataset::write_csv`]. The class count is one
    /// more than the largest label unless `n_classes` is given.
    pub fn read_csv(path: &Path, n_classes: Option<usize>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
        let headers = reader.headers().map_err(|e| Error::format(path, e))?.clone();
        let d = headers.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::format(path, "expected at least one coordinate column and a label column")
        })?;
        if headers.get(d) != Some("label") {
            return Err(Error::format(path, "last column must be `label`"));
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format(path, e))?;
            if record.len() != d + 1 {
                return Err(Error::format(
                    path,
                    format!("row {}: expected {} fields, found {}", line + 2, d + 1, record.len()),
                ));
            }
            for field in record.iter().take(d) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::format(path, format!("row {}: bad number `{field}`", line + 2))
                })?;
                values.push(v);
            }
            let label: usize = record[d].trim().parse().map_err(|_| {
                Error::format(path, format!("row {}: bad label `{}`", line + 2, &record[d]))
            })?;
            labels.push(label);
        }
        let k = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let samples = DMatrix::from_row_slice(labels.len(), d, &values);
        Dataset::new(samples, labels, k)
    }
}

/// Class of a point under the simulation rule.
pub fn simulation_class(x: [f64; 2]) -> usize {
    let r = x[0].hypot(x[1]);
    if r <= DISC_RADIUS {
        1
    } else if x[1] < 0.0 {
        0
    } else {
        2
    }
}

/// Draw `n` points uniformly on `[-1, 1]²` and label them.
///
/// Coordinates are drawn in order `x₁, x₂` per point from the `DATA` stream
/// of `seed`.
pub fn generate_simulation(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, purpose::DATA);
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        values.extend_from_slice(&x);
        labels.push(simulation_class(x));
    }
    Dataset::new(
        DMatrix::from_row_slice(n, 2, &values),
        labels,
        SIMULATION_CLASSES,
    )
}

/// Euclidean distance from `x` to the simulation's decision boundary: the
/// circle of radius 0.25 together with the segments `x₂ = 0, 0.25 ≤ |x₁| ≤ 1`.
pub fn distance_to_boundary(x: [f64; 2]) -> f64 {
    let to_circle = (x[0].hypot(x[1]) - DISC_RADIUS).abs();
    let along = x[0].abs().clamp(DISC_RADIUS, 1.0);
    let to_segment = (x[0].abs() - along).hypot(x[1]);
    to_circle.min(to_segment)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_rule_examples() {
        assert_eq!(simulation_class([0.0, 0.0]), 1);
        assert_eq!(simulation_class([0.5, -0.5]), 0);
        assert_eq!(simulation_class([0.5, 0.5]), 2);
        assert_eq!(simulation_class([0.25, 0.0]), 1);
        // x₂ = 0 outside the disc belongs to the upper class
        assert_eq!(simulation_class([0.5, 0.0]), 2);
    }

    #[test]
    fn boundary_distance_examples() {
        assert!((distance_to_boundary([0.0, 0.0]) - 0.25).abs() < 1e-15);
        assert!(distance_to_boundary([0.25, 0.0]).abs() < 1e-15);
    }

    /// Brute-force oracle: dense sampling of both boundary pieces.
    fn grid_distance(x: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        let steps = 200_000;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let theta = t * std::f64::consts::TAU;
            let c = [DISC_RADIUS * theta.cos(), DISC_RADIUS * theta.sin()];
            best = best.min((x[0] - c[0]).hypot(x[1] - c[1]));
            let s = DISC_RADIUS + t * (1.0 - DISC_RADIUS);
            best = best.min((x[0] - s).hypot(x[1]));
            best = best.min((x[0] + s).hypot(x[1]));
        }
        best
    }

    #[test]
    fn boundary_distance_matches_grid_oracle() {
        // frozen from the oracle: (0.6, 0.1) -> 0.1
        assert!((distance_to_boundary([0.6, 0.1]) - 0.1).abs() < 1e-12);
        for x in [[0.6, 0.1], [-0.9, 0.7], [0.1, -0.05], [0.0, 0.9], [1.0, -1.0], [0.3, 0.3]] {
            let oracle = grid_distance(x);
            assert!((distance_to_boundary(x) - oracle).abs() < 1e-5, "{x:?}");
        }
    }

    #[test]
    fn generation_is_deterministic_and_labelled() {
        let a = generate_simulation(500, 11).unwrap();
        let b = generate_simulation(500, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_simulation(500, 12).unwrap());
        for i in 0..a.len() {
            let x = a.sample(i);
            assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(a.labels()[i], simulation_class([x[0], x[1]]));
        }
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(generate_simulation(0, 1).is_err());
    }

    #[test]
    fn class_proportions_match_areas() {
        let disc = std::f64::consts::PI * DISC_RADIUS * DISC_RADIUS / 4.0;
        let half = (1.0 - disc) / 2.0;
        let expected = [half, disc, half];
        let mut avg = [0.0; 3];
        let mut within = 0;
        for seed in 0..50 {
            let d = generate_simulation(2000, seed).unwrap();
            for (k, c) in d.class_counts().iter().enumerate() {
                let p = *c as f64 / 2000.0;
                if (p - expected[k]).abs() < 0.02 {
                    within += 1;
                }
                avg[k] += p / 50.0;
            }
        }
        // ±0.02 is about 1.8 binomial SDs for the half-plane classes
        assert!(within >= 130, "{within} of 150 runs within ±0.02");
        for k in 0..3 {
            assert!((avg[k] - expected[k]).abs() < 0.005, "class {k}: {}", avg[k]);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = generate_simulation(64, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, Some(3)).unwrap();
        assert_eq!(d, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,label\n"));
    }
}
