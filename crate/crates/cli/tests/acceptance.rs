//! Acceptance suite. Each test prints one `[acceptance N] PASS|FAIL` line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use conceptscope::concepts::{GradientKind, GradientTensor};
use conceptscope::export::load_static;
use conceptscope::inference::{bh_procedure, discover};
use conceptscope::reduce::{pca_fit, pca_inverse, pca_transform};
use conceptscope::rng::stream_rng;
use conceptscope::{projected_tcav, Dataset, MlpModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: u64 = 10;
const REQUIRED_SEEDS: usize = 8;

struct Runs {
    _dir: tempfile::TempDir,
    dirs: Vec<PathBuf>,
    seconds: Vec<f64>,
}

fn conceptscope(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_conceptscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Default pipeline for seeds 0..10, run once and shared by the tests.
fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut dirs = Vec::new();
        let mut seconds = Vec::new();
        for seed in 0..SEEDS {
            let out = dir.path().join(format!("seed{seed}"));
            let start = Instant::now();
            let result = conceptscope(&["pipeline", "--seed", &seed.to_string(), "--out", out.to_str().unwrap()]);
            seconds.push(start.elapsed().as_secs_f64());
            assert!(
                result.status.success(),
                "pipeline seed {seed}: {}",
                String::from_utf8_lossy(&result.stderr)
            );
            dirs.push(out);
        }
        Runs {
            _dir: dir,
            dirs,
            seconds,
        }
    })
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Written straight to stderr so the line shows even when output is captured.
fn report(n: usize, pass: bool, details: &str) {
    let line = format!("[acceptance {n}] {}: {details}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "acceptance criterion {n} failed: {details}");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn acceptance_01_training_accuracy() {
    let runs = runs();
    let accuracies: Vec<f64> = runs
        .dirs
        .iter()
        .map(|d| json(&d.join("model/train_report.json"))["accuracy"].as_f64().unwrap())
        .collect();
    let hits = accuracies.iter().filter(|&&a| a >= 0.99).count();
    let slowest = runs.seconds.iter().copied().fold(0.0, f64::max);
    let details = format!(
        "{hits}/{SEEDS} seeds reach accuracy >= 0.99 {accuracies:?}; slowest pipeline run {slowest:.1} s"
    );
    report(1, hits >= REQUIRED_SEEDS && slowest < 60.0, &details);
}

#[test]
fn acceptance_02_direction_geometry() {
    let mut margins = Vec::new();
    for dir in &runs().dirs {
        let text = std::fs::read_to_string(dir.join("screening/screening.csv")).unwrap();
        let mut dy: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f[5] == "1" {
                dy.entry(f[1].parse().unwrap()).or_default().push(f[7].parse::<f64>().unwrap().abs());
            }
        }
        let outer: Vec<f64> = [0, 2].iter().flat_map(|k| dy.get(k).cloned().unwrap_or_default()).collect();
        let inner = dy.get(&1).cloned().unwrap_or_default();
        // a margin needs discoveries on both sides
        let margin = if outer.is_empty() || inner.is_empty() {
            f64::NAN
        } else {
            mean(&outer) - mean(&inner)
        };
        margins.push(margin);
    }
    let hits = margins.iter().filter(|&&m| m >= 0.15).count();
    let shown: Vec<String> = margins.iter().map(|m| format!("{m:.3}")).collect();
    report(
        2,
        hits >= REQUIRED_SEEDS,
        &format!("{hits}/{SEEDS} seeds with vertical margin >= 0.15 [{}]", shown.join(", ")),
    );
}

#[test]
fn acceptance_03_cluster_variation_near_boundary() {
    let mut hits = 0;
    let mut shown = Vec::new();
    for dir in &runs().dirs {
        let clusters = json(&dir.join("clusters/clusters.json"));
        let clusters = clusters["clusters"].as_array().unwrap();
        let closeness: Vec<f64> = clusters
            .iter()
            .map(|c| -c["distance_to_boundary"].as_f64().unwrap())
            .collect();
        let rho: Vec<f64> = (0..3)
            .map(|k| {
                let sd: Vec<f64> = clusters.iter().map(|c| c["sd"][k].as_f64().unwrap()).collect();
                spearman(&sd, &closeness)
            })
            .collect();
        if rho.iter().filter(|&&r| r >= 0.4).count() >= 2 {
            hits += 1;
        }
        shown.push(format!("{:.2}/{:.2}/{:.2}", rho[0], rho[1], rho[2]));
    }
    report(
        3,
        hits >= REQUIRED_SEEDS,
        &format!("{hits}/{SEEDS} seeds with Spearman >= 0.4 in most classes [{}]", shown.join(", ")),
    );
}

#[test]
fn acceptance_04_sign_structure() {
    let mut hits = 0;
    let mut shown = Vec::new();
    for dir in &runs().dirs {
        let report = json(&dir.join("clusters/clusters.json"));
        let means: Vec<f64> = report["class_means"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        if means[0] > 0.0 && means[1] > 0.0 && means[2] < 0.0 {
            hits += 1;
        }
        let signs: String = means.iter().map(|&m| if m > 0.0 { '+' } else { '-' }).collect();
        shown.push(format!("{signs}(z{})", report["feature"]));
    }
    report(
        4,
        hits >= REQUIRED_SEEDS,
        &format!("{hits}/{SEEDS} seeds with signs (+, +, -) [{}]", shown.join(" ")),
    );
}

#[test]
fn acceptance_05_bh_fdr_control() {
    let mut details = Vec::new();
    let mut pass = true;
    for (a, alpha) in [0.05, 0.1].into_iter().enumerate() {
        let mut fdp_sum = 0.0;
        for trial in 0..1000u64 {
            let mut rng = stream_rng(500 + a as u64, trial);
            let p: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
            let outcome = bh_procedure(&p, alpha).unwrap();
            // every hypothesis is null, so any rejection is false
            if outcome.rejected.iter().any(|&r| r) {
                fdp_sum += 1.0;
            }
        }
        let fdr = fdp_sum / 1000.0;
        pass &= fdr <= alpha + 0.02;
        details.push(format!("alpha {alpha}: empirical FDR {fdr:.3}"));
    }
    report(5, pass, &details.join("; "));
}

#[test]
fn acceptance_06_lfdr_calibration() {
    let (mut true_found, mut false_found) = (0usize, 0usize);
    for seed in 0..100u64 {
        let mut rng = stream_rng(600, seed);
        let stats: Vec<f64> = (0..1000)
            .map(|i| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                if i < 980 {
                    noise
                } else {
                    noise + 6.0
                }
            })
            .collect();
        let found = discover(&stats, 0, 0.1).unwrap();
        for id in found.discovered_ids() {
            if id >= 980 {
                true_found += 1;
            } else {
                false_found += 1;
            }
        }
    }
    let (t, f) = (true_found as f64 / 100.0, false_found as f64 / 100.0);
    report(
        6,
        t >= 15.0 && f <= 5.0,
        &format!("average {t:.2} of 20 spikes discovered, {f:.2} false discoveries"),
    );
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

#[test]
fn acceptance_07_gradient_correctness() {
    let step = 1e-5;
    let mut worst = 0.0f64;
    for pair in 0..100u64 {
        let mut rng = stream_rng(700, pair);
        let (d, h, k) = (rng.random_range(1..6), rng.random_range(2..25), rng.random_range(2..7));
        let model = MlpModel::new(
            normal_matrix(h, d, &mut rng),
            DVector::from_iterator(h, normal_matrix(h, 1, &mut rng).iter().copied()),
            normal_matrix(k, h, &mut rng),
            DVector::from_iterator(k, normal_matrix(k, 1, &mut rng).iter().copied()),
        )
        .unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = model.features(&x).unwrap();
        let jac = model.prob_jacobian(&z).unwrap();
        // softmax of W2 z + b2, recomputed here
        let probs = |z: &DVector<f64>| {
            let logits: Vec<f64> = (0..k)
                .map(|c| model.b2()[c] + (0..h).map(|j| model.w2()[(c, j)] * z[j]).sum::<f64>())
                .collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        for j in 0..h {
            let mut up = z.clone();
            up[j] += step;
            let mut down = z.clone();
            down[j] -= step;
            let (pu, pd) = (probs(&up), probs(&down));
            for c in 0..k {
                let fd = (pu[c] - pd[c]) / (2.0 * step);
                worst = worst.max((fd - jac[(c, j)]).abs());
            }
        }
    }
    report(7, worst <= 1e-5, &format!("max |analytic - finite difference| = {worst:.2e} over 100 pairs"));
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (arp, arq) = (a[(r, p)], a[(r, q)]);
                    a[(r, p)] = c * arp - s * arq;
                    a[(r, q)] = s * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (a[(p, r)], a[(q, r)]);
                    a[(p, r)] = c * apr - s * aqr;
                    a[(q, r)] = s * apr + c * aqr;
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values
}

#[test]
fn acceptance_08_pca() {
    let mut rng = stream_rng(800, 0);
    let (m, n) = (300, 12);
    let scales: Vec<f64> = (0..n).map(|j| 3.0 / (1.0 + j as f64)).collect();
    let mixing = normal_matrix(n, n, &mut rng);
    let x = DMatrix::from_fn(m, n, |_, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        scales[j] * e
    }) * mixing
        + DMatrix::from_fn(m, n, |_, j| j as f64);

    let col_means: Vec<f64> = (0..n).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(m, n, |i, j| x[(i, j)] - col_means[j]);
    let cov = centered.tr_mul(&centered) / (m as f64 - 1.0);
    let eig = jacobi_eigenvalues(cov);
    let total: f64 = eig.iter().sum();

    let full = pca_fit(&x, n).unwrap();
    let c = full.components();
    let ortho = (c.tr_mul(c) - DMatrix::identity(n, n)).amax();
    let round_trip = (pca_inverse(&full, &pca_transform(&full, &x).unwrap()).unwrap() - &x).amax();
    let ratio_err = full
        .variance_ratios()
        .iter()
        .zip(&eig)
        .map(|(r, e)| (r - e / total).abs())
        .fold(0.0, f64::max);

    let errors: Vec<f64> = (1..=n)
        .map(|k| {
            let p = pca_fit(&x, k).unwrap();
            (pca_inverse(&p, &pca_transform(&p, &x).unwrap()).unwrap() - &x).norm_squared()
        })
        .collect();
    let monotone = errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);

    let pass = ortho <= 1e-8 && round_trip <= 1e-8 && ratio_err <= 1e-8 && monotone;
    report(
        8,
        pass,
        &format!(
            "orthonormality {ortho:.1e}, round trip {round_trip:.1e}, ratio error {ratio_err:.1e}, reconstruction nonincreasing: {monotone}"
        ),
    );
}

#[test]
fn acceptance_09_projected_scoring_fidelity() {
    let dir = &runs().dirs[0];
    let model = MlpModel::load(&dir.join("model/model.json")).unwrap();
    let data = Dataset::read_csv(&dir.join("data/simulation.csv"), Some(3)).unwrap();
    let loaded = load_static(&dir.join("projection")).unwrap();
    let bundle = &loaded.bundle;
    let feats = model.feature_matrix(data.samples()).unwrap();
    let grads = GradientTensor::from_model(&model, &feats, GradientKind::Probability).unwrap();
    let c = bundle.pca().components();

    let mut worst = 0.0f64;
    let mut rng = stream_rng(900, 0);
    for _ in 0..50 {
        let u: Vec<f64> = (0..bundle.k()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v: Vec<f64> = (0..c.nrows()).map(|r| (0..c.ncols()).map(|j| c[(r, j)] * u[j]).sum()).collect();
        for class in 0..3 {
            let (projected, _) = projected_tcav(bundle, &u, class).unwrap();
            let members: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == class).collect();
            let positive = members
                .iter()
                .filter(|&&i| grads.gradient(i, class).iter().zip(&v).map(|(g, w)| g * w).sum::<f64>() > 0.0)
                .count();
            let full = positive as f64 / members.len() as f64;
            worst = worst.max((projected - full).abs());
        }
    }
    report(9, worst <= 0.1, &format!("max |projected - full TCAV| = {worst:.2e} over 50 in-span directions"));
}

#[test]
fn acceptance_10_replay_determinism() {
    let dir = &runs().dirs[0];
    let replay_dir = dir.parent().unwrap().join("replay0");
    let out = conceptscope(&[
        "pipeline",
        "--replay",
        dir.join("manifest.json").to_str().unwrap(),
        "--out",
        replay_dir.to_str().unwrap(),
    ]);
    let original = json(&dir.join("manifest.json"));
    let fresh = json(&replay_dir.join("manifest.json"));
    let outputs = original["outputs"].as_object().unwrap();
    let same = original["outputs"] == fresh["outputs"];
    report(
        10,
        out.status.success() && same && !outputs.is_empty(),
        &format!(
            "replay exit {:?}, {} digests, identical: {same}",
            out.status.code(),
            outputs.len()
        ),
    );
}
