//! Multiple-testing engine: randomization p-values, the Benjamini-Hochberg
//! step-up procedure, and local false discovery rates against an empirical
//! null fitted by central matching.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Fewest statistics accepted by [`fit_empirical_null`].
pub const MIN_NULL_STATISTICS: usize = 50;
/// Floor applied to the marginal density before dividing by it.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Fraction of null statistics at least as large as `observed`.
///
/// No +1 correction: an observation above every null gets p = 0.
pub fn randomization_pvalue(observed: f64, null_stats: &[f64]) -> Result<f64> {
    if null_stats.is_empty() {
        return Err(Error::InvalidArgument("randomization test needs null statistics".into()));
    }
    let tail = null_stats.iter().filter(|&&s| s >= observed).count();
    Ok(tail as f64 / null_stats.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BhOutcome {
    /// Rejection flags in the original order.
    pub rejected: Vec<bool>,
    /// Largest rank `j` with `p_(j) <= j·α/J`; 0 when nothing is rejected.
    pub cutoff: usize,
}

/// Benjamini-Hochberg step-up procedure at level `alpha`.
pub fn bh_procedure(p_values: &[f64], alpha: f64) -> Result<BhOutcome> {
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|(rank, &i)| p_values[i] <= (rank + 1) as f64 * alpha / m as f64)
        .map(|(rank, _)| rank + 1)
        .next_back()
        .unwrap_or(0);
    let mut rejected = vec![false; m];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }
    Ok(BhOutcome { rejected, cutoff })
}

/// Gaussian kernel density estimate with Silverman's rule-of-thumb bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDensity {
    points: Vec<f64>,
    bandwidth: f64,
}

impl KernelDensity {
    pub fn silverman(points: &[f64]) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidArgument("density estimate needs two points".into()));
        }
        let mean = points.iter().sum::<f64>() / n as f64;
        let sd = (points.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let mut sorted = points.to_vec();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        if !(spread > 0.0) {
            return Err(Error::DegenerateSpread("density sample has zero spread".into()));
        }
        Ok(Self {
            points: sorted,
            bandwidth: 0.9 * spread * (n as f64).powf(-0.2),
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.points.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        // kernel mass beyond 40 bandwidths underflows anyway
        let lo = self.points.partition_point(|&x| x < t - 40.0 * h);
        let hi = self.points.partition_point(|&x| x <= t + 40.0 * h);
        self.points[lo..hi]
            .iter()
            .map(|x| {
                let u = (t - x) / h;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
            * norm
    }
}

/// Linear-interpolation quantile (type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gaussian null `N(delta, sigma0²)` with null proportion `pi0`, plus the
/// marginal density of all statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalNull {
    pub delta: f64,
    pub sigma0: f64,
    pub pi0: f64,
    pub density: KernelDensity,
}

impl EmpiricalNull {
    pub fn null_density(&self, t: f64) -> f64 {
        self.normal().pdf(t)
    }

    pub fn marginal_density(&self, t: f64) -> f64 {
        self.density.evaluate(t)
    }

    pub fn lfdr_at(&self, t: f64) -> f64 {
        let f = self.marginal_density(t).max(DENSITY_FLOOR);
        (self.pi0 * self.null_density(t) / f).min(1.0)
    }

    fn normal(&self) -> Normal {
        Normal::new(self.delta, self.sigma0).expect("sigma0 > 0 by construction")
    }

    /// Histogram and density curves for plotting the fit.
    pub fn export(&self, statistics: &[f64], bins: usize, grid: usize) -> NullFitExport {
        let lo = statistics.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = statistics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = bins.max(1);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for &s in statistics {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let histogram = counts
            .into_iter()
            .enumerate()
            .map(|(b, c)| [lo + b as f64 * width, c as f64])
            .collect();
        let pad = 3.0 * self.density.bandwidth();
        let (g0, g1) = (lo - pad, hi + pad);
        let grid = grid.max(2);
        let density_grid = (0..grid)
            .map(|i| {
                let t = g0 + (g1 - g0) * i as f64 / (grid - 1) as f64;
                [t, self.marginal_density(t), self.null_density(t), self.lfdr_at(t)]
            })
            .collect();
        NullFitExport {
            delta: self.delta,
            sigma0: self.sigma0,
            pi0: self.pi0,
            histogram,
            density_grid,
        }
    }
}

/// Plot data for a fitted null: `histogram` rows are `[bin_left, count]`,
/// `density_grid` rows are `[t, f, f0, lfdr]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullFitExport {
    pub delta: f64,
    pub sigma0: f64,
    pub pi0: f64,
    pub histogram: Vec<[f64; 2]>,
    pub density_grid: Vec<[f64; 4]>,
}

/// Central-matching fit of a Gaussian null to the interquartile bulk.
///
/// The mean and SD of the statistics inside `[Q1, Q3]` are taken as the null
/// location and (after undoing the variance shrinkage of a normal truncated
/// at its quartiles) the null scale. `pi0` compares the observed IQR count to
/// the mass the fitted null puts there.
pub fn fit_empirical_null(statistics: &[f64]) -> Result<EmpiricalNull> {
    let n = statistics.len();
    if n < MIN_NULL_STATISTICS {
        return Err(Error::TooFewStatistics {
            needed: MIN_NULL_STATISTICS,
            found: n,
        });
    }
    if statistics.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("statistics must be finite".into()));
    }
    let mut sorted = statistics.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    if !(q3 > q1) {
        return Err(Error::DegenerateSpread(format!(
            "interquartile range is zero (Q1 = Q3 = {q1})"
        )));
    }
    let central: Vec<f64> = sorted.iter().copied().filter(|s| (q1..=q3).contains(s)).collect();
    let m = central.len() as f64;
    let delta = central.iter().sum::<f64>() / m;
    let var = central.iter().map(|s| (s - delta).powi(2)).sum::<f64>() / m;

    let std_normal = Normal::standard();
    let a = std_normal.inverse_cdf(0.75);
    let inner_mass = 2.0 * std_normal.cdf(a) - 1.0;
    let shrink = 1.0 - 2.0 * a * std_normal.pdf(a) / inner_mass;
    let sigma0 = (var / shrink).sqrt();
    if !(sigma0 > 0.0) {
        return Err(Error::DegenerateSpread("central statistics have zero spread".into()));
    }
    let null = Normal::new(delta, sigma0).expect("positive scale");
    let null_mass = null.cdf(q3) - null.cdf(q1);
    let pi0 = (m / (n as f64 * null_mass)).min(1.0);
    Ok(EmpiricalNull {
        delta,
        sigma0,
        pi0,
        density: KernelDensity::silverman(statistics)?,
    })
}

/// `min(1, π₀ f₀(t) / f(t))` for every statistic.
pub fn lfdr(statistics: &[f64], null: &EmpiricalNull) -> Vec<f64> {
    statistics.iter().map(|&t| null.lfdr_at(t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BhRandomization,
    Lfdr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BhRandomization => "bh-randomization",
            Method::Lfdr => "lfdr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub direction_id: usize,
    pub class: usize,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub lfdr: Option<f64>,
    pub discovered: bool,
    pub method: Method,
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub results: Vec<ScreeningResult>,
    pub null: EmpiricalNull,
}

impl Discovery {
    pub fn discovered_ids(&self) -> Vec<usize> {
        self.results
            .iter()
            .filter(|r| r.discovered)
            .map(|r| r.direction_id)
            .collect()
    }
}

/// Fit the empirical null to `statistics` and flag every statistic whose
/// local FDR is at most `alpha`. Only the right tail is of interest here;
/// the Gaussian null itself is two-sided.
pub fn discover(statistics: &[f64], class: usize, alpha: f64) -> Result<Discovery> {
    let null = fit_empirical_null(statistics)?;
    let results = statistics
        .iter()
        .enumerate()
        .map(|(id, &t)| {
            let l = null.lfdr_at(t);
            ScreeningResult {
                direction_id: id,
                class,
                statistic: t,
                p_value: None,
                lfdr: Some(l),
                discovered: l <= alpha && t > null.delta,
                method: Method::Lfdr,
            }
        })
        .collect();
    Ok(Discovery { results, null })
}
