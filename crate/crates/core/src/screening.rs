//! Screening of random candidate directions: one statistic per
//! (direction, class), then lFDR or BH-randomization discoveries.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{
    direction_to_input_space, population_sd, sample_sphere, tcav_fraction, ConceptDirection, GradientKind,
    GradientTensor, StatScope,
};
use crate::error::{Error, Result};
use crate::inference::{bh_procedure, discover, randomization_pvalue, EmpiricalNull, Method, ScreeningResult};
use crate::model::{FeatureMatrix, MlpModel};
use crate::rng::{derive_seed, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// Population SD of the directional derivatives.
    Sd,
    /// TCAV score of the class.
    Tcav,
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd" => Ok(Statistic::Sd),
            "tcav" => Ok(Statistic::Tcav),
            other => Err(Error::InvalidArgument(format!("unknown statistic `{other}` (expected sd or tcav)"))),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lfdr" => Ok(Method::Lfdr),
            "bh" | "bh-randomization" => Ok(Method::BhRandomization),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}` (expected lfdr or bh)"))),
        }
    }
}

impl std::str::FromStr for StatScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(StatScope::All),
            "class" => Ok(StatScope::Class),
            other => Err(Error::InvalidArgument(format!("unknown scope `{other}` (expected all or class)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningConfig {
    pub directions: usize,
    pub seed: u64,
    pub statistic: Statistic,
    pub scope: StatScope,
    pub method: Method,
    pub alpha: f64,
    /// Null directions per candidate for the BH-randomization path.
    pub null_draws: usize,
    /// Draw an independent null batch for every candidate. Sharing one batch
    /// is faster but the resulting p-values are not valid for BH.
    pub fresh_nulls: bool,
    pub gradient_kind: GradientKind,
    /// Classes to screen; all classes when absent.
    pub classes: Option<Vec<usize>>,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            directions: 500,
            seed: 0,
            statistic: Statistic::Sd,
            scope: StatScope::All,
            method: Method::Lfdr,
            alpha: 0.1,
            null_draws: 100,
            fresh_nulls: true,
            gradient_kind: GradientKind::Probability,
            classes: None,
        }
    }
}

impl ScreeningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.directions == 0 {
            return Err(Error::Config("directions must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.method == Method::BhRandomization && self.null_draws == 0 {
            return Err(Error::Config("null_draws must be at least 1 for bh".into()));
        }
        Ok(())
    }
}

/// Statistic of every requested class along `v`, in class order.
pub fn direction_statistics(
    grads: &GradientTensor,
    labels: &[usize],
    v: &[f64],
    classes: &[usize],
    statistic: Statistic,
    scope: StatScope,
) -> Result<Vec<f64>> {
    let scores = grads.directional(v)?;
    classes
        .iter()
        .map(|&k| {
            let column = scores.column(k);
            match (statistic, scope) {
                (Statistic::Sd, StatScope::All) => population_sd(column.iter().copied()),
                (Statistic::Sd, StatScope::Class) => population_sd(
                    column.iter().zip(labels).filter(|(_, &l)| l == k).map(|(s, _)| *s),
                ),
                (Statistic::Tcav, _) => tcav_fraction(column.as_slice(), labels, k),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScreeningOutput {
    pub config: ScreeningConfig,
    pub classes: Vec<usize>,
    pub directions: Vec<ConceptDirection>,
    /// Unit input-space rendering of each direction; `None` when degenerate.
    pub input_directions: Vec<Option<Vec<f64>>>,
    /// Direction-major: `results[j * classes.len() + c]`.
    pub results: Vec<ScreeningResult>,
    /// Fitted nulls per screened class (lFDR path only).
    pub nulls: Vec<(usize, EmpiricalNull)>,
}

impl ScreeningOutput {
    pub fn class_results(&self, class: usize) -> impl Iterator<Item = &ScreeningResult> {
        self.results.iter().filter(move |r| r.class == class)
    }

    pub fn statistics(&self, class: usize) -> Vec<f64> {
        self.class_results(class).map(|r| r.statistic).collect()
    }

    pub fn discovered(&self, class: usize) -> Vec<usize> {
        self.class_results(class)
            .filter(|r| r.discovered)
            .map(|r| r.direction_id)
            .collect()
    }

    pub fn meta(&self) -> ScreeningMeta {
        ScreeningMeta {
            config: self.config.clone(),
            inferential: self.config.method == Method::Lfdr || self.config.fresh_nulls,
            classes: self.classes.clone(),
            discoveries: self.classes.iter().map(|&k| self.discovered(k).len()).collect(),
            nulls: self
                .nulls
                .iter()
                .map(|(k, n)| NullSummary {
                    class: *k,
                    delta: n.delta,
                    sigma0: n.sigma0,
                    pi0: n.pi0,
                    bandwidth: n.density.bandwidth(),
                })
                .collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(
            out,
            "direction_id,class,statistic,p_value,lfdr,discovery_flag,input_space_dx,input_space_dy"
        )
        .map_err(io)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        for r in &self.results {
            let dir = self.input_directions[r.direction_id].as_deref();
            writeln!(
                out,
                "{},{},{:.16e},{},{},{},{},{}",
                r.direction_id,
                r.class,
                r.statistic,
                opt(r.p_value),
                opt(r.lfdr),
                u8::from(r.discovered),
                opt(dir.and_then(|d| d.first().copied())),
                opt(dir.and_then(|d| d.get(1).copied())),
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub class: usize,
    pub delta: f64,
    pub sigma0: f64,
    pub pi0: f64,
    pub bandwidth: f64,
}

/// Parameters and per-class outcome of a screen. `inferential` is false for
/// the shared-null BH mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningMeta {
    pub config: ScreeningConfig,
    pub inferential: bool,
    pub classes: Vec<usize>,
    pub discoveries: Vec<usize>,
    pub nulls: Vec<NullSummary>,
}

/// One row of a screening CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScreeningRow {
    pub direction_id: usize,
    pub class: usize,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub lfdr: Option<f64>,
    pub discovery_flag: u8,
    pub input_space_dx: Option<f64>,
    pub input_space_dy: Option<f64>,
}

pub fn read_screening_csv(path: &Path) -> Result<Vec<ScreeningRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e)))
        .collect()
}

/// Screen `config.directions` uniform candidate directions.
///
/// Candidates come from the `CANDIDATES` sub-seed. In the BH path the null
/// batch for candidate `j` uses sub-seed `j` of the `NULLS` sub-seed (or
/// the `NULLS` sub-seed itself when nulls are shared), so results do not
/// depend on thread scheduling.
pub fn screen(
    model: &MlpModel,
    feats: &FeatureMatrix,
    labels: &[usize],
    config: &ScreeningConfig,
) -> Result<ScreeningOutput> {
    config.validate()?;
    if labels.len() != feats.nrows() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: feats.nrows(),
            found: labels.len(),
        });
    }
    let n_classes = model.n_classes();
    let classes = match &config.classes {
        Some(list) => {
            if let Some(&bad) = list.iter().find(|&&k| k >= n_classes) {
                return Err(Error::IndexOutOfRange {
                    what: "classes",
                    index: bad,
                    len: n_classes,
                });
            }
            list.clone()
        }
        None => (0..n_classes).collect(),
    };
    let grads = GradientTensor::from_model(model, feats, config.gradient_kind)?;
    let dim = model.hidden_dim();
    let directions = sample_sphere(dim, config.directions, derive_seed(config.seed, purpose::CANDIDATES))?;
    let stat = |v: &ConceptDirection| {
        direction_statistics(&grads, labels, v.as_slice(), &classes, config.statistic, config.scope)
    };
    let observed: Vec<Vec<f64>> = directions.par_iter().map(stat).collect::<Result<_>>()?;
    let input_directions = directions
        .iter()
        .map(|v| direction_to_input_space(model, v).ok().map(|d| d.iter().copied().collect()))
        .collect();

    let nc = classes.len();
    let mut results: Vec<ScreeningResult> = Vec::with_capacity(config.directions * nc);
    for (j, stats) in observed.iter().enumerate() {
        for (c, &t) in stats.iter().enumerate() {
            results.push(ScreeningResult {
                direction_id: j,
                class: classes[c],
                statistic: t,
                p_value: None,
                lfdr: None,
                discovered: false,
                method: config.method,
            });
        }
    }

    let mut nulls = Vec::new();
    match config.method {
        Method::Lfdr => {
            for (c, &k) in classes.iter().enumerate() {
                let column: Vec<f64> = observed.iter().map(|s| s[c]).collect();
                let found = discover(&column, k, config.alpha).map_err(|e| match e {
                    Error::DegenerateSpread(msg) => Error::DegenerateSpread(format!("class {k}: {msg}")),
                    other => other,
                })?;
                for (j, r) in found.results.into_iter().enumerate() {
                    let slot = &mut results[j * nc + c];
                    slot.lfdr = r.lfdr;
                    slot.discovered = r.discovered;
                }
                nulls.push((k, found.null));
            }
        }
        Method::BhRandomization => {
            let null_seed = derive_seed(config.seed, purpose::NULLS);
            let null_stats = |seed: u64| -> Result<Vec<Vec<f64>>> {
                sample_sphere(dim, config.null_draws, seed)?.iter().map(stat).collect()
            };
            let shared = if config.fresh_nulls {
                None
            } else {
                Some(null_stats(null_seed)?)
            };
            let p_values: Vec<Vec<f64>> = observed
                .par_iter()
                .enumerate()
                .map(|(j, obs)| {
                    let fresh;
                    let batch = match &shared {
                        Some(b) => b,
                        None => {
                            fresh = null_stats(derive_seed(null_seed, j as u64))?;
                            &fresh
                        }
                    };
                    obs.iter()
                        .enumerate()
                        .map(|(c, &t)| {
                            let column: Vec<f64> = batch.iter().map(|s| s[c]).collect();
                            randomization_pvalue(t, &column)
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            for c in 0..nc {
                let column: Vec<f64> = p_values.iter().map(|p| p[c]).collect();
                let alpha = if config.alpha > 0.0 { config.alpha } else { f64::MIN_POSITIVE };
                let outcome = bh_procedure(&column, alpha)?;
                for (j, (&p, &rejected)) in column.iter().zip(&outcome.rejected).enumerate() {
                    let slot = &mut results[j * nc + c];
                    slot.p_value = Some(p);
                    slot.discovered = rejected && config.alpha > 0.0;
                }
            }
        }
    }
    Ok(ScreeningOutput {
        config: config.clone(),
        classes,
        directions,
        input_directions,
        results,
        nulls,
    })
}
