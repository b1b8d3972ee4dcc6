//! End-to-end simulation run: simulate, train, screen, cluster, project and
//! export figure data into a fixed directory layout, with a manifest of
//! parameters, seeds and output digests that can be replayed.
//!
//! ```text
//! <out>/data/simulation.csv
//! <out>/model/model.json, train_report.json
//! <out>/screening/screening.csv, meta.json, discoveries.json
//! <out>/clusters/clusters.json
//! <out>/projection/bundle.json, index.json
//! <out>/figures/...
//! <out>/manifest.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{cluster_screen, ClusterConfig, ClusterReport};
use crate::concepts::{GradientKind, GradientTensor, StatScope};
use crate::error::{Error, Result};
use crate::export::{static_export, LoadedBundle};
use crate::figures::export_figures_data;
use crate::inference::Method;
use crate::model::{train, MlpModel, TrainConfig};
use crate::reduce::ProjectionBundle;
use crate::rng::{derive_seed, purpose};
use crate::screening::{screen, ScreeningConfig, ScreeningOutput, Statistic};
use crate::simdata::{generate_simulation, Dataset};

pub const DATA_DIR: &str = "data";
pub const MODEL_DIR: &str = "model";
pub const SCREENING_DIR: &str = "screening";
pub const CLUSTERS_DIR: &str = "clusters";
pub const PROJECTION_DIR: &str = "projection";
pub const FIGURES_DIR: &str = "figures";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".conceptscope.lock";

const LAYOUT: [&str; 6] = [DATA_DIR, MODEL_DIR, SCREENING_DIR, CLUSTERS_DIR, PROJECTION_DIR, FIGURES_DIR];

pub const SIMULATION_CLASS_NAMES: [&str; 3] = ["lower", "disc", "upper"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { n: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: t.hidden,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningSection {
    pub directions: usize,
    pub statistic: Statistic,
    pub scope: StatScope,
    pub method: Method,
    pub alpha: f64,
    pub null_draws: usize,
    pub fresh_nulls: bool,
    pub gradient_kind: GradientKind,
}

impl Default for ScreeningSection {
    fn default() -> Self {
        let s = ScreeningConfig::default();
        Self {
            directions: s.directions,
            statistic: s.statistic,
            scope: s.scope,
            method: s.method,
            alpha: s.alpha,
            null_draws: s.null_draws,
            fresh_nulls: s.fresh_nulls,
            gradient_kind: s.gradient_kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSection {
    pub k: usize,
    pub fit_sample: Option<usize>,
    pub gradient_kind: GradientKind,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        Self {
            k: 2,
            fit_sample: None,
            gradient_kind: GradientKind::Probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiguresSection {
    pub histogram_bins: usize,
    pub density_grid: usize,
    pub halfspace_grid: usize,
}

impl Default for FiguresSection {
    fn default() -> Self {
        Self {
            histogram_bins: 30,
            density_grid: 200,
            halfspace_grid: 41,
        }
    }
}

/// Full pipeline configuration. Every field has a default; a TOML file only
/// needs the values it changes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub simulation: SimulationSection,
    pub training: TrainingSection,
    pub screening: ScreeningSection,
    pub clusters: ClusterConfig,
    pub projection: ProjectionSection,
    pub figures: FiguresSection,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if self.simulation.n < 50 {
            return fail("simulation.n", "must be at least 50");
        }
        if self.training.hidden == 0 {
            return fail("training.hidden", "must be at least 1");
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return fail("training.learning_rate", "must be positive");
        }
        self.screening_config().validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("screening.{msg}")),
            other => other,
        })?;
        if self.clusters.k == 0 || self.clusters.k > self.simulation.n {
            return fail("clusters.k", "must lie in 1..=simulation.n");
        }
        if let crate::analysis::FeatureChoice::Index(j) = self.clusters.feature {
            if j >= self.training.hidden {
                return fail("clusters.feature", "index exceeds training.hidden");
            }
        }
        if self.projection.k == 0 || self.projection.k > self.training.hidden {
            return fail("projection.k", "must lie in 1..=training.hidden");
        }
        if self.projection.fit_sample.is_some_and(|s| s < 2) {
            return fail("projection.fit_sample", "must be at least 2");
        }
        if self.figures.histogram_bins == 0 || self.figures.density_grid < 2 || self.figures.halfspace_grid < 2 {
            return fail("figures", "bins must be positive and grids at least 2");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.training.hidden,
            epochs: self.training.epochs,
            learning_rate: self.training.learning_rate,
            seed: self.seed,
        }
    }

    pub fn screening_config(&self) -> ScreeningConfig {
        let s = &self.screening;
        ScreeningConfig {
            directions: s.directions,
            seed: self.seed,
            statistic: s.statistic,
            scope: s.scope,
            method: s.method,
            alpha: s.alpha,
            null_draws: s.null_draws,
            fresh_nulls: s.fresh_nulls,
            gradient_kind: s.gradient_kind,
            classes: None,
        }
    }

    pub fn seeds(&self) -> SeedTable {
        SeedTable {
            top: self.seed,
            data: self.seed,
            init: self.seed,
            candidates: derive_seed(self.seed, purpose::CANDIDATES),
            nulls: derive_seed(self.seed, purpose::NULLS),
            kmeans: derive_seed(self.seed, purpose::KMEANS),
            pca_sample: self.seed,
        }
    }
}

/// Every seed used by a run. `data`, `init` and `pca_sample` select
/// ChaCha streams of the top seed; the others are derived sub-seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTable {
    pub top: u64,
    pub data: u64,
    pub init: u64,
    pub candidates: u64,
    pub nulls: u64,
    pub kmeans: u64,
    pub pca_sample: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub outputs: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub seeds: SeedTable,
    pub stages: Vec<StageRecord>,
    /// Output path (relative to the run directory) to SHA-256 digest.
    pub outputs: BTreeMap<String, String>,
    pub summary: RunSummary,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub train_accuracy: f64,
    pub final_loss: f64,
    pub discoveries: Vec<usize>,
    pub cluster_feature: usize,
    pub first_variance_ratio: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn remove_outputs(dir: &Path) {
    for sub in LAYOUT {
        let _ = std::fs::remove_dir_all(dir.join(sub));
    }
    let _ = std::fs::remove_file(dir.join(MANIFEST_FILE));
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn simulation_class_names() -> Vec<String> {
    SIMULATION_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Write a screen's CSV, metadata and per-class discovery lists into `dir`.
pub fn write_screening(out: &ScreeningOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let csv = dir.join("screening.csv");
    out.write_csv(&csv)?;
    let meta = dir.join("meta.json");
    write_json(&meta, &out.meta())?;
    let discoveries: BTreeMap<String, Vec<usize>> =
        out.classes.iter().map(|&k| (k.to_string(), out.discovered(k))).collect();
    let disc = dir.join("discoveries.json");
    write_json(&disc, &discoveries)?;
    Ok(vec![csv, meta, disc])
}

/// Build the explorer bundle for a trained model.
pub fn build_bundle(
    model: &MlpModel,
    data: &Dataset,
    classes: Vec<String>,
    section: &ProjectionSection,
    seed: u64,
) -> Result<ProjectionBundle> {
    let feats = model.feature_matrix(data.samples())?;
    let grads = GradientTensor::from_model(model, &feats, section.gradient_kind)?;
    ProjectionBundle::build(
        feats.as_matrix(),
        &grads,
        data.labels().to_vec(),
        classes,
        section.gradient_kind,
        section.k,
        section.fit_sample,
        seed,
    )
}

struct Runner<'a> {
    out: &'a Path,
    stages: Vec<StageRecord>,
}

impl Runner<'_> {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&Path) -> Result<(T, Vec<PathBuf>)>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {name}: start");
        let (value, outputs) = f(self.out).map_err(|e| Error::Stage {
            stage: name,
            source: Box::new(e),
        })?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("stage {name}: done in {seconds:.2}s");
        self.stages.push(StageRecord {
            name: name.into(),
            outputs: outputs.iter().map(|p| relative(self.out, p)).collect(),
            seconds,
        });
        Ok(value)
    }
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Run every stage into `out`, replacing earlier outputs there. If a stage
/// fails, all outputs of the run are removed and the error names the stage.
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<RunManifest> {
    config.validate()?;
    let _lock = OutputLock::acquire(out)?;
    remove_outputs(out);
    let started = unix_now();
    let result = run_stages(config, out, started);
    if result.is_err() {
        remove_outputs(out);
    }
    result
}

fn run_stages(config: &PipelineConfig, out: &Path, started: u64) -> Result<RunManifest> {
    let mut runner = Runner {
        out,
        stages: Vec::new(),
    };
    let data = runner.stage("simulate", |out| {
        let data = generate_simulation(config.simulation.n, config.seed)?;
        let dir = out.join(DATA_DIR);
        ensure_dir(&dir)?;
        let path = dir.join("simulation.csv");
        data.write_csv(&path)?;
        Ok((data, vec![path]))
    })?;
    let (model, report) = runner.stage("train", |out| {
        let (model, report) = train(&data, &config.train_config())?;
        let dir = out.join(MODEL_DIR);
        ensure_dir(&dir)?;
        let (m, r) = (dir.join("model.json"), dir.join("train_report.json"));
        model.save(&m)?;
        write_json(&r, &report)?;
        log::info!("training accuracy {:.4}, loss {:.5}", report.accuracy, report.final_loss);
        Ok(((model, report), vec![m, r]))
    })?;
    let screening = runner.stage("screen", |out| {
        let feats = model.feature_matrix(data.samples())?;
        let result = screen(&model, &feats, data.labels(), &config.screening_config())?;
        let files = write_screening(&result, &out.join(SCREENING_DIR))?;
        Ok((result, files))
    })?;
    let clusters: ClusterReport = runner.stage("clusters", |out| {
        let report = cluster_screen(&model, &data, &config.clusters, config.seeds().kmeans)?;
        let dir = out.join(CLUSTERS_DIR);
        ensure_dir(&dir)?;
        let path = dir.join("clusters.json");
        report.save(&path)?;
        Ok((report, vec![path]))
    })?;
    let bundle = runner.stage("project", |out| {
        let bundle = build_bundle(&model, &data, simulation_class_names(), &config.projection, config.seed)?;
        let dir = out.join(PROJECTION_DIR);
        let loaded = LoadedBundle {
            bundle,
            thumbnails: BTreeMap::new(),
        };
        static_export(&loaded, &dir)?;
        Ok((loaded.bundle, vec![dir.join("bundle.json"), dir.join("index.json")]))
    })?;
    runner.stage("figures", |out| {
        let files = export_figures_data(out, &config.figures)?;
        Ok(((), files))
    })?;

    let mut outputs = BTreeMap::new();
    for record in &runner.stages {
        for rel in &record.outputs {
            outputs.insert(rel.clone(), sha256_file(&out.join(rel))?);
        }
    }
    let manifest = RunManifest {
        tool: "conceptscope".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seeds: config.seeds(),
        stages: runner.stages,
        outputs,
        summary: RunSummary {
            train_accuracy: report.accuracy,
            final_loss: report.final_loss,
            discoveries: screening.classes.iter().map(|&k| screening.discovered(k).len()).collect(),
            cluster_feature: clusters.feature,
            first_variance_ratio: bundle.pca().variance_ratios()[0],
        },
        started_unix: started,
        finished_unix: unix_now(),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigestMismatch {
    pub path: String,
    pub expected: String,
    pub found: Option<String>,
}

/// Rerun the configuration recorded in `manifest` into `out` and compare
/// every output digest against the recorded one.
pub fn replay(manifest: &RunManifest, out: &Path) -> Result<(RunManifest, Vec<DigestMismatch>)> {
    let fresh = run_pipeline(&manifest.config, out)?;
    let mismatches = manifest
        .outputs
        .iter()
        .filter_map(|(path, expected)| {
            let found = fresh.outputs.get(path);
            (found != Some(expected)).then(|| DigestMismatch {
                path: path.clone(),
                expected: expected.clone(),
                found: found.cloned(),
            })
        })
        .collect();
    Ok((fresh, mismatches))
}
