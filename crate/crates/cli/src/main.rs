//! `conceptscope` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.
//! Log verbosity is read from `CONCEPTSCOPE_LOG` (e.g. `info`, `debug`).

mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conceptscope::analysis::{cluster_screen, ClusterConfig, FeatureChoice};
use conceptscope::concepts::{GradientKind, StatScope};
use conceptscope::export::{ingest, load_static, static_export, IngestBundle, IngestOptions, LoadedBundle};
use conceptscope::figures::export_figures_data;
use conceptscope::inference::Method;
use conceptscope::pipeline::{
    build_bundle, replay, run_pipeline, simulation_class_names, write_screening, PipelineConfig, ProjectionSection,
    RunManifest,
};
use conceptscope::screening::{screen, ScreeningConfig, Statistic};
use conceptscope::{generate_simulation, train, Dataset, Error, MlpModel, TrainConfig};

#[derive(Parser)]
#[command(name = "conceptscope", version, about = "Screen and explore concept directions in learned feature spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the three-class disc/half-plane dataset as CSV.
    Simulate {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the one-hidden-layer classifier on a dataset CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        hidden: usize,
        #[arg(long, default_value_t = 3000)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Screen random feature-space directions and write discoveries.
    Screen(ScreenArgs),
    /// Cluster the inputs and summarize a feature direction per cluster.
    Clusters {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 25)]
        k: usize,
        /// Hidden feature index, or `auto` for the most vertical live one.
        #[arg(long, default_value = "auto")]
        feature: FeatureChoice,
        /// Keep the feature's sign instead of orienting it downward.
        #[arg(long)]
        no_orient: bool,
        #[arg(long, default_value = "probability")]
        gradient: GradientKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit PCA on the learned features and export the explorer bundle.
    Project {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        projection: ProjectionArgs,
        /// Output directory for bundle.json and index.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest external features and gradients into a static bundle, or write
    /// figure data for a finished pipeline run.
    Export {
        /// Ingest description (JSON).
        #[arg(long, conflicts_with = "figures")]
        ingest: Option<PathBuf>,
        /// Pipeline run directory to export figure data for.
        #[arg(long)]
        figures: Option<PathBuf>,
        #[command(flatten)]
        projection: ProjectionArgs,
        #[arg(long, required_unless_present = "figures")]
        out: Option<PathBuf>,
    },
    /// Serve a bundle to the explorer over HTTP.
    Serve {
        /// Static export directory or bundle JSON file.
        #[arg(long, conflicts_with = "ingest")]
        bundle: Option<PathBuf>,
        /// Ingest description (JSON) to project and serve directly.
        #[arg(long)]
        ingest: Option<PathBuf>,
        #[command(flatten)]
        projection: ProjectionArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Port to listen on; 0 picks a free one.
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Run the full simulation pipeline, or replay a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct ScreenArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 500)]
    directions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sd")]
    stat: Statistic,
    /// Class index, or `all`.
    #[arg(long, default_value = "all")]
    class: String,
    #[arg(long, default_value = "all")]
    scope: StatScope,
    #[arg(long, default_value = "lfdr")]
    method: Method,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    null_draws: usize,
    /// Reuse one null batch for all candidates (faster, not valid for BH).
    #[arg(long)]
    shared_nulls: bool,
    #[arg(long, default_value = "probability")]
    gradient: GradientKind,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ProjectionArgs {
    /// Number of principal components kept.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Fit PCA on this many randomly chosen rows.
    #[arg(long)]
    fit_sample: Option<usize>,
    #[arg(long, default_value = "probability")]
    gradient: GradientKind,
    #[arg(long, default_value_t = 0)]
    pca_seed: u64,
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay the configuration of a manifest and compare digests.
    #[arg(long, conflicts_with = "config")]
    replay: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    directions: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    stat: Option<Statistic>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    feature: Option<FeatureChoice>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    fit_sample: Option<usize>,
    /// Gradient kind used for both screening and the bundle.
    #[arg(long)]
    gradient: Option<GradientKind>,
}

/// Error raised by the CLI with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONCEPTSCOPE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_inputs(model: &Path, data: &Path) -> Result<(MlpModel, Dataset), Failure> {
    let model = MlpModel::load(model)?;
    let data = Dataset::read_csv(data, Some(model.n_classes()))?;
    if data.dim() != model.input_dim() {
        return Err(config_error(format!(
            "data has {} columns but the model expects {}",
            data.dim(),
            model.input_dim()
        )));
    }
    Ok((model, data))
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }))?;
    }
    Ok(())
}

fn class_names(n: usize) -> Vec<String> {
    if n == 3 {
        simulation_class_names()
    } else {
        (0..n).map(|k| format!("class{k}")).collect()
    }
}

impl ProjectionArgs {
    fn section(&self) -> ProjectionSection {
        ProjectionSection {
            k: self.k,
            fit_sample: self.fit_sample,
            gradient_kind: self.gradient,
        }
    }

    fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            k: self.k,
            fit_sample: self.fit_sample,
            seed: self.pca_seed,
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { n, seed, out } => {
            let data = generate_simulation(n, seed)?;
            ensure_parent(&out)?;
            data.write_csv(&out)?;
            println!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Train {
            data,
            hidden,
            epochs,
            lr,
            seed,
            out,
        } => {
            let data = Dataset::read_csv(&data, None)?;
            let cfg = TrainConfig {
                hidden,
                epochs,
                learning_rate: lr,
                seed,
            };
            let (model, report) = train(&data, &cfg)?;
            ensure_parent(&out)?;
            model.save(&out)?;
            println!(
                "accuracy {:.4} loss {:.6} after {} epochs; model written to {}",
                report.accuracy,
                report.final_loss,
                report.epochs,
                out.display()
            );
        }
        Command::Screen(args) => run_screen(args)?,
        Command::Clusters {
            model,
            data,
            k,
            feature,
            no_orient,
            gradient,
            seed,
            out,
        } => {
            let (model, data) = load_inputs(&model, &data)?;
            let cfg = ClusterConfig {
                k,
                feature,
                orient_down: !no_orient,
                gradient_kind: gradient,
                ..ClusterConfig::default()
            };
            let report = cluster_screen(&model, &data, &cfg, seed)?;
            ensure_parent(&out)?;
            report.save(&out)?;
            println!(
                "{} clusters for feature {} (sign {:+}) written to {}",
                report.k,
                report.feature,
                report.sign,
                out.display()
            );
        }
        Command::Project {
            model,
            data,
            projection,
            out,
        } => {
            let (model, data) = load_inputs(&model, &data)?;
            let bundle = build_bundle(
                &model,
                &data,
                class_names(model.n_classes()),
                &projection.section(),
                projection.pca_seed,
            )?;
            let index = static_export(
                &LoadedBundle {
                    bundle,
                    thumbnails: Default::default(),
                },
                &out,
            )?;
            println!("bundle with {} points written to {}", index.points, out.display());
        }
        Command::Export {
            ingest: spec,
            figures,
            projection,
            out,
        } => match (spec, figures) {
            (Some(spec), None) => {
                let out = out.ok_or_else(|| config_error("--out is required with --ingest"))?;
                let loaded = ingest(&IngestBundle::load(&spec)?, &projection.ingest_options())?;
                let index = static_export(&loaded, &out)?;
                println!(
                    "bundle with {} points, first variance ratio {:.4}, written to {}",
                    index.points,
                    loaded.bundle.pca().variance_ratios()[0],
                    out.display()
                );
            }
            (None, Some(run_dir)) => {
                let manifest = RunManifest::load(&run_dir.join(conceptscope::pipeline::MANIFEST_FILE))?;
                let files = export_figures_data(&run_dir, &manifest.config.figures)?;
                println!("wrote {} figure files", files.len());
            }
            _ => return Err(config_error("export needs exactly one of --ingest or --figures")),
        },
        Command::Serve {
            bundle,
            ingest: spec,
            projection,
            host,
            port,
        } => {
            let loaded = match (bundle, spec) {
                (Some(path), None) => load_static(&path)?,
                (None, Some(spec)) => ingest(&IngestBundle::load(&spec)?, &projection.ingest_options())?,
                _ => return Err(config_error("serve needs exactly one of --bundle or --ingest")),
            };
            serve::run(loaded, &host, port).map_err(|e| Failure {
                code: 3,
                message: e.to_string(),
            })?;
        }
        Command::Pipeline(args) => run_pipeline_command(args)?,
    }
    Ok(())
}

fn run_screen(args: ScreenArgs) -> Result<(), Failure> {
    let (model, data) = load_inputs(&args.model, &args.data)?;
    let classes = match args.class.as_str() {
        "all" => None,
        other => Some(vec![other
            .parse::<usize>()
            .map_err(|_| config_error(format!("--class must be an index or `all`, got `{other}`")))?]),
    };
    let cfg = ScreeningConfig {
        directions: args.directions,
        seed: args.seed,
        statistic: args.stat,
        scope: args.scope,
        method: args.method,
        alpha: args.alpha,
        null_draws: args.null_draws,
        fresh_nulls: !args.shared_nulls,
        gradient_kind: args.gradient,
        classes,
    };
    let feats = model.feature_matrix(data.samples())?;
    let out = screen(&model, &feats, data.labels(), &cfg)?;
    write_screening(&out, &args.out)?;
    for &k in &out.classes {
        println!("class {k}: {} discoveries", out.discovered(k).len());
    }
    Ok(())
}

fn run_pipeline_command(args: PipelineArgs) -> Result<(), Failure> {
    if let Some(path) = &args.replay {
        let manifest = RunManifest::load(path)?;
        let (_, mismatches) = replay(&manifest, &args.out)?;
        if mismatches.is_empty() {
            println!("replay reproduced all {} output digests", manifest.outputs.len());
            return Ok(());
        }
        for m in &mismatches {
            eprintln!(
                "digest mismatch for {}: expected {}, found {}",
                m.path,
                m.expected,
                m.found.as_deref().unwrap_or("(missing)")
            );
        }
        return Err(Failure {
            code: 3,
            message: format!("{} outputs differ from the manifest", mismatches.len()),
        });
    }
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.n {
        config.simulation.n = v;
    }
    if let Some(v) = args.hidden {
        config.training.hidden = v;
    }
    if let Some(v) = args.epochs {
        config.training.epochs = v;
    }
    if let Some(v) = args.lr {
        config.training.learning_rate = v;
    }
    if let Some(v) = args.directions {
        config.screening.directions = v;
    }
    if let Some(v) = args.alpha {
        config.screening.alpha = v;
    }
    if let Some(v) = args.method {
        config.screening.method = v;
    }
    if let Some(v) = args.stat {
        config.screening.statistic = v;
    }
    if let Some(v) = args.clusters {
        config.clusters.k = v;
    }
    if let Some(v) = args.feature {
        config.clusters.feature = v;
    }
    if let Some(v) = args.k {
        config.projection.k = v;
    }
    if args.fit_sample.is_some() {
        config.projection.fit_sample = args.fit_sample;
    }
    if let Some(v) = args.gradient {
        config.screening.gradient_kind = v;
        config.projection.gradient_kind = v;
        config.clusters.gradient_kind = v;
    }
    let manifest = run_pipeline(&config, &args.out)?;
    let s = &manifest.summary;
    println!("training accuracy {:.4}", s.train_accuracy);
    println!("discoveries per class {:?}", s.discoveries);
    println!("cluster feature {}", s.cluster_feature);
    println!("first variance ratio {:.4}", s.first_variance_ratio);
    println!("manifest written to {}", args.out.join(conceptscope::pipeline::MANIFEST_FILE).display());
    Ok(())
}
