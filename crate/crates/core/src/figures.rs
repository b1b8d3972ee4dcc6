//! Plot-ready data for a finished pipeline run. Only data files are written;
//! `plot_figures.py` next to them renders them with matplotlib.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::ClusterReport;
use crate::concepts::{activation_scores, ConceptDirection, Space};
use crate::error::{Error, Result};
use crate::inference::{fit_empirical_null, NullFitExport};
use crate::model::MlpModel;
use crate::pipeline::{
    read_json, write_json, FiguresSection, CLUSTERS_DIR, DATA_DIR, FIGURES_DIR, MODEL_DIR, SCREENING_DIR,
};
use crate::screening::{read_screening_csv, ScreeningMeta};
use crate::simdata::Dataset;

pub const PLOT_SCRIPT: &str = include_str!("../assets/plot_figures.py");

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingStage { stage, path })
    }
}

#[derive(Serialize)]
struct ClassNullFit {
    class: usize,
    #[serde(flatten)]
    fit: NullFitExport,
}

#[derive(Serialize)]
struct Strip {
    id: usize,
    sd: f64,
    mean: f64,
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct ClassStrips {
    class: usize,
    clusters: Vec<Strip>,
}

#[derive(Serialize)]
struct StripFile {
    feature: usize,
    sign: f64,
    classes: Vec<ClassStrips>,
}

#[derive(Serialize)]
struct FeaturePanel {
    feature: usize,
    normal: Vec<f64>,
    offset: f64,
    active_fraction: f64,
    /// `activation[r][c]` at `(x1[c], x2[r])`.
    activation: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct HalfspaceFile {
    x1: Vec<f64>,
    x2: Vec<f64>,
    features: Vec<FeaturePanel>,
}

/// Read the outputs of a run in `run_dir` and write the figure data files
/// into `run_dir/figures`. Returns the written paths.
pub fn export_figures_data(run_dir: &Path, cfg: &FiguresSection) -> Result<Vec<PathBuf>> {
    let data_path = require(run_dir.join(DATA_DIR).join("simulation.csv"), "simulate")?;
    let model_path = require(run_dir.join(MODEL_DIR).join("model.json"), "train")?;
    let csv_path = require(run_dir.join(SCREENING_DIR).join("screening.csv"), "screen")?;
    let meta_path = require(run_dir.join(SCREENING_DIR).join("meta.json"), "screen")?;
    let clusters_path = require(run_dir.join(CLUSTERS_DIR).join("clusters.json"), "clusters")?;

    let model = MlpModel::load(&model_path)?;
    let data = Dataset::read_csv(&data_path, Some(model.n_classes()))?;
    let rows = read_screening_csv(&csv_path)?;
    let meta: ScreeningMeta = read_json(&meta_path)?;
    let clusters = ClusterReport::load(&clusters_path)?;
    let dir = run_dir.join(FIGURES_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();

    // null fit per screened class
    let mut fits = Vec::new();
    for &k in &meta.classes {
        let stats: Vec<f64> = rows.iter().filter(|r| r.class == k).map(|r| r.statistic).collect();
        match fit_empirical_null(&stats) {
            Ok(null) => fits.push(ClassNullFit {
                class: k,
                fit: null.export(&stats, cfg.histogram_bins, cfg.density_grid),
            }),
            Err(e) => log::warn!("no null fit for class {k}: {e}"),
        }
    }
    let path = dir.join("null_fits.json");
    write_json(&path, &fits)?;
    written.push(path);

    // input-space directions
    let path = dir.join("discovered_directions.csv");
    let io = |p: &Path, e: std::io::Error| Error::io(p, e);
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| io(&path, e))?);
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        let mut body = String::from("direction_id,class,dx,dy,lfdr,discovered\n");
        for r in &rows {
            body.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.direction_id,
                r.class,
                opt(r.input_space_dx),
                opt(r.input_space_dy),
                opt(r.lfdr),
                r.discovery_flag
            ));
        }
        out.write_all(body.as_bytes()).map_err(|e| io(&path, e))?;
        out.flush().map_err(|e| io(&path, e))?;
    }
    written.push(path);

    // cluster SD map
    let n_classes = model.n_classes();
    let path = dir.join("cluster_sd.csv");
    {
        let mut body = String::from("cluster_id,centroid_x1,centroid_x2,size,singleton,distance_to_boundary");
        for k in 0..n_classes {
            body.push_str(&format!(",sd_{k}"));
        }
        for k in 0..n_classes {
            body.push_str(&format!(",mean_{k}"));
        }
        body.push('\n');
        for c in &clusters.clusters {
            let coord = |i: usize| c.centroid.get(i).map_or(String::new(), |v| format!("{v:.16e}"));
            body.push_str(&format!(
                "{},{},{},{},{},{}",
                c.id,
                coord(0),
                coord(1),
                c.size,
                u8::from(c.singleton),
                c.distance_to_boundary.map_or(String::new(), |d| format!("{d:.16e}"))
            ));
            for v in c.sd.iter().chain(&c.mean) {
                body.push_str(&format!(",{v:.16e}"));
            }
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    written.push(path);

    // per-cluster activation strips, most variable first
    let feats = model.feature_matrix(data.samples())?;
    let v = ConceptDirection::new(nalgebra::DVector::from_vec(clusters.direction.clone()), Space::Feature)?;
    let scores = activation_scores(&model, &feats, &v, clusters.gradient_kind)?;
    let mut members = vec![Vec::new(); clusters.clusters.len()];
    for (i, &c) in clusters.assignments.iter().enumerate() {
        members[c].push(i);
    }
    let strips = StripFile {
        feature: clusters.feature,
        sign: clusters.sign,
        classes: (0..n_classes)
            .map(|k| ClassStrips {
                class: k,
                clusters: clusters.order_by_sd[k]
                    .iter()
                    .map(|&id| Strip {
                        id,
                        sd: clusters.clusters[id].sd[k],
                        mean: clusters.clusters[id].mean[k],
                        scores: members[id].iter().map(|&i| scores.values()[(i, k)]).collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let path = dir.join("cluster_strips.json");
    write_json(&path, &strips)?;
    written.push(path);

    // half-space of every hidden feature with its activation on a grid
    if model.input_dim() == 2 {
        let g = cfg.halfspace_grid;
        let axis: Vec<f64> = (0..g).map(|i| -1.0 + 2.0 * i as f64 / (g - 1) as f64).collect();
        let active = crate::analysis::active_fractions(&feats);
        let features = (0..model.hidden_dim())
            .map(|j| {
                let h = model.feature_halfspace(j)?;
                Ok(FeaturePanel {
                    feature: j,
                    normal: h.normal.iter().copied().collect(),
                    offset: h.offset,
                    active_fraction: active[j],
                    activation: axis
                        .iter()
                        .map(|&y| axis.iter().map(|&x| h.activation(&[x, y])).collect())
                        .collect(),
                })
            })
            .collect::<Result<_>>()?;
        let path = dir.join("feature_halfspaces.json");
        write_json(
            &path,
            &HalfspaceFile {
                x1: axis.clone(),
                x2: axis,
                features,
            },
        )?;
        written.push(path);
    }

    let path = dir.join("plot_figures.py");
    std::fs::write(&path, PLOT_SCRIPT).map_err(|e| io(&path, e))?;
    written.push(path);
    Ok(written)
}
