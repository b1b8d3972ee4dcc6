//! Ingest of externally produced features and gradients, and static export
//! of a projection bundle for client-side exploration.
//!
//! Binary matrices are raw little-endian floats with a JSON sidecar next to
//! them (`<file>.json`): `{rows, cols}` for features and
//! `{rows, classes, cols}` for gradients, plus an optional
//! `dtype` of `"f32"` (default) or `"f64"`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concepts::{GradientKind, GradientTensor};
use crate::error::{Error, Result};
use crate::reduce::{pca_fit_sampled, PcaModel, ProjectionBundle};

/// Description of an external dataset. Relative paths are resolved against
/// the directory of the file the description was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestBundle {
    /// Features as CSV (one row per sample) or `.bin` with sidecar.
    pub features: PathBuf,
    /// Gradients as `.bin` with sidecar, `[sample][class][feature]` order.
    pub gradients: PathBuf,
    /// One integer label per line; a non-numeric first line is a header.
    pub labels: PathBuf,
    pub classes: Vec<String>,
    #[serde(default = "default_kind")]
    pub gradient_kind: GradientKind,
    /// Optional thumbnail file per sample, in sample order.
    #[serde(default)]
    pub thumbnails: Option<Vec<Option<PathBuf>>>,
}

fn default_kind() -> GradientKind {
    GradientKind::Probability
}

impl IngestBundle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.resolve(base);
        Ok(spec)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.features);
        fix(&mut self.gradients);
        fix(&mut self.labels);
        for p in self.thumbnails.iter_mut().flatten().flatten() {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub k: usize,
    /// Fit PCA on this many randomly chosen rows.
    pub fit_sample: Option<usize>,
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            k: 2,
            fit_sample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub dtype: Dtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub rows: usize,
    pub classes: usize,
    pub cols: usize,
    #[serde(default)]
    pub dtype: Dtype,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

fn read_floats(path: &Path, count: usize, dtype: Dtype) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if bytes.len() != count * width {
        return Err(Error::format(
            path,
            format!(
                "sidecar declares {count} values ({} bytes) but file has {} bytes",
                count * width,
                bytes.len()
            ),
        ));
    }
    let mut out = vec![0.0; count];
    decode(&bytes, dtype, &mut out);
    Ok(out)
}

pub fn write_floats(path: &Path, values: &[f64], dtype: Dtype) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for &v in values {
        match dtype {
            Dtype::F32 => bytes.extend((v as f32).to_le_bytes()),
            Dtype::F64 => bytes.extend(v.to_le_bytes()),
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write a row-major matrix as `.bin` plus sidecar.
pub fn write_matrix_bin(path: &Path, m: &DMatrix<f64>, dtype: Dtype) -> Result<()> {
    let flat: Vec<f64> = m.transpose().iter().copied().collect();
    write_floats(path, &flat, dtype)?;
    let side = MatrixSidecar {
        rows: m.nrows(),
        cols: m.ncols(),
        dtype,
    };
    write_json(&sidecar_path(path), &side)
}

pub fn write_tensor_bin(path: &Path, g: &GradientTensor, dtype: Dtype) -> Result<()> {
    write_floats(path, g.data(), dtype)?;
    let side = TensorSidecar {
        rows: g.points(),
        classes: g.classes(),
        cols: g.dim(),
        dtype,
    };
    write_json(&sidecar_path(path), &side)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn is_bin(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Project every gradient vector of a binary tensor file through `pca`,
/// reading one sample at a time so the full tensor never sits in memory.
fn project_gradient_file(path: &Path, side: TensorSidecar, pca: &PcaModel) -> Result<GradientTensor> {
    let width = match side.dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let per_row = side.classes * side.cols;
    let expected = (side.rows * per_row * width) as u64;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let found = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if found != expected {
        return Err(Error::format(
            path,
            format!(
                "sidecar declares {} values ({expected} bytes) but file has {found} bytes",
                side.rows * per_row
            ),
        ));
    }
    let mut reader = std::io::BufReader::with_capacity(1 << 20, file);
    let mut raw = vec![0u8; per_row * width];
    let mut row = vec![0.0; per_row];
    let k = pca.k();
    let mut data = Vec::with_capacity(side.rows * side.classes * k);
    for _ in 0..side.rows {
        reader.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
        decode(&raw, side.dtype, &mut row);
        for g in row.chunks_exact(side.cols) {
            data.extend(pca.project_vector(g)?);
        }
    }
    GradientTensor::new(side.rows, side.classes, k, data)
}

fn decode(raw: &[u8], dtype: Dtype, out: &mut [f64]) {
    match dtype {
        Dtype::F32 => {
            for (o, b) in out.iter_mut().zip(raw.chunks_exact(4)) {
                *o = f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64;
            }
        }
        Dtype::F64 => {
            for (o, b) in out.iter_mut().zip(raw.chunks_exact(8)) {
                *o = f64::from_le_bytes(b.try_into().expect("8 bytes"));
            }
        }
    }
}

pub fn read_feature_matrix(path: &Path) -> Result<DMatrix<f64>> {
    if is_bin(path) {
        let side: MatrixSidecar = read_json(&sidecar_path(path))?;
        let data = read_floats(path, side.rows * side.cols, side.dtype)?;
        return Ok(DMatrix::from_row_slice(side.rows, side.cols, &data));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::format(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::format(path, format!("line {}: {e}", line + 1))),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::format(path, "no numeric rows"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::format(path, format!("row {} has {} columns, expected {cols}", i + 1, rows[i].len())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(flat.len() / cols, cols, &flat))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next_back().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<usize>() {
            Ok(l) => labels.push(l),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::format(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(labels)
}

/// A bundle together with the thumbnail files it can serve.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBundle {
    pub bundle: ProjectionBundle,
    /// Point id to thumbnail file.
    pub thumbnails: BTreeMap<String, PathBuf>,
}

/// Read the files named by `spec`, check their shapes against each other,
/// then fit PCA and project features and gradients.
pub fn ingest(spec: &IngestBundle, options: &IngestOptions) -> Result<LoadedBundle> {
    let features = read_feature_matrix(&spec.features)?;
    let (m, n) = features.shape();
    let k_classes = spec.classes.len();
    let side: TensorSidecar = read_json(&sidecar_path(&spec.gradients))?;
    if [side.rows, side.classes, side.cols] != [m, k_classes, n] {
        return Err(Error::ShapeMismatch {
            what: format!("gradient tensor {}", spec.gradients.display()),
            expected: vec![m, k_classes, n],
            found: vec![side.rows, side.classes, side.cols],
        });
    }
    let labels = read_labels(&spec.labels)?;
    if labels.len() != m {
        return Err(Error::ShapeMismatch {
            what: format!("labels {}", spec.labels.display()),
            expected: vec![m],
            found: vec![labels.len()],
        });
    }
    let mut thumbnails = BTreeMap::new();
    if let Some(list) = &spec.thumbnails {
        if list.len() != m {
            return Err(Error::ShapeMismatch {
                what: "thumbnails".into(),
                expected: vec![m],
                found: vec![list.len()],
            });
        }
        for (i, t) in list.iter().enumerate() {
            if let Some(p) = t {
                thumbnails.insert(i.to_string(), p.clone());
            }
        }
    }
    let pca = pca_fit_sampled(&features, options.k, options.fit_sample, options.seed)?;
    let z = pca.transform(&features)?;
    drop(features);
    let gradients = project_gradient_file(&spec.gradients, side, &pca)?;
    let ids = (0..m).map(|i| i.to_string()).collect();
    let bundle = ProjectionBundle::new(spec.classes.clone(), ids, z, labels, gradients, spec.gradient_kind, pca)?;
    Ok(LoadedBundle { bundle, thumbnails })
}

pub const BUNDLE_FILE: &str = "bundle.json";
pub const INDEX_FILE: &str = "index.json";

/// Manifest written next to a static bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticIndex {
    pub bundle: String,
    pub sha256: String,
    pub bytes: u64,
    pub points: usize,
    pub classes: Vec<String>,
    pub k: usize,
    pub gradient_kind: GradientKind,
    /// Point id to thumbnail path relative to the export directory.
    pub thumbnails: BTreeMap<String, String>,
}

/// Write `bundle.json`, copy thumbnails under `thumbnails/`, and write
/// `index.json` describing both.
pub fn static_export(loaded: &LoadedBundle, out_dir: &Path) -> Result<StaticIndex> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let text = loaded.bundle.to_json()?;
    let bundle_path = out_dir.join(BUNDLE_FILE);
    std::fs::write(&bundle_path, &text).map_err(|e| Error::io(&bundle_path, e))?;
    let mut thumbs = BTreeMap::new();
    if !loaded.thumbnails.is_empty() {
        let dir = out_dir.join("thumbnails");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (id, src) in &loaded.thumbnails {
            let name = match src.extension() {
                Some(ext) => format!("{id}.{}", ext.to_string_lossy()),
                None => id.clone(),
            };
            let dst = dir.join(&name);
            std::fs::copy(src, &dst).map_err(|e| Error::io(src, e))?;
            thumbs.insert(id.clone(), format!("thumbnails/{name}"));
        }
    }
    let index = StaticIndex {
        bundle: BUNDLE_FILE.into(),
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
        bytes: text.len() as u64,
        points: loaded.bundle.len(),
        classes: loaded.bundle.classes().to_vec(),
        k: loaded.bundle.k(),
        gradient_kind: loaded.bundle.gradient_kind(),
        thumbnails: thumbs,
    };
    write_json(&out_dir.join(INDEX_FILE), &index)?;
    Ok(index)
}

/// Load a static export, or a bare bundle JSON file.
pub fn load_static(path: &Path) -> Result<LoadedBundle> {
    let (bundle_path, thumbnails) = if path.is_dir() {
        let index: StaticIndex = read_json(&path.join(INDEX_FILE))?;
        let thumbs = index
            .thumbnails
            .into_iter()
            .map(|(id, rel)| (id, path.join(rel)))
            .collect();
        (path.join(index.bundle), thumbs)
    } else {
        (path.to_path_buf(), BTreeMap::new())
    };
    let text = std::fs::read_to_string(&bundle_path).map_err(|e| Error::io(&bundle_path, e))?;
    let bundle = ProjectionBundle::from_json(&text).map_err(|e| Error::format(&bundle_path, e))?;
    Ok(LoadedBundle { bundle, thumbnails })
}
