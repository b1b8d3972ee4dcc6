//! Read-only request handling for the explorer service, independent of any
//! HTTP server. Every handler is a pure function of the loaded bundle and
//! the request.

use serde::Serialize;
use serde_json::json;

use crate::export::LoadedBundle;
use crate::reduce::projected_tcav;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    fn json(status: u16, value: &impl Serialize) -> Self {
        Self {
            status,
            content_type: "application/json; charset=utf-8",
            body: serde_json::to_vec(value).expect("serializable response"),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self::json(status, &json!({ "error": message.into() }))
    }

    pub fn body_str(&self) -> &str {
        std::str::from_utf8(&self.body).unwrap_or("")
    }
}

/// Headers added to every response.
pub const CORS_HEADERS: [(&str, &str); 2] = [
    ("access-control-allow-origin", "*"),
    ("access-control-allow-methods", "GET, OPTIONS"),
];

#[derive(Debug, Clone)]
pub struct Service {
    loaded: LoadedBundle,
}

#[derive(Serialize)]
struct Point<'a> {
    id: &'a str,
    z: Vec<f64>,
    label: usize,
}

#[derive(Serialize)]
struct ConeEntry<'a> {
    id: &'a str,
    alignment: f64,
}

impl Service {
    pub fn new(loaded: LoadedBundle) -> Self {
        Self { loaded }
    }

    pub fn bundle(&self) -> &crate::reduce::ProjectionBundle {
        &self.loaded.bundle
    }

    /// Dispatch a GET request. `query` is the raw query string without `?`.
    pub fn handle(&self, path: &str, query: &str) -> Response {
        let params = match parse_query(query) {
            Ok(p) => p,
            Err(e) => return Response::error(400, e),
        };
        let param = |name: &str| params.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str());
        match path.trim_end_matches('/') {
            "/meta" => self.meta(),
            "/points" => self.points(),
            "/score" => self.score(param("class"), param("v")),
            "/cone" => self.cone(param("v"), param("angle")),
            p if p.starts_with("/thumbnails/") => self.thumbnail(&p["/thumbnails/".len()..]),
            _ => Response::error(404, format!("no such endpoint: {path}")),
        }
    }

    fn meta(&self) -> Response {
        let b = &self.loaded.bundle;
        Response::json(
            200,
            &json!({
                "classes": b.classes(),
                "counts": b.class_counts(),
                "variance_ratios": b.pca().variance_ratios(),
                "gradient_kind": b.gradient_kind(),
                "points": b.len(),
                "k": b.k(),
                "thumbnails": !self.loaded.thumbnails.is_empty(),
            }),
        )
    }

    fn points(&self) -> Response {
        let b = &self.loaded.bundle;
        let points: Vec<Point> = (0..b.len())
            .map(|i| Point {
                id: &b.ids()[i],
                z: b.points().row(i).iter().copied().collect(),
                label: b.labels()[i],
            })
            .collect();
        Response::json(200, &json!({ "points": points }))
    }

    fn class_index(&self, raw: Option<&str>) -> Result<usize, String> {
        let raw = raw.ok_or("missing `class` parameter")?;
        let classes = self.loaded.bundle.classes();
        if let Some(i) = classes.iter().position(|c| c == raw) {
            return Ok(i);
        }
        match raw.parse::<usize>() {
            Ok(i) if i < classes.len() => Ok(i),
            _ => Err(format!("unknown class `{raw}`")),
        }
    }

    fn vector(&self, raw: Option<&str>) -> Result<Vec<f64>, String> {
        let raw = raw.ok_or("missing `v` parameter")?;
        let v: Vec<f64> = raw
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| format!("malformed vector component `{s}`")))
            .collect::<Result<_, _>>()?;
        let k = self.loaded.bundle.k();
        if v.len() != k {
            return Err(format!("vector has {} components, expected {k}", v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err("vector components must be finite".into());
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err("vector must be nonzero".into());
        }
        Ok(v)
    }

    fn score(&self, class: Option<&str>, v: Option<&str>) -> Response {
        let (class, v) = match (self.class_index(class), self.vector(v)) {
            (Ok(c), Ok(v)) => (c, v),
            (Err(e), _) | (_, Err(e)) => return Response::error(400, e),
        };
        match projected_tcav(&self.loaded.bundle, &v, class) {
            Ok((score, per_point)) => Response::json(
                200,
                &json!({ "class": class, "v": v, "score": score, "per_point": per_point }),
            ),
            Err(e) => Response::error(400, e.to_string()),
        }
    }

    fn cone(&self, v: Option<&str>, angle: Option<&str>) -> Response {
        let v = match self.vector(v) {
            Ok(v) => v,
            Err(e) => return Response::error(400, e),
        };
        let angle = match angle.map(str::parse::<f64>) {
            None => return Response::error(400, "missing `angle` parameter"),
            Some(Ok(a)) if (0.0..=180.0).contains(&a) => a,
            Some(_) => return Response::error(400, "angle must be a number of degrees in [0, 180]"),
        };
        let entries = cone_members(&self.loaded.bundle, &v, angle);
        let b = &self.loaded.bundle;
        let out: Vec<ConeEntry> = entries
            .into_iter()
            .map(|(i, alignment)| ConeEntry {
                id: &b.ids()[i],
                alignment,
            })
            .collect();
        Response::json(200, &json!({ "angle": angle, "members": out }))
    }

    fn thumbnail(&self, id: &str) -> Response {
        let Some(path) = self.loaded.thumbnails.get(id) else {
            return Response::error(404, format!("no thumbnail for `{id}`"));
        };
        match std::fs::read(path) {
            Ok(body) => Response {
                status: 200,
                content_type: content_type(path),
                body,
            },
            Err(_) => Response::error(404, format!("thumbnail for `{id}` is unavailable")),
        }
    }
}

/// Indices of points whose projected position is within `angle_deg` of `v`,
/// with their cosine alignment, most aligned first. Points at the origin
/// have alignment 0.
pub fn cone_members(bundle: &crate::reduce::ProjectionBundle, v: &[f64], angle_deg: f64) -> Vec<(usize, f64)> {
    let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // slack so that a 90° cone includes orthogonal points despite cos rounding
    let threshold = angle_deg.to_radians().cos() - 1e-12;
    let mut members: Vec<(usize, f64)> = bundle
        .points()
        .row_iter()
        .enumerate()
        .filter_map(|(i, z)| {
            let z_norm = z.norm();
            let alignment = if z_norm > 0.0 {
                (z.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (z_norm * v_norm)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            (angle_deg >= 180.0 || alignment >= threshold).then_some((i, alignment))
        })
        .collect();
    members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    members
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

/// Split `a=1&b=x%2Cy` into decoded pairs.
pub fn parse_query(query: &str) -> Result<Vec<(String, String)>, String> {
    query
        .split('&')
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
            Ok((percent_decode(k)?, percent_decode(v)?))
        })
        .collect()
}

fn percent_decode(s: &str) -> Result<String, String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' => {
                let hex = bytes
                    .get(i + 1..i + 3)
                    .and_then(|h| std::str::from_utf8(h).ok())
                    .and_then(|h| u8::from_str_radix(h, 16).ok())
                    .ok_or_else(|| format!("bad percent escape in `{s}`"))?;
                out.push(hex);
                i += 3;
            }
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8(out).map_err(|_| format!("query `{s}` is not UTF-8"))
}
