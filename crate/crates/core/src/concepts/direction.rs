use std::fmt;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MlpModel;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Feature,
    Projected,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Feature => "feature",
            Space::Projected => "projected",
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Unit-length direction tagged with the space it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDirection {
    v: DVector<f64>,
    space: Space,
}

impl ConceptDirection {
    /// Normalizes `v`; zero or non-finite vectors are rejected.
    pub fn new(v: DVector<f64>, space: Space) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateDirection(format!(
                "cannot normalize a vector of norm {norm}"
            )));
        }
        Ok(Self { v: v / norm, space })
    }

    pub fn basis(dim: usize, j: usize, space: Space) -> Result<Self> {
        if j >= dim {
            return Err(Error::IndexOutOfRange {
                what: "basis direction",
                index: j,
                len: dim,
            });
        }
        Self::new(DVector::from_fn(dim, |i, _| if i == j { 1.0 } else { 0.0 }), space)
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn as_slice(&self) -> &[f64] {
        self.v.as_slice()
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn negated(&self) -> Self {
        Self {
            v: -&self.v,
            space: self.space,
        }
    }

    pub(crate) fn require(&self, space: Space) -> Result<()> {
        if self.space == space {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                expected: space.name(),
                found: self.space.name(),
            })
        }
    }
}

/// `count` i.i.d. uniform directions on the unit sphere in `dim` dimensions.
///
/// Direction `i` is a normalized standard-normal vector drawn from stream `i`
/// of `seed`, so any subset can be regenerated independently.
pub fn sample_sphere(dim: usize, count: usize, seed: u64) -> Result<Vec<ConceptDirection>> {
    if dim == 0 || count == 0 {
        return Err(Error::InvalidArgument(
            "sphere sampling needs dim >= 1 and count >= 1".into(),
        ));
    }
    Ok((0..count)
        .map(|i| sphere_point(dim, seed, i as u64))
        .collect())
}

pub(crate) fn sphere_point(dim: usize, seed: u64, index: u64) -> ConceptDirection {
    let mut rng = stream_rng(seed, index);
    loop {
        let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        if let Ok(dir) = ConceptDirection::new(v, Space::Feature) {
            return dir;
        }
    }
}

/// Input-space rendering of a feature-space direction: `W1ᵀ v`, normalized.
pub fn direction_to_input_space(model: &MlpModel, v: &ConceptDirection) -> Result<DVector<f64>> {
    v.require(Space::Feature)?;
    if v.dim() != model.hidden_dim() {
        return Err(Error::DimensionMismatch {
            what: "concept direction",
            expected: model.hidden_dim(),
            found: v.dim(),
        });
    }
    let mapped = model.w1().tr_mul(v.vector());
    let norm = mapped.norm();
    if !(norm > 0.0) {
        return Err(Error::DegenerateDirection(
            "W1ᵀv vanishes; no input-space rendering".into(),
        ));
    }
    Ok(mapped / norm)
}
