//! Bounded sampling domains.
//!
//! A [`Domain`] is a compact region of `R^d` with a containment test, a
//! reflection operator that maps any proposal back into the closed region,
//! and a cached diameter. Three representations are supported: axis-aligned
//! boxes, bounded intersections of halfspaces, and 2D polygons that are
//! star-shaped about a known center.

mod boundary;
mod polygon;
mod polytope;

pub use boundary::{build_boundary, write_polyline_csv, BoundaryKind, BoundarySpec, Polyline};
pub use polygon::StarPolygon;
pub use polytope::Polytope;

use crate::error::{Error, Result};

/// Maximum number of mirror reflections before falling back to projection.
pub const MAX_REFLECTIONS: usize = 8;

/// Relative inward push applied by the projection fallback.
pub const PUSH_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Box(Bounds),
    Halfspaces(Polytope),
    StarShaped(StarPolygon),
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Box(b) => b.lo.len(),
            Domain::Halfspaces(p) => p.dim(),
            Domain::StarShaped(_) => 2,
        }
    }

    /// Membership in the closed domain.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(match self {
            Domain::Box(b) => b.contains(x),
            Domain::Halfspaces(p) => p.contains(x),
            Domain::StarShaped(s) => s.contains([x[0], x[1]]),
        })
    }

    /// Reflects `x` back into the domain when no in-domain predecessor is
    /// known. Interior points are returned unchanged.
    pub fn reflect(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_finite(x)?;
        Ok(match self {
            Domain::Box(b) => b.fold(x),
            Domain::Halfspaces(p) => p.reflect(None, x),
            Domain::StarShaped(s) => {
                let [a, b] = s.reflect(None, [x[0], x[1]]);
                vec![a, b]
            }
        })
    }

    /// Reflects the proposal `x` made from the in-domain point `prev`,
    /// mirroring across the first boundary crossing of the segment.
    pub fn reflect_from(&self, prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_finite(x)?;
        self.check_dim(prev)?;
        Ok(match self {
            Domain::Box(b) => b.fold(x),
            Domain::Halfspaces(p) => p.reflect(Some(prev), x),
            Domain::StarShaped(s) => {
                let [a, b] = s.reflect(Some([prev[0], prev[1]]), [x[0], x[1]]);
                vec![a, b]
            }
        })
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Box(b) => b.diameter(),
            Domain::Halfspaces(p) => p.diameter(),
            Domain::StarShaped(s) => s.diameter(),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Box(b) => (b.lo.clone(), b.hi.clone()),
            Domain::Halfspaces(p) => p.bounding_box(),
            Domain::StarShaped(s) => {
                let (lo, hi) = s.bounding_box();
                (lo.to_vec(), hi.to_vec())
            }
        }
    }

    /// A point strictly inside the domain.
    pub fn interior_point(&self) -> Vec<f64> {
        match self {
            Domain::Box(b) => b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            Domain::Halfspaces(p) => p.interior_point().to_vec(),
            Domain::StarShaped(s) => s.center().to_vec(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_finite(&self, x: &[f64]) -> Result<()> {
        self.check_dim(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point to reflect"));
        }
        Ok(())
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidDomain(format!(
                "box bounds must be non-empty and of equal length ({} vs {})",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidDomain(format!(
                    "box side {i} must satisfy lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Coordinate-wise mirror folding; exact for any number of wraps.
    fn fold(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| {
                if l <= v && v <= h {
                    return v;
                }
                let width = h - l;
                let mut y = (v - l).rem_euclid(2.0 * width);
                if y > width {
                    y = 2.0 * width - y;
                }
                (l + y).clamp(l, h)
            })
            .collect()
    }

    fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_pairwise_distance<'a, I>(points: I) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let pts: Vec<&[f64]> = points.into_iter().collect();
    let mut best = 0.0_f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}
