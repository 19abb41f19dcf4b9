use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Domain, Polytope, StarPolygon};
use crate::error::{Error, Result};

/// Minimum polyline resolution accepted for parametric boundaries.
pub const MIN_SEGMENTS: usize = 64;

/// Ordered 2D vertex list of a closed boundary curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub vertices: Vec<[f64; 2]>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryKind {
    /// `r = sin(2 pi p t) + m`, `(x, y) = r (cos 2 pi t, sin 2 pi t)`.
    Flower {
        petals: u32,
        offset: f64,
    },
    Heart,
    /// Regular polygon with vertex 0 on the positive x axis.
    RegularPolygon {
        sides: u32,
        circumradius: f64,
    },
    /// Union of a horizontal and a vertical bar centered at the origin.
    Cross {
        half_width: f64,
        half_length: f64,
    },
    /// Polygon given by its corners, star-shaped about the origin.
    Custom {
        vertices: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub kind: BoundaryKind,
    #[serde(default = "default_segments")]
    pub n_segments: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub center: [f64; 2],
}

fn default_segments() -> usize {
    2048
}

fn default_scale() -> f64 {
    1.0
}

impl BoundarySpec {
    pub fn new(kind: BoundaryKind) -> Self {
        Self {
            kind,
            n_segments: default_segments(),
            scale: default_scale(),
            center: [0.0, 0.0],
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_segments(mut self, n: usize) -> Self {
        self.n_segments = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDomain(msg));
        if self.n_segments < MIN_SEGMENTS {
            return bad(format!(
                "n_segments must be >= {MIN_SEGMENTS}, got {}",
                self.n_segments
            ));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return bad("center must be finite".into());
        }
        match &self.kind {
            BoundaryKind::Flower { petals, offset } => {
                if *petals == 0 {
                    return bad("flower needs at least one petal".into());
                }
                if !(*offset > 1.0 && offset.is_finite()) {
                    return bad(format!("flower offset m must exceed 1, got {offset}"));
                }
            }
            BoundaryKind::Heart => {}
            BoundaryKind::RegularPolygon {
                sides,
                circumradius,
            } => {
                if *sides < 3 {
                    return bad(format!("polygon needs >= 3 sides, got {sides}"));
                }
                if !(*circumradius > 0.0 && circumradius.is_finite()) {
                    return bad(format!("circumradius must be positive, got {circumradius}"));
                }
            }
            BoundaryKind::Cross {
                half_width,
                half_length,
            } => {
                if !(*half_width > 0.0 && half_length > half_width && half_length.is_finite()) {
                    return bad(format!(
                        "cross needs 0 < half_width < half_length, got {half_width}, {half_length}"
                    ));
                }
            }
            BoundaryKind::Custom { vertices } => {
                if vertices.len() < 3 {
                    return bad("custom boundary needs >= 3 vertices".into());
                }
            }
        }
        Ok(())
    }

    /// Boundary point at curve parameter `t` in `[0, 1)`, before scaling.
    pub fn point_at(&self, t: f64) -> [f64; 2] {
        match &self.kind {
            BoundaryKind::Flower { petals, offset } => {
                let r = (TAU * f64::from(*petals) * t).sin() + offset;
                [r * (TAU * t).cos(), r * (TAU * t).sin()]
            }
            BoundaryKind::Heart => {
                let a = TAU * t;
                [
                    16.0 * a.sin().powi(3),
                    13.0 * a.cos()
                        - 5.0 * (2.0 * a).cos()
                        - 2.0 * (3.0 * a).cos()
                        - (4.0 * a).cos(),
                ]
            }
            _ => interpolate(&self.corners(), t),
        }
    }

    /// Corner vertices of piecewise-linear shapes, before scaling.
    fn corners(&self) -> Vec<[f64; 2]> {
        match &self.kind {
            BoundaryKind::RegularPolygon {
                sides,
                circumradius,
            } => (0..*sides)
                .map(|i| {
                    let a = TAU * f64::from(i) / f64::from(*sides);
                    [circumradius * a.cos(), circumradius * a.sin()]
                })
                .collect(),
            BoundaryKind::Cross {
                half_width: w,
                half_length: l,
            } => {
                let (w, l) = (*w, *l);
                vec![
                    [l, -w],
                    [l, w],
                    [w, w],
                    [w, l],
                    [-w, l],
                    [-w, w],
                    [-l, w],
                    [-l, -w],
                    [-w, -w],
                    [-w, -l],
                    [w, -l],
                    [w, -w],
                ]
            }
            BoundaryKind::Custom { vertices } => vertices.clone(),
            BoundaryKind::Flower { .. } | BoundaryKind::Heart => Vec::new(),
        }
    }

    fn place(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.center[0] + self.scale * p[0],
            self.center[1] + self.scale * p[1],
        ]
    }

    /// Samples the boundary at `n_segments` uniformly spaced parameters.
    pub fn polyline(&self) -> Result<Polyline> {
        self.validate()?;
        let n = self.n_segments;
        let vertices = (0..n)
            .map(|i| self.place(self.point_at(i as f64 / n as f64)))
            .collect();
        Ok(Polyline {
            vertices,
            closed: true,
        })
    }
}

/// Piecewise-linear interpolation over corners with `X_C = X_0`.
fn interpolate(corners: &[[f64; 2]], t: f64) -> [f64; 2] {
    let c = corners.len();
    let ct = c as f64 * t;
    let i = ct.floor();
    let r = ct - i;
    let i = (i as usize) % c;
    let a = corners[i];
    let b = corners[(i + 1) % c];
    [(1.0 - r) * a[0] + r * b[0], (1.0 - r) * a[1] + r * b[1]]
}

/// Builds the sampling domain described by `spec`.
///
/// Smooth parametric curves become star-shaped polygons through their
/// sampled polyline. Piecewise-linear shapes use their exact corners;
/// regular polygons become halfspace intersections.
pub fn build_boundary(spec: &BoundarySpec) -> Result<Domain> {
    spec.validate()?;
    match &spec.kind {
        BoundaryKind::Flower { .. } | BoundaryKind::Heart => {
            let line = spec.polyline()?;
            Ok(Domain::StarShaped(StarPolygon::new(
                &line.vertices,
                spec.center,
            )?))
        }
        BoundaryKind::RegularPolygon { .. } => {
            let corners: Vec<[f64; 2]> =
                spec.corners().into_iter().map(|p| spec.place(p)).collect();
            let c = corners.len();
            let mut normals = Vec::with_capacity(c);
            let mut offsets = Vec::with_capacity(c);
            for i in 0..c {
                let a = corners[i];
                let b = corners[(i + 1) % c];
                // Outward normal of a counter-clockwise edge.
                let n = vec![b[1] - a[1], a[0] - b[0]];
                offsets.push(n[0] * a[0] + n[1] * a[1]);
                normals.push(n);
            }
            Ok(Domain::Halfspaces(Polytope::new(normals, offsets)?))
        }
        BoundaryKind::Cross { .. } | BoundaryKind::Custom { .. } => {
            let corners: Vec<[f64; 2]> =
                spec.corners().into_iter().map(|p| spec.place(p)).collect();
            Ok(Domain::StarShaped(StarPolygon::new(&corners, spec.center)?))
        }
    }
}

/// Writes a polyline as CSV with columns `x,y`.
pub fn write_polyline_csv<W: Write>(line: &Polyline, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y"])?;
    for v in &line.vertices {
        w.serialize((v[0], v[1]))?;
    }
    w.flush()?;
    Ok(())
}
