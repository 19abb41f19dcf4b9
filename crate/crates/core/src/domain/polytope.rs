use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use super::{dot, max_pairwise_distance, MAX_REFLECTIONS, PUSH_FRACTION};
use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-9;

/// Bounded intersection of halfspaces `{x : n_i . x <= c_i}`.
///
/// Normals are normalized to unit length at construction. Vertices are
/// enumerated once (every `d`-subset of active constraints) and used for the
/// diameter, the bounding box, and an interior point.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    vertices: Vec<Vec<f64>>,
    interior: Vec<f64>,
    diameter: f64,
}

impl Polytope {
    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(Error::InvalidDomain(format!(
                "need matching non-empty normals/offsets ({} vs {})",
                normals.len(),
                offsets.len()
            )));
        }
        let d = normals[0].len();
        if d == 0 {
            return Err(Error::InvalidDomain("zero-dimensional halfspace".into()));
        }
        let mut unit = Vec::with_capacity(normals.len());
        let mut offs = Vec::with_capacity(normals.len());
        for (i, (n, c)) in normals.iter().zip(&offsets).enumerate() {
            if n.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: n.len(),
                });
            }
            let norm = dot(n, n).sqrt();
            if !(norm > 0.0 && norm.is_finite() && c.is_finite()) {
                return Err(Error::InvalidDomain(format!("halfspace {i} is degenerate")));
            }
            unit.push(n.iter().map(|v| v / norm).collect::<Vec<_>>());
            offs.push(c / norm);
        }

        if let Some(ray) = recession_ray(&unit, d) {
            return Err(Error::InvalidDomain(format!(
                "halfspace intersection is unbounded along {ray:?}"
            )));
        }
        let vertices = enumerate_vertices(&unit, &offs, d);
        if vertices.len() <= d {
            return Err(Error::InvalidDomain(
                "halfspace intersection is empty or has no interior".into(),
            ));
        }
        let mut interior = vec![0.0; d];
        for v in &vertices {
            for (acc, x) in interior.iter_mut().zip(v) {
                *acc += x / vertices.len() as f64;
            }
        }
        let scale = max_pairwise_distance(vertices.iter().map(|v| v.as_slice()));
        let min_slack = unit
            .iter()
            .zip(&offs)
            .map(|(n, c)| c - dot(n, &interior))
            .fold(f64::INFINITY, f64::min);
        if min_slack <= 1e-9 * scale.max(1.0) {
            return Err(Error::InvalidDomain(
                "halfspace intersection has empty interior".into(),
            ));
        }

        Ok(Self {
            normals: unit,
            offsets: offs,
            vertices,
            interior,
            diameter: scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.interior.len()
    }

    pub fn normals(&self) -> &[Vec<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn interior_point(&self) -> &[f64] {
        &self.interior
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for v in &self.vertices {
            for k in 0..d {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, c)| dot(n, x) <= *c)
    }

    /// Largest constraint violation `max_i (n_i . x - c_i)`; non-positive inside.
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, c)| dot(n, x) - c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn reflect(&self, prev: Option<&[f64]>, x: &[f64]) -> Vec<f64> {
        if self.contains(x) {
            return x.to_vec();
        }
        let mut x = x.to_vec();
        let mut from = prev.filter(|p| self.contains(p)).map(<[f64]>::to_vec);
        for _ in 0..MAX_REFLECTIONS {
            let (j, crossing) = match &from {
                Some(p) => self.first_crossing(p, &x),
                None => (self.most_violated(&x), None),
            };
            let depth = dot(&self.normals[j], &x) - self.offsets[j];
            for (xi, ni) in x.iter_mut().zip(&self.normals[j]) {
                *xi -= 2.0 * depth * ni;
            }
            if self.contains(&x) {
                return x;
            }
            from = crossing.or(from);
        }
        self.push_inside(&x)
    }

    fn most_violated(&self, x: &[f64]) -> usize {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, c)| dot(n, x) - c)
            .position_max_by(|a, b| a.total_cmp(b))
            .expect("polytope has constraints")
    }

    /// First constraint hit along `p -> x` and the crossing point.
    fn first_crossing(&self, p: &[f64], x: &[f64]) -> (usize, Option<Vec<f64>>) {
        let dir: Vec<f64> = x.iter().zip(p).map(|(a, b)| a - b).collect();
        let mut best: Option<(f64, usize)> = None;
        for (j, (n, c)) in self.normals.iter().zip(&self.offsets).enumerate() {
            let rate = dot(n, &dir);
            if rate <= 0.0 {
                continue;
            }
            let t = ((c - dot(n, p)) / rate).max(0.0);
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, j));
            }
        }
        match best {
            Some((t, j)) => {
                let hit = p.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                (j, Some(hit))
            }
            None => (self.most_violated(x), None),
        }
    }

    /// Radial projection onto the boundary along the ray from the interior
    /// point, then a small step back toward the interior point.
    fn push_inside(&self, x: &[f64]) -> Vec<f64> {
        let c0 = &self.interior;
        let dir: Vec<f64> = x.iter().zip(c0).map(|(a, b)| a - b).collect();
        let mut t_max = 1.0_f64;
        for (n, c) in self.normals.iter().zip(&self.offsets) {
            let rate = dot(n, &dir);
            if rate > 0.0 {
                t_max = t_max.min((c - dot(n, c0)) / rate);
            }
        }
        let len = dot(&dir, &dir).sqrt();
        let mut eps = PUSH_FRACTION * self.diameter;
        while eps < len * t_max {
            let t = t_max - eps / len;
            let p: Vec<f64> = c0.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            if self.contains(&p) {
                return p;
            }
            eps *= 10.0;
        }
        c0.clone()
    }
}

fn enumerate_vertices(normals: &[Vec<f64>], offsets: &[f64], d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for subset in (0..normals.len()).combinations(d) {
        let a = DMatrix::from_fn(d, d, |r, c| normals[subset[r]][c]);
        let b = DVector::from_fn(d, |r, _| offsets[subset[r]]);
        let lu = a.full_piv_lu();
        if !lu.is_invertible() || lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(v) = lu.solve(&b) else { continue };
        let v: Vec<f64> = v.iter().copied().collect();
        if v.iter().any(|x| !x.is_finite()) {
            continue;
        }
        let scale = 1.0 + v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let feasible = normals
            .iter()
            .zip(offsets)
            .all(|(n, c)| dot(n, &v) <= c + FEAS_TOL * scale);
        let duplicate = out.iter().any(|w| {
            w.iter()
                .zip(&v)
                .all(|(a, b)| (a - b).abs() <= FEAS_TOL * scale)
        });
        if feasible && !duplicate {
            out.push(v);
        }
    }
    out
}

/// A nonzero direction `r` with `n_i . r <= 0` for every normal, if one
/// exists among the extreme-ray candidates (null vectors of `d - 1` normals).
fn recession_ray(normals: &[Vec<f64>], d: usize) -> Option<Vec<f64>> {
    let candidates: Vec<Vec<f64>> = if d == 1 {
        vec![vec![1.0]]
    } else {
        (0..normals.len())
            .combinations(d - 1)
            .filter_map(|subset| {
                // Generalized cross product: r_j = (-1)^j det(M without column j).
                let r: Vec<f64> = (0..d)
                    .map(|j| {
                        let minor = DMatrix::from_fn(d - 1, d - 1, |row, col| {
                            normals[subset[row]][if col < j { col } else { col + 1 }]
                        });
                        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                        sign * minor.determinant()
                    })
                    .collect();
                let norm = dot(&r, &r).sqrt();
                (norm > 1e-10).then(|| r.iter().map(|v| v / norm).collect())
            })
            .collect()
    };
    for r in candidates {
        for sign in [1.0, -1.0] {
            let ray: Vec<f64> = r.iter().map(|v| sign * v).collect();
            if normals.iter().all(|n| dot(n, &ray) <= 1e-12) {
                return Some(ray);
            }
        }
    }
    None
}
