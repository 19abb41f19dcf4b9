use std::f64::consts::TAU;

use super::{max_pairwise_distance, MAX_REFLECTIONS, PUSH_FRACTION};
use crate::error::{Error, Result};

type P2 = [f64; 2];

/// Closed polygon that is star-shaped with respect to `center`.
///
/// Vertices are stored counter-clockwise together with their unwrapped polar
/// angles about the center, so membership is a binary search over angular
/// sectors followed by a single edge side test.
#[derive(Debug, Clone, PartialEq)]
pub struct StarPolygon {
    vertices: Vec<P2>,
    center: P2,
    angles: Vec<f64>,
    diameter: f64,
    lo: P2,
    hi: P2,
}

impl StarPolygon {
    pub fn new(vertices: &[P2], center: P2) -> Result<Self> {
        let mut vertices = vertices.to_vec();
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidDomain(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices
            .iter()
            .flatten()
            .chain(&center)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidDomain("non-finite polygon vertex".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::InvalidDomain(format!(
                    "consecutive vertices {i} and {} coincide",
                    (i + 1) % n
                )));
            }
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }

        // Every edge must turn strictly counter-clockwise about the center and
        // the turns must add up to exactly one revolution.
        let mut sweep = 0.0;
        for i in 0..n {
            let a = sub(vertices[i], center);
            let b = sub(vertices[(i + 1) % n], center);
            let c = cross(a, b);
            if c <= 0.0 {
                return Err(Error::InvalidDomain(format!(
                    "polygon is not star-shaped about ({}, {}) at edge {i}",
                    center[0], center[1]
                )));
            }
            sweep += c.atan2(dot(a, b));
        }
        if (sweep - TAU).abs() > 1e-6 {
            return Err(Error::InvalidDomain(format!(
                "polygon winds {:.4} revolutions about its center",
                sweep / TAU
            )));
        }

        let a0 = angle(sub(vertices[0], center));
        let angles = vertices
            .iter()
            .map(|&v| a0 + (angle(sub(v, center)) - a0).rem_euclid(TAU))
            .collect();

        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let diameter = max_pairwise_distance(vertices.iter().map(|v| v.as_slice()));

        Ok(Self {
            vertices,
            center,
            angles,
            diameter,
            lo,
            hi,
        })
    }

    pub fn vertices(&self) -> &[P2] {
        &self.vertices
    }

    pub fn center(&self) -> P2 {
        self.center
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn bounding_box(&self) -> (P2, P2) {
        (self.lo, self.hi)
    }

    pub fn contains(&self, x: P2) -> bool {
        if x[0] < self.lo[0] || x[0] > self.hi[0] || x[1] < self.lo[1] || x[1] > self.hi[1] {
            return false;
        }
        let d = sub(x, self.center);
        if d == [0.0, 0.0] {
            return true;
        }
        let a0 = self.angles[0];
        let phi = a0 + (angle(d) - a0).rem_euclid(TAU);
        let i = self.angles.partition_point(|&a| a <= phi).saturating_sub(1);
        let a = self.vertices[i];
        let b = self.vertices[(i + 1) % self.vertices.len()];
        cross(sub(b, a), sub(x, a)) >= 0.0
    }

    /// Iterated mirror reflection. With a known in-domain predecessor the
    /// mirror is taken across the first edge crossed by the step; otherwise
    /// across the edge nearest to `x`.
    pub(crate) fn reflect(&self, prev: Option<P2>, x: P2) -> P2 {
        if self.contains(x) {
            return x;
        }
        let mut x = x;
        let mut from: Option<(P2, usize)> = None;
        if let Some(p) = prev.filter(|p| self.contains(*p)) {
            from = Some((p, usize::MAX));
        }
        for _ in 0..MAX_REFLECTIONS {
            let (edge, crossing) = match from {
                Some((p, skip)) => match self.first_crossing(p, x, skip) {
                    Some(hit) => hit,
                    None => self.nearest_edge(x),
                },
                None => self.nearest_edge(x),
            };
            x = self.mirror(edge, x);
            if self.contains(x) {
                return x;
            }
            from = Some((crossing, edge));
        }
        self.push_inside(x)
    }

    /// First edge crossed by the segment `p -> q`, skipping `skip`.
    fn first_crossing(&self, p: P2, q: P2, skip: usize) -> Option<(usize, P2)> {
        let n = self.vertices.len();
        let r = sub(q, p);
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if i == skip {
                continue;
            }
            let a = self.vertices[i];
            let s = sub(self.vertices[(i + 1) % n], a);
            let denom = cross(r, s);
            if denom == 0.0 {
                continue;
            }
            let ap = sub(a, p);
            let t = cross(ap, s) / denom;
            let u = cross(ap, r) / denom;
            if t > 1e-12
                && t <= 1.0
                && (0.0..=1.0).contains(&u)
                && best.is_none_or(|(bt, _)| t < bt)
            {
                best = Some((t, i));
            }
        }
        best.map(|(t, i)| (i, [p[0] + t * r[0], p[1] + t * r[1]]))
    }

    fn nearest_edge(&self, x: P2) -> (usize, P2) {
        let n = self.vertices.len();
        let mut best = (f64::INFINITY, 0, x);
        for i in 0..n {
            let a = self.vertices[i];
            let s = sub(self.vertices[(i + 1) % n], a);
            let t = (dot(sub(x, a), s) / dot(s, s)).clamp(0.0, 1.0);
            let proj = [a[0] + t * s[0], a[1] + t * s[1]];
            let d = sub(x, proj);
            let d2 = dot(d, d);
            if d2 < best.0 {
                best = (d2, i, proj);
            }
        }
        (best.1, best.2)
    }

    fn mirror(&self, edge: usize, x: P2) -> P2 {
        let a = self.vertices[edge];
        let s = sub(self.vertices[(edge + 1) % self.vertices.len()], a);
        let len = dot(s, s).sqrt();
        // Inward normal of a counter-clockwise edge.
        let nrm = [-s[1] / len, s[0] / len];
        let depth = dot(sub(x, a), nrm);
        [x[0] - 2.0 * depth * nrm[0], x[1] - 2.0 * depth * nrm[1]]
    }

    /// Nearest boundary vertex, pushed toward the center until it tests inside.
    fn push_inside(&self, x: P2) -> P2 {
        let v = *self
            .vertices
            .iter()
            .min_by(|a, b| {
                let da = sub(x, **a);
                let db = sub(x, **b);
                dot(da, da).total_cmp(&dot(db, db))
            })
            .expect("polygon has vertices");
        let to_center = sub(self.center, v);
        let dist = dot(to_center, to_center).sqrt();
        let mut eps = PUSH_FRACTION * self.diameter;
        while eps < dist {
            let p = [
                v[0] + eps * to_center[0] / dist,
                v[1] + eps * to_center[1] / dist,
            ];
            if self.contains(p) {
                return p;
            }
            eps *= 10.0;
        }
        self.center
    }
}

fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn angle(d: P2) -> f64 {
    d[1].atan2(d[0])
}

fn signed_area(v: &[P2]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> StarPolygon {
        StarPolygon::new(
            &[[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
            [0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn clockwise_input_is_normalized() {
        let cw = StarPolygon::new(
            &[[-1.0, 1.0], [1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]],
            [0.0, 0.0],
        )
        .unwrap();
        assert!(cw.contains([0.5, 0.5]));
        assert!(!cw.contains([1.5, 0.5]));
    }

    #[test]
    fn boundary_points_are_contained() {
        let sq = square();
        assert!(sq.contains([1.0, 0.3]));
        assert!(sq.contains([1.0, 1.0]));
        assert!(sq.contains([0.0, 0.0]));
    }

    #[test]
    fn mirror_across_first_crossing() {
        let sq = square();
        let r = sq.reflect(Some([0.5, 0.0]), [1.25, 0.0]);
        assert!((r[0] - 0.75).abs() < 1e-12 && r[1].abs() < 1e-12);
    }

    #[test]
    fn corner_overshoot_needs_two_mirrors() {
        let sq = square();
        let r = sq.reflect(Some([0.0, 0.0]), [1.5, 1.25]);
        assert!((r[0] - 0.5).abs() < 1e-12, "{r:?}");
        assert!((r[1] - 0.75).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn rejects_center_outside_kernel() {
        let l = [
            [0.0, 0.0],
            [2.0, 0.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
        ];
        assert!(StarPolygon::new(&l, [1.9, 0.5]).is_err());
        assert!(StarPolygon::new(&l, [0.5, 0.5]).is_ok());
    }

    #[test]
    fn rejects_degenerate_polylines() {
        assert!(StarPolygon::new(&[[0.0, 0.0], [1.0, 0.0]], [0.5, 0.1]).is_err());
        assert!(StarPolygon::new(
            &[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]],
            [0.0, 0.0]
        )
        .is_err());
    }

    #[test]
    fn fallback_lands_inside() {
        let sq = square();
        let p = sq.push_inside([5.0, 5.0]);
        assert!(sq.contains(p));
        assert!(p[0] < 1.0 && p[0] > 0.99);
    }
}
