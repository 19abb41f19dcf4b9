//! Gridded KL divergence, posterior modes, swap and round-trip statistics.

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::potentials::GaussianMixture;

/// Default grid resolution per axis.
pub const DEFAULT_GRID: usize = 100;

/// Default floor added to reference probabilities.
pub const DEFAULT_KL_EPS: f64 = 1e-10;

/// Regular 2D grid over an axis-aligned extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::InvalidParameter(
                "grid needs positive extent and bin counts".into(),
            ));
        }
        Ok(Self { lo, hi, nx, ny })
    }

    /// Grid over the bounding box of a 2D domain.
    pub fn for_domain(domain: &Domain, nx: usize, ny: usize) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: domain.dim(),
            });
        }
        let (lo, hi) = domain.bounding_box();
        Self::new([lo[0], lo[1]], [hi[0], hi[1]], nx, ny)
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat cell index of `x`, or `None` outside the extent. The upper edges
    /// belong to the last row and column.
    pub fn cell(&self, x: &[f64]) -> Option<usize> {
        let ix = bin(x[0], self.lo[0], self.hi[0], self.nx)?;
        let iy = bin(x[1], self.lo[1], self.hi[1], self.ny)?;
        Some(ix * self.ny + iy)
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        let (ix, iy) = (cell / self.ny, cell % self.ny);
        let dx = (self.hi[0] - self.lo[0]) / self.nx as f64;
        let dy = (self.hi[1] - self.lo[1]) / self.ny as f64;
        [
            self.lo[0] + (ix as f64 + 0.5) * dx,
            self.lo[1] + (iy as f64 + 0.5) * dy,
        ]
    }
}

fn bin(v: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    let i = ((v - lo) / (hi - lo) * n as f64) as usize;
    Some(i.min(n - 1))
}

/// Sample counts on a [`Grid`]. Points beyond the extent are tallied in
/// `outside` so that `total` always equals the number of samples added.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub grid: Grid,
    pub counts: Vec<u64>,
    pub outside: u64,
    pub total: u64,
}

impl Histogram2D {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            counts: vec![0; grid.cells()],
            outside: 0,
            total: 0,
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        match self.grid.cell(x) {
            Some(c) => self.counts[c] += 1,
            None => self.outside += 1,
        }
        self.total += 1;
    }

    pub fn from_samples<'a, I: IntoIterator<Item = &'a [f64]>>(grid: Grid, samples: I) -> Self {
        let mut h = Self::new(grid);
        for x in samples {
            h.add(x);
        }
        h
    }
}

/// Reference cell probabilities on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGrid {
    pub grid: Grid,
    pub probs: Vec<f64>,
}

/// Reference grid of an arbitrary unnormalized density, truncated to `domain`
/// by its cell centers and renormalized.
pub fn reference_grid_with<F: Fn(&[f64]) -> f64>(
    density: F,
    domain: &Domain,
    grid: Grid,
) -> Result<ReferenceGrid> {
    let mut probs = Vec::with_capacity(grid.cells());
    for c in 0..grid.cells() {
        let x = grid.center(c);
        probs.push(if domain.contains(&x)? {
            density(&x)
        } else {
            0.0
        });
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidDomain(
            "no reference mass inside the domain".into(),
        ));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(ReferenceGrid { grid, probs })
}

/// Truncated mixture density on an `nx x ny` grid over the domain's bounding box.
pub fn reference_grid(
    gmm: &GaussianMixture,
    domain: &Domain,
    nx: usize,
    ny: usize,
) -> Result<ReferenceGrid> {
    let grid = Grid::for_domain(domain, nx, ny)?;
    // Densities are shifted by the minimum potential so the sharpest targets
    // do not underflow before renormalization.
    let mut shift = f64::INFINITY;
    for c in 0..grid.cells() {
        let x = grid.center(c);
        if domain.contains(&x)? {
            shift = shift.min(gmm.potential(&x));
        }
    }
    if !shift.is_finite() {
        return Err(Error::InvalidDomain(
            "no grid cell center lies inside the domain".into(),
        ));
    }
    reference_grid_with(|x| (shift - gmm.potential(x)).exp(), domain, grid)
}

/// `sum p log(p / q_eps)` over cells with empirical mass, where `q_eps` is
/// `q + eps` renormalized. Samples outside the grid extent are charged as
/// mass on an extra zero-reference cell.
pub fn kl_divergence(hist: &Histogram2D, reference: &ReferenceGrid, eps: f64) -> Result<f64> {
    if hist.grid != reference.grid {
        return Err(Error::Shape("histogram and reference grids differ".into()));
    }
    if hist.total == 0 {
        return Err(Error::InvalidParameter("histogram is empty".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let n = hist.total as f64;
    let z = reference.probs.iter().sum::<f64>() + (reference.probs.len() + 1) as f64 * eps;
    let mut d = 0.0;
    for (&c, &q) in hist.counts.iter().zip(&reference.probs) {
        if c > 0 {
            let p = c as f64 / n;
            d += p * (p * z / (q + eps)).ln();
        }
    }
    if hist.outside > 0 {
        let p = hist.outside as f64 / n;
        d += p * (p * z / eps).ln();
    }
    Ok(d)
}

/// KL divergence between two probability vectors, with `q + eps` renormalized.
pub fn kl_cells(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let z = q.iter().sum::<f64>() + q.len() as f64 * eps;
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p * z / (q + eps)).ln())
        .sum()
}

/// Total-variation distance `0.5 sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Normalized 1D histogram of `samples` over `[lo, hi]` with `bins` bins.
/// Samples outside the range are dropped.
pub fn histogram_1d(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let mut n = 0.0;
    for &v in samples {
        if let Some(i) = bin(v, lo, hi, bins) {
            counts[i] += 1.0;
            n += 1.0;
        }
    }
    if n > 0.0 {
        counts.iter_mut().for_each(|c| *c /= n);
    }
    counts
}

/// Minimum sample count accepted by [`posterior_mode`].
pub const MIN_MODE_SAMPLES: usize = 100;

/// Center of the fullest bin of a `ceil(sqrt n)`-bin histogram over
/// `[min, max]`. Ties go to the bin whose center is nearest the sample mean,
/// then to the lower bin.
pub fn posterior_mode(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < MIN_MODE_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "posterior mode needs at least {MIN_MODE_SAMPLES} samples, got {n}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posterior samples"));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(lo);
    }
    let bins = (n as f64).sqrt().ceil() as usize;
    let mut counts = vec![0usize; bins];
    for &v in samples {
        counts[bin(v, lo, hi, bins).expect("sample within its own range")] += 1;
    }
    let width = (hi - lo) / bins as f64;
    let center = |i: usize| lo + (i as f64 + 0.5) * width;
    let mean = samples.iter().sum::<f64>() / n as f64;
    let top = *counts.iter().max().expect("at least one bin");
    let best = (0..bins)
        .filter(|&i| counts[i] == top)
        .min_by(|&a, &b| {
            (center(a) - mean)
                .abs()
                .total_cmp(&(center(b) - mean).abs())
        })
        .expect("a maximal bin exists");
    Ok(center(best))
}

/// Completed coldest-to-hottest-and-back excursions per chain identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrips {
    pub per_identity: Vec<usize>,
}

impl RoundTrips {
    pub fn total(&self) -> usize {
        self.per_identity.iter().sum()
    }
}

/// Counts round trips from a slot-to-identity trace. Every identity starts in
/// its own slot; a round trip is completed each time an identity that has
/// reached the hottest slot since its last visit to the coldest slot returns
/// to the coldest slot.
pub fn count_round_trips(identities: &[Vec<usize>], chains: usize) -> RoundTrips {
    let mut per_identity = vec![0; chains];
    if chains < 2 {
        return RoundTrips { per_identity };
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Leg {
        Unanchored,
        Rising,
        Falling,
    }
    let mut legs = vec![Leg::Unanchored; chains];
    legs[0] = Leg::Rising;
    let hot = chains - 1;
    for ids in identities {
        let (cold_id, hot_id) = (ids[0], ids[hot]);
        if legs[hot_id] == Leg::Rising {
            legs[hot_id] = Leg::Falling;
        }
        match legs[cold_id] {
            Leg::Falling => {
                per_identity[cold_id] += 1;
                legs[cold_id] = Leg::Rising;
            }
            Leg::Unanchored => legs[cold_id] = Leg::Rising,
            Leg::Rising => {}
        }
    }
    RoundTrips { per_identity }
}

/// Swap rates per adjacent pair and round trips per identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripStats {
    pub swap_rates: Vec<f64>,
    pub round_trips: RoundTrips,
}

pub fn swap_and_roundtrip_stats(trace: &crate::sampler::SampleTrace) -> RoundTripStats {
    let swap_rates = trace
        .swap_attempts
        .iter()
        .zip(&trace.swap_accepts)
        .map(|(&t, &a)| if t == 0 { 0.0 } else { a as f64 / t as f64 })
        .collect();
    RoundTripStats {
        swap_rates,
        round_trips: count_round_trips(&trace.identities, trace.chains),
    }
}

/// Mean with a normal-approximation 95% interval `mean +- 1.96 stderr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

pub fn mean_ci(values: &[f64]) -> MeanCi {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanCi {
            mean: f64::NAN,
            lo95: f64::NAN,
            hi95: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let half = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    };
    MeanCi {
        mean,
        lo95: mean - half,
        hi95: mean + half,
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}
