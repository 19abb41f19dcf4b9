//! Energy functions `U` and their exact, minibatch and penalized gradients.
//!
//! Every target implements [`Potential`]. Stochastic targets draw their
//! minibatches from the generator passed by the caller, so evaluation stays
//! deterministic for a fixed stream.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};

/// Energy function on `R^d`, with target density proportional to `exp(-U / tau)`.
pub trait Potential: Sync {
    fn dim(&self) -> usize;

    /// Energy estimate at `x`. Exact targets ignore `rng`.
    fn energy<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64;

    /// Gradient estimate at `x`, written into `grad`.
    fn gradient<R: Rng + ?Sized>(&self, x: &[f64], grad: &mut [f64], rng: &mut R);
}

/// Isotropic Gaussian mixture with a shared variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    variance: f64,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, variance: f64, weights: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::InvalidParameter(
                "mixture needs at least one component".into(),
            ));
        }
        if means.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} means but {} weights",
                means.len(),
                weights.len()
            )));
        }
        let d = means[0].len();
        if d == 0
            || means
                .iter()
                .any(|m| m.len() != d || m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidParameter(
                "means must be finite and of equal dimension".into(),
            ));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "variance must be positive, got {variance}"
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "weights must be positive and sum to 1".into(),
            ));
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            means,
            variance,
            weights,
        })
    }

    /// Equal-weight mixture with modes on a `k x k` grid of pitch `pitch`
    /// centered at `center`.
    pub fn grid(k: usize, pitch: f64, variance: f64, center: [f64; 2]) -> Result<Self> {
        if k == 0 || !(pitch > 0.0) {
            return Err(Error::InvalidParameter(
                "grid needs k >= 1 and pitch > 0".into(),
            ));
        }
        let half = (k as f64 - 1.0) / 2.0;
        let mut means = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                means.push(vec![
                    center[0] + (i as f64 - half) * pitch,
                    center[1] + (j as f64 - half) * pitch,
                ]);
            }
        }
        let n = means.len();
        Self::new(means, variance, vec![1.0 / n as f64; n])
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `U(x) = -log sum_i w_i N(x; mu_i, sigma^2 I)`, via log-sum-exp.
    pub fn potential(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let log_norm = -0.5 * d * (std::f64::consts::TAU * self.variance).ln();
        let mut max = f64::NEG_INFINITY;
        let terms: Vec<f64> = self
            .means
            .iter()
            .zip(&self.log_weights)
            .map(|(m, lw)| {
                let t = lw - sq_dist(x, m) / (2.0 * self.variance);
                max = max.max(t);
                t
            })
            .collect();
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        -(log_norm + max + sum.ln())
    }

    /// Responsibility-weighted gradient `sum_i r_i(x) (x - mu_i) / sigma^2`.
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        let mut max = f64::NEG_INFINITY;
        let mut logits = Vec::with_capacity(self.means.len());
        for (m, lw) in self.means.iter().zip(&self.log_weights) {
            let t = lw - sq_dist(x, m) / (2.0 * self.variance);
            max = max.max(t);
            logits.push(t);
        }
        let mut total = 0.0;
        for t in logits.iter_mut() {
            *t = (*t - max).exp();
            total += *t;
        }
        out.iter_mut().for_each(|g| *g = 0.0);
        for (m, r) in self.means.iter().zip(&logits) {
            let r = r / total;
            for ((g, xi), mi) in out.iter_mut().zip(x).zip(m) {
                *g += r * (xi - mi) / self.variance;
            }
        }
    }
}

impl Potential for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn energy<R: Rng + ?Sized>(&self, x: &[f64], _rng: &mut R) -> f64 {
        self.potential(x)
    }

    fn gradient<R: Rng + ?Sized>(&self, x: &[f64], grad: &mut [f64], _rng: &mut R) {
        self.grad(x, grad)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Separable double well `U(x) = sum_i (x_i^2 - 1)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWell {
    pub dim: usize,
}

impl Potential for DoubleWell {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy<R: Rng + ?Sized>(&self, x: &[f64], _rng: &mut R) -> f64 {
        x.iter().map(|v| (v * v - 1.0).powi(2)).sum()
    }

    fn gradient<R: Rng + ?Sized>(&self, x: &[f64], grad: &mut [f64], _rng: &mut R) {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = 4.0 * v * (v * v - 1.0);
        }
    }
}

/// Isotropic quadratic `U(x) = |x|^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub dim: usize,
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy<R: Rng + ?Sized>(&self, x: &[f64], _rng: &mut R) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient<R: Rng + ?Sized>(&self, x: &[f64], grad: &mut [f64], _rng: &mut R) {
        grad.copy_from_slice(x);
    }
}

/// Constant energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flat {
    pub dim: usize,
}

impl Potential for Flat {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy<R: Rng + ?Sized>(&self, _x: &[f64], _rng: &mut R) -> f64 {
        0.0
    }

    fn gradient<R: Rng + ?Sized>(&self, _x: &[f64], grad: &mut [f64], _rng: &mut R) {
        grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Row selection for least-squares gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    Full,
    /// Rows drawn uniformly without replacement; clamped to the row count.
    Minibatch(usize),
}

/// Mean squared residual `(1/2m) |Theta beta - Xdot|_F^2` of a linear
/// regression of state velocities on a basis library.
///
/// Data are kept row-major so minibatches touch contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresPotential {
    rows: usize,
    basis: usize,
    states: usize,
    theta: Vec<f64>,
    xdot: Vec<f64>,
}

impl LeastSquaresPotential {
    pub fn new(theta: &DMatrix<f64>, xdot: &DMatrix<f64>) -> Result<Self> {
        if theta.nrows() != xdot.nrows() {
            return Err(Error::Shape(format!(
                "theta has {} rows, xdot has {}",
                theta.nrows(),
                xdot.nrows()
            )));
        }
        if theta.nrows() == 0 || theta.ncols() == 0 || xdot.ncols() == 0 {
            return Err(Error::Shape("empty least-squares data".into()));
        }
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        Ok(Self {
            rows: theta.nrows(),
            basis: theta.ncols(),
            states: xdot.ncols(),
            theta: row_major(theta),
            xdot: row_major(xdot),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn basis_count(&self) -> usize {
        self.basis
    }

    pub fn state_dim(&self) -> usize {
        self.states
    }

    pub fn theta(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.basis, &self.theta)
    }

    pub fn xdot(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.states, &self.xdot)
    }

    fn select<R: Rng + ?Sized>(&self, batch: Batch, rng: &mut R) -> Option<Vec<usize>> {
        match batch {
            Batch::Full => None,
            Batch::Minibatch(b) if b >= self.rows => None,
            Batch::Minibatch(b) => Some(index::sample(rng, self.rows, b.max(1)).into_vec()),
        }
    }

    fn check_beta(&self, beta: &DMatrix<f64>) -> Result<()> {
        if beta.shape() != (self.basis, self.states) {
            return Err(Error::Shape(format!(
                "beta is {:?}, expected ({}, {})",
                beta.shape(),
                self.basis,
                self.states
            )));
        }
        Ok(())
    }

    /// `(1/|B|) Theta_B^T (Theta_B beta - Xdot_B)` over the selected rows.
    pub fn grad<R: Rng + ?Sized>(
        &self,
        beta: &DMatrix<f64>,
        batch: Batch,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        self.check_beta(beta)?;
        let b = beta.transpose().as_slice().to_vec();
        let mut g = vec![0.0; self.basis * self.states];
        self.accumulate(&b, self.select(batch, rng).as_deref(), Some(&mut g));
        Ok(DMatrix::from_row_slice(self.basis, self.states, &g))
    }

    /// Gradient over an explicit row subset (duplicates count repeatedly).
    pub fn grad_rows(&self, beta: &DMatrix<f64>, rows: &[usize]) -> Result<DMatrix<f64>> {
        self.check_beta(beta)?;
        if rows.is_empty() || rows.iter().any(|&r| r >= self.rows) {
            return Err(Error::Shape(format!(
                "row subset must be non-empty and below {}",
                self.rows
            )));
        }
        let b = beta.transpose().as_slice().to_vec();
        let mut g = vec![0.0; self.basis * self.states];
        self.accumulate(&b, Some(rows), Some(&mut g));
        Ok(DMatrix::from_row_slice(self.basis, self.states, &g))
    }

    /// Mean squared residual energy over the selected rows.
    pub fn energy_at<R: Rng + ?Sized>(
        &self,
        beta: &DMatrix<f64>,
        batch: Batch,
        rng: &mut R,
    ) -> Result<f64> {
        self.check_beta(beta)?;
        let b = beta.transpose().as_slice().to_vec();
        Ok(self.accumulate(&b, self.select(batch, rng).as_deref(), None))
    }

    /// Core loop over rows. `beta` is row-major `basis x states`. Returns the
    /// energy and, when `grad` is given, writes the gradient (row-major).
    fn accumulate(&self, beta: &[f64], rows: Option<&[usize]>, grad: Option<&mut [f64]>) -> f64 {
        match (self.basis, self.states) {
            (5, 3) => self.accumulate_fixed::<5, 3>(beta, rows, grad),
            (3, 2) => self.accumulate_fixed::<3, 2>(beta, rows, grad),
            _ => self.accumulate_dyn(beta, rows, grad),
        }
    }

    /// Fixed-size kernel for the Lorenz and Lotka–Volterra libraries.
    fn accumulate_fixed<const Q: usize, const S: usize>(
        &self,
        beta: &[f64],
        rows: Option<&[usize]>,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let mut b = [[0.0; Q]; S];
        for k in 0..Q {
            for j in 0..S {
                b[j][k] = beta[k * S + j];
            }
        }
        let theta: &[[f64; Q]] = self.theta.as_chunks::<Q>().0;
        let xdot: &[[f64; S]] = self.xdot.as_chunks::<S>().0;
        let mut g = [[0.0; S]; Q];
        let mut sq = 0.0;
        let want_grad = grad.is_some();
        let mut visit = |r: usize| {
            let th = &theta[r];
            let xd = &xdot[r];
            let mut res = [0.0; S];
            for j in 0..S {
                let mut acc = -xd[j];
                for k in 0..Q {
                    acc += th[k] * b[j][k];
                }
                res[j] = acc;
                sq += acc * acc;
            }
            if want_grad {
                for k in 0..Q {
                    for j in 0..S {
                        g[k][j] += th[k] * res[j];
                    }
                }
            }
        };
        let n = match rows {
            Some(idx) => {
                for &r in idx {
                    visit(r);
                }
                idx.len()
            }
            None => {
                for r in 0..self.rows {
                    visit(r);
                }
                self.rows
            }
        };
        let inv = 1.0 / n as f64;
        if let Some(out) = grad {
            for k in 0..Q {
                for j in 0..S {
                    out[k * S + j] = g[k][j] * inv;
                }
            }
        }
        0.5 * sq * inv
    }

    fn accumulate_dyn(
        &self,
        beta: &[f64],
        rows: Option<&[usize]>,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let (q, s) = (self.basis, self.states);
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut resid = vec![0.0; s];
        let mut sq = 0.0;
        let mut visit = |r: usize| {
            let th = &self.theta[r * q..(r + 1) * q];
            let xd = &self.xdot[r * s..(r + 1) * s];
            for (j, res) in resid.iter_mut().enumerate() {
                let mut acc = -xd[j];
                for (k, t) in th.iter().enumerate() {
                    acc += t * beta[k * s + j];
                }
                *res = acc;
                sq += acc * acc;
            }
            if let Some(g) = grad.as_deref_mut() {
                for (k, t) in th.iter().enumerate() {
                    for (j, res) in resid.iter().enumerate() {
                        g[k * s + j] += t * res;
                    }
                }
            }
        };
        let n = match rows {
            Some(idx) => {
                idx.iter().for_each(|&r| visit(r));
                idx.len()
            }
            None => {
                (0..self.rows).for_each(&mut visit);
                self.rows
            }
        };
        let inv = 1.0 / n as f64;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v *= inv);
        }
        0.5 * sq * inv
    }
}

/// One free scalar of a pinned coefficient matrix: the `(row, col, coef)`
/// entries it drives.
pub type Slots = Vec<(usize, usize, f64)>;

/// Least-squares energy over a reduced parameter vector `p`, where the full
/// coefficient matrix is `beta(p) = base + sum_j p_j E_j` with sparse `E_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLeastSquares {
    data: LeastSquaresPotential,
    base: Vec<f64>,
    slots: Vec<Slots>,
    batch: Batch,
}

impl ReducedLeastSquares {
    pub fn new(
        data: LeastSquaresPotential,
        base: &DMatrix<f64>,
        slots: Vec<Slots>,
        batch: Batch,
    ) -> Result<Self> {
        data.check_beta(base)?;
        for (r, c, _) in slots.iter().flatten() {
            if *r >= data.basis || *c >= data.states {
                return Err(Error::Shape(format!(
                    "slot ({r}, {c}) outside coefficient matrix"
                )));
            }
        }
        Ok(Self {
            base: base.transpose().as_slice().to_vec(),
            data,
            slots,
            batch,
        })
    }

    pub fn data(&self) -> &LeastSquaresPotential {
        &self.data
    }

    /// Full coefficient matrix for reduced parameters `p`.
    pub fn expand(&self, p: &[f64]) -> DMatrix<f64> {
        let b = self.expand_row_major(p);
        DMatrix::from_row_slice(self.data.basis, self.data.states, &b)
    }

    fn expand_row_major(&self, p: &[f64]) -> Vec<f64> {
        let mut b = self.base.clone();
        for (v, slots) in p.iter().zip(&self.slots) {
            for &(r, c, coef) in slots {
                b[r * self.data.states + c] += coef * v;
            }
        }
        b
    }
}

impl Potential for ReducedLeastSquares {
    fn dim(&self) -> usize {
        self.slots.len()
    }

    fn energy<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let b = self.expand_row_major(x);
        let rows = self.data.select(self.batch, rng);
        self.data.accumulate(&b, rows.as_deref(), None)
    }

    fn gradient<R: Rng + ?Sized>(&self, x: &[f64], grad: &mut [f64], rng: &mut R) {
        let b = self.expand_row_major(x);
        let rows = self.data.select(self.batch, rng);
        let mut full = vec![0.0; b.len()];
        self.data.accumulate(&b, rows.as_deref(), Some(&mut full));
        for (g, slots) in grad.iter_mut().zip(&self.slots) {
            *g = slots
                .iter()
                .map(|&(r, c, coef)| coef * full[r * self.data.states + c])
                .sum();
        }
    }
}

/// Shrinkage coefficient applied outside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub xi: f64,
}

/// `grad` inside the domain, `grad + xi * x` outside it.
pub fn penalized_grad(
    grad: &[f64],
    x: &[f64],
    domain: &Domain,
    pen: PenaltySpec,
) -> Result<Vec<f64>> {
    if grad.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: grad.len(),
        });
    }
    if domain.contains(x)? {
        return Ok(grad.to_vec());
    }
    Ok(grad.iter().zip(x).map(|(g, v)| g + pen.xi * v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Bounds;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn symmetric_pair(a: f64) -> GaussianMixture {
        GaussianMixture::new(vec![vec![a, 0.0], vec![-a, 0.0]], 0.5, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn standard_normal_potential_at_mean() {
        let g = GaussianMixture::new(vec![vec![0.0, 0.0]], 1.0, vec![1.0]).unwrap();
        assert_abs_diff_eq!(
            g.potential(&[0.0, 0.0]),
            std::f64::consts::TAU.ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn symmetric_mixture_is_even() {
        let g = symmetric_pair(1.5);
        for x in [[0.3, 0.7], [2.0, -1.0], [-0.1, 0.0]] {
            let neg = [-x[0], -x[1]];
            assert_abs_diff_eq!(g.potential(&x), g.potential(&neg), epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_stationary_points() {
        let single = GaussianMixture::new(vec![vec![1.0, -2.0]], 0.3, vec![1.0]).unwrap();
        let mut g = [9.0; 2];
        single.grad(&[1.0, -2.0], &mut g);
        assert_eq!(g, [0.0, 0.0]);
        symmetric_pair(1.0).grad(&[0.0, 0.0], &mut g);
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn potential_is_finite_far_from_sharp_modes() {
        let g = GaussianMixture::grid(5, 1.0, 0.02, [0.0, 0.0]).unwrap();
        for x in [[1e3, 0.0], [-7e2, 7e2], [0.0, -1e3]] {
            assert!(g.potential(&x).is_finite());
            let mut grad = [0.0; 2];
            g.grad(&x, &mut grad);
            assert!(grad.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixture::new(vec![], 1.0, vec![]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0]], 0.0, vec![1.0]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0], vec![1.0]], 1.0, vec![0.7, 0.7]).is_err());
        assert!(
            GaussianMixture::new(vec![vec![0.0], vec![1.0, 2.0]], 1.0, vec![0.5, 0.5]).is_err()
        );
    }

    #[test]
    fn lsq_grad_identity_design() {
        let m = 4;
        let theta = DMatrix::<f64>::identity(m, m);
        let xdot = DMatrix::<f64>::zeros(m, m);
        let pot = LeastSquaresPotential::new(&theta, &xdot).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = pot
            .grad(&DMatrix::identity(m, m), Batch::Full, &mut rng)
            .unwrap();
        assert_abs_diff_eq!(g, DMatrix::identity(m, m) / m as f64, epsilon = 1e-15);
    }

    #[test]
    fn lsq_shape_errors() {
        let theta = DMatrix::<f64>::zeros(3, 2);
        assert!(LeastSquaresPotential::new(&theta, &DMatrix::zeros(4, 1)).is_err());
        let pot = LeastSquaresPotential::new(&theta, &DMatrix::zeros(3, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pot
            .grad(&DMatrix::zeros(3, 1), Batch::Full, &mut rng)
            .is_err());
    }

    #[test]
    fn oversized_minibatch_is_full_batch() {
        let theta = DMatrix::from_fn(6, 2, |r, c| (r * 2 + c) as f64 * 0.1);
        let xdot = DMatrix::from_fn(6, 1, |r, _| r as f64);
        let pot = LeastSquaresPotential::new(&theta, &xdot).unwrap();
        let beta = DMatrix::from_element(2, 1, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let full = pot.grad(&beta, Batch::Full, &mut rng).unwrap();
        let big = pot.grad(&beta, Batch::Minibatch(100), &mut rng).unwrap();
        assert_eq!(full, big);
    }

    #[test]
    fn penalty_branches() {
        let dom = Domain::Box(Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap());
        let pen = PenaltySpec { xi: 0.5 };
        assert_eq!(
            penalized_grad(&[1.0, 1.0], &[0.2, 0.1], &dom, pen).unwrap(),
            vec![1.0, 1.0]
        );
        let zero = PenaltySpec { xi: 0.0 };
        assert_eq!(
            penalized_grad(&[1.0, 1.0], &[2.0, 0.0], &dom, zero).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(
            penalized_grad(&[1.0, 1.0], &[2.0, 0.0], &dom, pen).unwrap(),
            vec![2.0, 1.0]
        );
    }
}
