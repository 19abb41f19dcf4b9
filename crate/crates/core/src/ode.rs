//! ODE systems, fixed-step Runge–Kutta–Fehlberg integration, basis libraries
//! and parameter identification by sampling the reduced least-squares
//! posterior.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{Bounds, Domain, Polytope};
use crate::error::{Error, Result};
use crate::potentials::{Batch, LeastSquaresPotential, ReducedLeastSquares, Slots};
use crate::sampler::{run_sampler, SampleTrace, SamplerConfig};

/// Largest number of integration steps accepted.
pub const MAX_STEPS: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OdeSystem {
    Lorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
    },
    LotkaVolterra {
        alpha: f64,
        beta: f64,
        delta: f64,
        gamma: f64,
    },
}

impl OdeSystem {
    pub const LORENZ: OdeSystem = OdeSystem::Lorenz {
        sigma: 10.0,
        rho: 28.0,
        beta: 8.0 / 3.0,
    };

    pub const LOTKA_VOLTERRA: OdeSystem = OdeSystem::LotkaVolterra {
        alpha: 1.0,
        beta: 0.10,
        delta: 1.50,
        gamma: 0.075,
    };

    pub fn dim(&self) -> usize {
        match self {
            OdeSystem::Lorenz { .. } => 3,
            OdeSystem::LotkaVolterra { .. } => 2,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            OdeSystem::Lorenz { sigma, rho, beta } => vec![sigma, rho, beta],
            OdeSystem::LotkaVolterra {
                alpha,
                beta,
                delta,
                gamma,
            } => vec![alpha, beta, delta, gamma],
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            OdeSystem::Lorenz { .. } => &["sigma", "rho", "beta"],
            OdeSystem::LotkaVolterra { .. } => &["alpha", "beta", "delta", "gamma"],
        }
    }

    /// Same system kind with new parameter values, in [`Self::params`] order.
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let n = self.params().len();
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("system parameters"));
        }
        Ok(match self {
            OdeSystem::Lorenz { .. } => OdeSystem::Lorenz {
                sigma: p[0],
                rho: p[1],
                beta: p[2],
            },
            OdeSystem::LotkaVolterra { .. } => OdeSystem::LotkaVolterra {
                alpha: p[0],
                beta: p[1],
                delta: p[2],
                gamma: p[3],
            },
        })
    }

    pub fn rhs(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            OdeSystem::Lorenz { sigma, rho, beta } => {
                out.copy_from_slice(&lorenz_rhs([x[0], x[1], x[2]], [sigma, rho, beta]))
            }
            OdeSystem::LotkaVolterra {
                alpha,
                beta,
                delta,
                gamma,
            } => out.copy_from_slice(&lv_rhs([x[0], x[1]], [alpha, beta, delta, gamma])),
        }
    }

    pub fn basis(&self) -> Basis {
        match self {
            OdeSystem::Lorenz { .. } => Basis::Lorenz,
            OdeSystem::LotkaVolterra { .. } => Basis::LotkaVolterra,
        }
    }
}

/// `(sigma (y - x), x (rho - z) - y, x y - beta z)`.
pub fn lorenz_rhs(s: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = s;
    let [sigma, rho, beta] = p;
    [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
}

/// `(alpha x - beta x y, -delta y + gamma x y)`.
pub fn lv_rhs(s: [f64; 2], p: [f64; 4]) -> [f64; 2] {
    let [x, y] = s;
    let [alpha, beta, delta, gamma] = p;
    [alpha * x - beta * x * y, -delta * y + gamma * x * y]
}

/// Sampled solution with one row per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub velocities: DMatrix<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Replaces the velocities by central differences of the states
    /// (one-sided at the ends).
    pub fn with_difference_velocities(mut self) -> Result<Self> {
        let m = self.len();
        if m < 2 {
            return Err(Error::Shape(
                "need at least two samples to difference".into(),
            ));
        }
        for j in 0..self.states.ncols() {
            for i in 0..m {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(m - 1));
                self.velocities[(i, j)] =
                    (self.states[(b, j)] - self.states[(a, j)]) / (self.times[b] - self.times[a]);
            }
        }
        Ok(self)
    }

    /// CSV with columns `t, x.., xdot..`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let s = self.states.ncols();
        let names = state_names(s)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        header.extend(names.iter().map(|n| format!("{n}dot")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend((0..s).map(|j| self.states[(i, j)].to_string()));
            row.extend((0..s).map(|j| self.velocities[(i, j)].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let cols = r.headers()?.len();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return Err(Error::Shape(format!("trajectory CSV has {cols} columns")));
        }
        let s = (cols - 1) / 2;
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut vels = Vec::new();
        for rec in r.deserialize::<Vec<f64>>() {
            let rec = rec?;
            times.push(rec[0]);
            states.extend_from_slice(&rec[1..=s]);
            vels.extend_from_slice(&rec[s + 1..]);
        }
        let m = times.len();
        if m == 0 {
            return Err(Error::Shape("trajectory CSV has no rows".into()));
        }
        Ok(Self {
            times,
            states: DMatrix::from_row_slice(m, s, &states),
            velocities: DMatrix::from_row_slice(m, s, &vels),
        })
    }
}

fn state_names(s: usize) -> Result<&'static [&'static str]> {
    match s {
        2 => Ok(&["x", "y"]),
        3 => Ok(&["x", "y", "z"]),
        _ => Err(Error::Shape(format!("unsupported state dimension {s}"))),
    }
}

// Fehlberg 4(5) tableau; the fifth-order weights are used for propagation.
// Systems are autonomous, so the stage nodes are not needed.
const A: [[f64; 5]; 6] = [
    [0.0; 5],
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [
        -8.0 / 27.0,
        2.0,
        -3544.0 / 2565.0,
        1859.0 / 4104.0,
        -11.0 / 40.0,
    ],
];
const B: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];

/// Fixed-step six-stage fifth-order integration of the autonomous system
/// `x' = f(x)` from `t0` to `t1`. Velocities are `f` evaluated at each
/// stored state.
pub fn rk5_integrate<F>(f: F, x0: &[f64], t0: f64, t1: f64, h: f64) -> Result<Trajectory>
where
    F: Fn(&[f64], &mut [f64]),
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {h}"
        )));
    }
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need t0 <= t1, got {t0}, {t1}"
        )));
    }
    let steps_f = ((t1 - t0) / h).round();
    if steps_f > MAX_STEPS {
        return Err(Error::InvalidParameter(format!(
            "{steps_f} steps exceed the limit"
        )));
    }
    let n = steps_f as usize;
    let s = x0.len();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity((n + 1) * s);
    let mut vels = Vec::with_capacity((n + 1) * s);

    let mut x = x0.to_vec();
    let mut k = vec![vec![0.0; s]; 6];
    let mut tmp = vec![0.0; s];
    for i in 0..=n {
        let t = t0 + i as f64 * h;
        f(&x, &mut k[0]);
        if x.iter().chain(&k[0]).any(|v| !v.is_finite()) {
            return Err(Error::Integration { time: t });
        }
        times.push(t);
        states.extend_from_slice(&x);
        vels.extend_from_slice(&k[0]);
        if i == n {
            break;
        }
        for stage in 1..6 {
            for j in 0..s {
                let mut acc = x[j];
                for (prev, a) in A[stage][..stage].iter().enumerate() {
                    acc += h * a * k[prev][j];
                }
                tmp[j] = acc;
            }
            f(&tmp, &mut k[stage]);
        }
        for j in 0..s {
            x[j] += h * (0..6).map(|st| B[st] * k[st][j]).sum::<f64>();
        }
    }
    Ok(Trajectory {
        times,
        states: DMatrix::from_row_slice(n + 1, s, &states),
        velocities: DMatrix::from_row_slice(n + 1, s, &vels),
    })
}

/// Integrates `system` from `x0`.
pub fn integrate(system: &OdeSystem, x0: &[f64], t0: f64, t1: f64, h: f64) -> Result<Trajectory> {
    if x0.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: x0.len(),
        });
    }
    rk5_integrate(|x, out| system.rhs(x, out), x0, t0, t1, h)
}

/// Candidate basis library; column order is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `x, y, z, xy, xz`
    Lorenz,
    /// `x, y, xy`
    LotkaVolterra,
}

impl Basis {
    pub fn state_dim(self) -> usize {
        match self {
            Basis::Lorenz => 3,
            Basis::LotkaVolterra => 2,
        }
    }

    pub fn columns(self) -> usize {
        match self {
            Basis::Lorenz => 5,
            Basis::LotkaVolterra => 3,
        }
    }

    pub fn row(self, s: &[f64]) -> Vec<f64> {
        match self {
            Basis::Lorenz => vec![s[0], s[1], s[2], s[0] * s[1], s[0] * s[2]],
            Basis::LotkaVolterra => vec![s[0], s[1], s[0] * s[1]],
        }
    }
}

/// Basis evaluations, one row per trajectory sample.
pub fn build_theta(traj: &Trajectory, basis: Basis) -> Result<DMatrix<f64>> {
    let s = traj.states.ncols();
    if s != basis.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.state_dim(),
            got: s,
        });
    }
    let m = traj.len();
    let mut data = Vec::with_capacity(m * basis.columns());
    let mut row = vec![0.0; s];
    for i in 0..m {
        for (j, v) in row.iter_mut().enumerate() {
            *v = traj.states[(i, j)];
        }
        data.extend(basis.row(&row));
    }
    Ok(DMatrix::from_row_slice(m, basis.columns(), &data))
}

/// Exact coefficient matrix with `Xdot = Theta(X) beta`.
pub fn beta_matrix_truth(system: &OdeSystem) -> DMatrix<f64> {
    match *system {
        OdeSystem::Lorenz { sigma, rho, beta } => {
            let mut b = DMatrix::zeros(5, 3);
            b[(0, 0)] = -sigma;
            b[(1, 0)] = sigma;
            b[(0, 1)] = rho;
            b[(1, 1)] = -1.0;
            b[(4, 1)] = -1.0;
            b[(2, 2)] = -beta;
            b[(3, 2)] = 1.0;
            b
        }
        OdeSystem::LotkaVolterra {
            alpha,
            beta,
            delta,
            gamma,
        } => DMatrix::from_row_slice(3, 2, &[alpha, 0.0, 0.0, -delta, -beta, gamma]),
    }
}

/// Pinned part of the coefficient matrix and the slots driven by each free
/// parameter, in [`OdeSystem::params`] order.
pub fn reduced_parameterization(system: &OdeSystem) -> (DMatrix<f64>, Vec<Slots>) {
    match system {
        OdeSystem::Lorenz { .. } => {
            let mut base = DMatrix::zeros(5, 3);
            base[(1, 1)] = -1.0;
            base[(4, 1)] = -1.0;
            base[(3, 2)] = 1.0;
            let slots = vec![
                vec![(0, 0, -1.0), (1, 0, 1.0)],
                vec![(0, 1, 1.0)],
                vec![(2, 2, -1.0)],
            ];
            (base, slots)
        }
        OdeSystem::LotkaVolterra { .. } => {
            let slots = vec![
                vec![(0, 0, 1.0)],
                vec![(2, 0, -1.0)],
                vec![(1, 1, -1.0)],
                vec![(2, 1, 1.0)],
            ];
            (DMatrix::zeros(3, 2), slots)
        }
    }
}

/// Least-squares energy over the free parameters of `system` on `traj`.
pub fn reduced_problem(
    system: &OdeSystem,
    traj: &Trajectory,
    batch: Batch,
) -> Result<ReducedLeastSquares> {
    let theta = build_theta(traj, system.basis())?;
    let data = LeastSquaresPotential::new(&theta, &traj.velocities)?;
    let (base, slots) = reduced_parameterization(system);
    ReducedLeastSquares::new(data, &base, slots, batch)
}

/// Box caps on the free parameters of an identification run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub lower: f64,
    pub upper: f64,
    /// Include the physical Lorenz conditions `sigma > 1 + beta`, `rho > 1`.
    #[serde(default = "default_physics")]
    pub physics: bool,
}

fn default_physics() -> bool {
    true
}

impl ConstraintSpec {
    pub fn lorenz_default() -> Self {
        Self {
            lower: 0.0,
            upper: 50.0,
            physics: true,
        }
    }

    pub fn lotka_volterra_default() -> Self {
        Self {
            lower: 0.0,
            upper: 5.0,
            physics: true,
        }
    }

    pub fn default_for(system: &OdeSystem) -> Self {
        match system {
            OdeSystem::Lorenz { .. } => Self::lorenz_default(),
            OdeSystem::LotkaVolterra { .. } => Self::lotka_volterra_default(),
        }
    }
}

/// Constraint domain over the free parameters.
///
/// Lorenz `(sigma, rho, beta)`: `sigma - beta >= 1`, `rho >= 1` and the box
/// caps. Lotka–Volterra: the box caps only.
pub fn constraint_domain(system: &OdeSystem, spec: &ConstraintSpec) -> Result<Domain> {
    if !(spec.lower < spec.upper) {
        return Err(Error::InvalidDomain(format!(
            "constraint caps need lower < upper, got [{}, {}]",
            spec.lower, spec.upper
        )));
    }
    let d = system.params().len();
    match system {
        OdeSystem::Lorenz { .. } => {
            let mut normals = Vec::new();
            let mut offsets = Vec::new();
            for i in 0..d {
                let mut lo = vec![0.0; d];
                lo[i] = -1.0;
                normals.push(lo);
                offsets.push(-spec.lower);
                let mut hi = vec![0.0; d];
                hi[i] = 1.0;
                normals.push(hi);
                offsets.push(spec.upper);
            }
            if spec.physics {
                normals.push(vec![-1.0, 0.0, 1.0]);
                offsets.push(-1.0);
                normals.push(vec![0.0, -1.0, 0.0]);
                offsets.push(-1.0);
            }
            Ok(Domain::Halfspaces(Polytope::new(normals, offsets)?))
        }
        OdeSystem::LotkaVolterra { .. } => Ok(Domain::Box(Bounds::new(
            vec![spec.lower; d],
            vec![spec.upper; d],
        )?)),
    }
}

/// Runs `sampler` on the reduced least-squares posterior of `system` given
/// `traj`, reflecting into `constraint` when the sampler kind does.
pub fn identify(
    system: &OdeSystem,
    traj: &Trajectory,
    sampler: &SamplerConfig,
    batch: Batch,
    constraint: Option<&Domain>,
) -> Result<SampleTrace> {
    let problem = reduced_problem(system, traj, batch)?;
    run_sampler(sampler, &problem, constraint)
}

/// Integrates `system` with the estimated parameters.
pub fn simulate_from_mode(
    system: &OdeSystem,
    mode: &[f64],
    x0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<Trajectory> {
    integrate(&system.with_params(mode)?, x0, 0.0, horizon, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lorenz_rhs_values() {
        assert_eq!(lorenz_rhs([0.0; 3], [10.0, 28.0, 8.0 / 3.0]), [0.0; 3]);
        let v = lorenz_rhs([1.0, 1.0, 1.0], [10.0, 28.0, 8.0 / 3.0]);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 26.0);
        assert_abs_diff_eq!(v[2], 1.0 - 8.0 / 3.0, epsilon = 1e-15);
        let (b, r) = (8.0 / 3.0, 28.0);
        let e: f64 = (b * (r - 1.0f64)).sqrt();
        let v = lorenz_rhs([e, e, r - 1.0], [10.0, r, b]);
        for c in v {
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lv_rhs_values() {
        let p = [1.0, 0.10, 1.50, 0.075];
        assert_eq!(lv_rhs([0.0, 0.0], p), [0.0, 0.0]);
        let eq = lv_rhs([20.0, 10.0], p);
        assert_abs_diff_eq!(eq[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eq[1], 0.0, epsilon = 1e-12);
        let v = lv_rhs([1.0, 1.0], p);
        assert_abs_diff_eq!(v[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], -1.425, epsilon = 1e-15);
    }

    #[test]
    fn constant_solution() {
        let t = rk5_integrate(|_, out| out.fill(0.0), &[2.0, -1.0], 0.0, 1.0, 0.1).unwrap();
        assert_eq!(t.len(), 11);
        assert!(t.states.row_iter().all(|r| r[0] == 2.0 && r[1] == -1.0));
    }

    #[test]
    fn exponential_decay_accuracy() {
        let t = rk5_integrate(|x, out| out[0] = -x[0], &[1.0], 0.0, 1.0, 0.01).unwrap();
        assert_abs_diff_eq!(t.states[(100, 0)], (-1.0f64).exp(), epsilon = 1e-10);
        assert_abs_diff_eq!(*t.times.last().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn blow_up_reports_time() {
        let err = rk5_integrate(|x, out| out[0] = x[0] * x[0], &[1.0], 0.0, 2.0, 0.01).unwrap_err();
        match err {
            Error::Integration { time } => assert!(time > 0.9 && time < 1.1, "{time}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn theta_rows() {
        let traj = Trajectory {
            times: vec![0.0],
            states: DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]),
            velocities: DMatrix::zeros(1, 3),
        };
        let th = build_theta(&traj, Basis::Lorenz).unwrap();
        assert_eq!(
            th.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0, 2.0, 3.0]
        );
        assert!(build_theta(&traj, Basis::LotkaVolterra).is_err());
        let lv = Trajectory {
            times: vec![0.0, 1.0],
            states: DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 1.0, 1.0]),
            velocities: DMatrix::zeros(2, 2),
        };
        let th = build_theta(&lv, Basis::LotkaVolterra).unwrap();
        assert_eq!(
            th.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 4.0, 0.0]
        );
        assert_eq!(th.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0; 3]);
    }

    #[test]
    fn lv_truth_matrix() {
        let b = beta_matrix_truth(&OdeSystem::LOTKA_VOLTERRA);
        assert_eq!(
            b,
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, -1.5, -0.10, 0.075])
        );
    }

    #[test]
    fn reduced_map_reproduces_truth() {
        for sys in [OdeSystem::LORENZ, OdeSystem::LOTKA_VOLTERRA] {
            let x0: Vec<f64> = if sys.dim() == 3 {
                vec![1.0; 3]
            } else {
                vec![10.0, 5.0]
            };
            let traj = integrate(&sys, &x0, 0.0, 1.0, 0.01).unwrap();
            let p = reduced_problem(&sys, &traj, Batch::Full).unwrap();
            assert_eq!(p.expand(&sys.params()), beta_matrix_truth(&sys));
        }
    }

    #[test]
    fn lorenz_constraints() {
        let d = constraint_domain(&OdeSystem::LORENZ, &ConstraintSpec::lorenz_default()).unwrap();
        assert!(d.contains(&[10.0, 28.0, 8.0 / 3.0]).unwrap());
        assert!(!d.contains(&[2.0, 28.0, 3.0]).unwrap());
        assert!(!d.contains(&[10.0, 0.5, 1.0]).unwrap());
        assert!(!d.contains(&[10.0, 51.0, 1.0]).unwrap());
        assert_eq!(
            constraint_domain(
                &OdeSystem::LOTKA_VOLTERRA,
                &ConstraintSpec::lotka_volterra_default()
            )
            .unwrap()
            .dim(),
            4
        );
    }

    #[test]
    fn trajectory_csv_roundtrip() {
        let traj = integrate(&OdeSystem::LORENZ, &[1.0, 1.0, 1.0], 0.0, 0.05, 0.01).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,y,z,xdot,ydot,zdot\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn difference_velocities_track_rhs() {
        let traj = integrate(&OdeSystem::LOTKA_VOLTERRA, &[10.0, 5.0], 0.0, 5.0, 0.001).unwrap();
        let fd = traj.clone().with_difference_velocities().unwrap();
        let mid = traj.len() / 2;
        for j in 0..2 {
            assert_abs_diff_eq!(
                fd.velocities[(mid, j)],
                traj.velocities[(mid, j)],
                epsilon = 1e-4
            );
        }
    }
}
