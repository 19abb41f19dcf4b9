//! Config-driven experiments: parsing, seeded execution across worker
//! threads, aggregation, and CSV/JSON outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    build_boundary, write_polyline_csv, BoundaryKind, BoundarySpec, Bounds, Domain,
};
use crate::error::{Error, Result};
use crate::metrics::{
    histogram_1d, kl_divergence, mean_ci, posterior_mode, reference_grid, spearman,
    swap_and_roundtrip_stats, total_variation, Histogram2D, MeanCi, ReferenceGrid, DEFAULT_GRID,
    DEFAULT_KL_EPS,
};
use crate::ode::{constraint_domain, integrate, reduced_problem, ConstraintSpec, OdeSystem};
use crate::potentials::{Batch, DoubleWell, GaussianMixture, Potential};
use crate::sampler::{run_sampler, SampleTrace, SamplerConfig};

/// Environment variable consulted when no explicit job count is given.
pub const THREADS_ENV: &str = "REFLEXMC_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Multimodal,
    DiameterSweep,
    IdentifyLorenz,
    IdentifyLv,
    StationarityCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Multimodal => "multimodal",
            Experiment::DiameterSweep => "diameter_sweep",
            Experiment::IdentifyLorenz => "identify_lorenz",
            Experiment::IdentifyLv => "identify_lv",
            Experiment::StationarityCheck => "stationarity_check",
        }
    }
}

/// Where the samplers live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// Planar region bounded by a parametric curve. In a diameter sweep the
    /// kind must be a regular polygon whose circumradius is set per diameter.
    Boundary(BoundarySpec),
    /// Parameter constraints of an identification run.
    Constraints(ConstraintSpec),
    /// One-dimensional interval `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
}

/// 5x5-style grid mixture. Unset fields are filled when the config is parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    #[serde(default = "default_modes")]
    pub modes_per_side: usize,
    /// Defaults to `0.2 * diameter` of the domain, or to `extent / (k - 1)`
    /// with a 5.0 extent in a diameter sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch: Option<f64>,
    /// Defaults to `(pitch / 8)^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    /// Defaults to the boundary center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
}

fn default_modes() -> usize {
    5
}

/// Sweep targets span this width when no pitch is configured.
pub const SWEEP_TARGET_EXTENT: f64 = 5.0;

/// Data generation and minibatching for an identification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSpec {
    pub system: OdeSystem,
    /// Defaults to `(1, 1, 1)` for Lorenz and `(10, 5)` for Lotka–Volterra.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Rows per stochastic gradient; `None` uses the full data set.
    #[serde(default = "default_batch")]
    pub batch_size: Option<usize>,
}

fn default_t_end() -> f64 {
    100.0
}

fn default_step() -> f64 {
    0.01
}

fn default_batch() -> Option<usize> {
    Some(4096)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gmm(GmmSpec),
    Ode(OdeSpec),
    /// `U(x) = (x^2 - 1)^2` in one dimension.
    DoubleWell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    /// Cells per axis of the KL grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_eps")]
    pub kl_eps: f64,
    /// Points on each KL curve.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Bins of the stationarity histogram.
    #[serde(default = "default_tv_bins")]
    pub tv_bins: usize,
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

fn default_eps() -> f64 {
    DEFAULT_KL_EPS
}

fn default_checkpoints() -> usize {
    10
}

fn default_tv_bins() -> usize {
    200
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            kl_eps: default_eps(),
            checkpoints: default_checkpoints(),
            tv_bins: default_tv_bins(),
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_diameters() -> Vec<f64> {
    vec![1.5, 2.0, 2.5, 3.0]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Primary method.
    pub sampler: SamplerConfig,
    /// Further methods run on the same seeds, target and domain.
    #[serde(default)]
    pub baselines: Vec<SamplerConfig>,
    pub domain: DomainSpec,
    pub target: TargetSpec,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub metrics: MetricsSpec,
    /// Domain diameters of a sweep; ignored by other experiments.
    #[serde(default = "default_diameters")]
    pub diameters: Vec<f64>,
    #[serde(default = "yes")]
    pub write_traces: bool,
}

/// Parses, fills defaults and validates a JSON experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    config.resolve()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::config(
            path.display().to_string(),
            format!("cannot read config: {e}"),
        )
    })?;
    parse_config(&text)
}

fn nest(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        other => Error::config(prefix, other.to_string()),
    }
}

impl ExperimentConfig {
    /// All methods in run order: the primary sampler, then the baselines.
    pub fn methods(&self) -> Vec<&SamplerConfig> {
        std::iter::once(&self.sampler)
            .chain(&self.baselines)
            .collect()
    }

    /// Fills derived defaults, then validates.
    pub fn resolve(&mut self) -> Result<()> {
        self.validate_shape()?;
        match &mut self.target {
            TargetSpec::Gmm(g) => {
                let DomainSpec::Boundary(b) = &self.domain else {
                    unreachable!("checked by validate_shape")
                };
                if g.modes_per_side == 0 {
                    return Err(Error::config(
                        "target.gmm.modes_per_side",
                        "must be at least 1",
                    ));
                }
                if g.pitch.is_none() {
                    g.pitch = Some(match self.experiment {
                        Experiment::DiameterSweep => {
                            SWEEP_TARGET_EXTENT / (g.modes_per_side.max(2) - 1) as f64
                        }
                        _ => {
                            0.2 * build_boundary(b)
                                .map_err(|e| nest("domain.boundary", e))?
                                .diameter()
                        }
                    });
                }
                let pitch = g.pitch.unwrap_or_default();
                if !(pitch > 0.0 && pitch.is_finite()) {
                    return Err(Error::config(
                        "target.gmm.pitch",
                        format!("must be positive, got {pitch}"),
                    ));
                }
                g.variance.get_or_insert((pitch / 8.0).powi(2));
                g.center.get_or_insert(b.center);
            }
            TargetSpec::Ode(o) => {
                if o.x0.is_none() {
                    o.x0 = Some(match o.system {
                        OdeSystem::Lorenz { .. } => vec![1.0, 1.0, 1.0],
                        OdeSystem::LotkaVolterra { .. } => vec![10.0, 5.0],
                    });
                }
            }
            TargetSpec::DoubleWell => {}
        }
        for s in std::iter::once(&mut self.sampler).chain(&mut self.baselines) {
            s.burn_in.get_or_insert(s.iterations / 5);
        }
        self.validate()
    }

    fn validate_shape(&self) -> Result<()> {
        let (target_ok, domain_ok) = match self.experiment {
            Experiment::Multimodal | Experiment::DiameterSweep => (
                matches!(self.target, TargetSpec::Gmm(_)),
                matches!(self.domain, DomainSpec::Boundary(_)),
            ),
            Experiment::IdentifyLorenz => (
                matches!(&self.target, TargetSpec::Ode(o) if matches!(o.system, OdeSystem::Lorenz { .. })),
                matches!(self.domain, DomainSpec::Constraints(_)),
            ),
            Experiment::IdentifyLv => (
                matches!(&self.target, TargetSpec::Ode(o) if matches!(o.system, OdeSystem::LotkaVolterra { .. })),
                matches!(self.domain, DomainSpec::Constraints(_)),
            ),
            Experiment::StationarityCheck => (
                matches!(self.target, TargetSpec::DoubleWell),
                matches!(self.domain, DomainSpec::Interval { .. }),
            ),
        };
        let name = self.experiment.name();
        if !target_ok {
            return Err(Error::config(
                "target",
                format!("target does not fit experiment {name}"),
            ));
        }
        if !domain_ok {
            return Err(Error::config(
                "domain",
                format!("domain does not fit experiment {name}"),
            ));
        }
        Ok(())
    }

    /// Checks every nested spec, reporting the offending key path.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        let dim = self.dim();
        for (i, s) in self.methods().into_iter().enumerate() {
            let prefix = if i == 0 {
                "sampler".to_string()
            } else {
                format!("baselines[{}]", i - 1)
            };
            s.validate().map_err(|e| nest(&prefix, e))?;
            if let Some(x) = &s.init {
                if x.len() != dim {
                    return Err(Error::config(
                        format!("{prefix}.init"),
                        format!("expected {dim} coordinates, got {}", x.len()),
                    ));
                }
            }
        }
        match &self.domain {
            DomainSpec::Boundary(b) => {
                b.validate().map_err(|e| nest("domain.boundary", e))?;
                if self.experiment == Experiment::DiameterSweep {
                    if !matches!(b.kind, BoundaryKind::RegularPolygon { .. }) {
                        return Err(Error::config(
                            "domain.boundary.kind",
                            "a diameter sweep needs a regular_polygon boundary",
                        ));
                    }
                    if self.diameters.is_empty() {
                        return Err(Error::config("diameters", "need at least one diameter"));
                    }
                    for (i, d) in self.diameters.iter().enumerate() {
                        if !(*d > 0.0 && d.is_finite()) {
                            return Err(Error::config(
                                format!("diameters[{i}]"),
                                format!("must be positive, got {d}"),
                            ));
                        }
                    }
                }
            }
            DomainSpec::Constraints(c) => {
                if let TargetSpec::Ode(o) = &self.target {
                    constraint_domain(&o.system, c).map_err(|e| nest("domain.constraints", e))?;
                }
            }
            DomainSpec::Interval { lo, hi } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::config(
                        "domain.interval",
                        format!("need lo < hi, got [{lo}, {hi}]"),
                    ));
                }
            }
        }
        match &self.target {
            TargetSpec::Gmm(g) => {
                if let Some(v) = g.variance {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::config(
                            "target.gmm.variance",
                            format!("must be positive, got {v}"),
                        ));
                    }
                }
            }
            TargetSpec::Ode(o) => {
                if let Some(x0) = &o.x0 {
                    if x0.len() != o.system.dim() {
                        return Err(Error::config(
                            "target.ode.x0",
                            format!("expected {} coordinates, got {}", o.system.dim(), x0.len()),
                        ));
                    }
                }
                if !(o.step > 0.0 && o.t_end > o.step) {
                    return Err(Error::config("target.ode", "need 0 < step < t_end"));
                }
                if o.batch_size == Some(0) {
                    return Err(Error::config("target.ode.batch_size", "must be at least 1"));
                }
            }
            TargetSpec::DoubleWell => {}
        }
        let m = &self.metrics;
        if m.grid == 0 || m.checkpoints == 0 || m.tv_bins == 0 {
            return Err(Error::config(
                "metrics",
                "grid, checkpoints and tv_bins must be positive",
            ));
        }
        if !(m.kl_eps > 0.0) {
            return Err(Error::config("metrics.kl_eps", "must be positive"));
        }
        Ok(())
    }

    /// Dimension of the sampled variable.
    pub fn dim(&self) -> usize {
        match &self.target {
            TargetSpec::Gmm(_) => 2,
            TargetSpec::Ode(o) => o.system.params().len(),
            TargetSpec::DoubleWell => 1,
        }
    }
}

/// Job count from the flag, then [`THREADS_ENV`], then the core count.
pub fn resolve_jobs(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
    })
    .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
    .unwrap_or(1)
    .max(1)
}

/// Metrics of one (method, seed[, diameter]) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedMetrics {
    pub method: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
    pub samples: usize,
    /// Recorded samples lying outside the domain.
    pub outside_domain: usize,
    pub swap_rate: f64,
    pub swap_rates: Vec<f64>,
    pub round_trips: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
}

impl SeedMetrics {
    pub fn summary_line(&self) -> String {
        let mut line = format!("{} seed={}", self.method, self.seed);
        if let Some(d) = self.diameter {
            line += &format!(" diameter={d}");
        }
        line += &format!(" samples={} swap_rate={:.4}", self.samples, self.swap_rate);
        if self.round_trips > 0 {
            line += &format!(" round_trips={}", self.round_trips);
        }
        if let Some(kl) = self.final_kl {
            line += &format!(" kl={kl:.5}");
        }
        if let Some(m) = &self.modes {
            let parts: Vec<String> = m.iter().map(|v| format!("{v:.5}")).collect();
            line += &format!(" modes=[{}]", parts.join(", "));
        }
        if let Some(e) = self.max_rel_error {
            line += &format!(" max_rel_error={e:.4}");
        }
        if let Some(tv) = self.tv {
            line += &format!(" tv={tv:.5}");
        }
        if self.outside_domain > 0 {
            line += &format!(" outside={}", self.outside_domain);
        }
        line
    }
}

/// Per-method aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
    pub seeds: usize,
    pub swap_rate: MeanCi,
    pub round_trips: MeanCi,
    pub outside_domain: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_kl: Option<MeanCi>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<MeanCi>>,
    /// Relative error of the seed-averaged modes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_mode_rel_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rel_error: Option<MeanCi>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<MeanCi>,
}

/// Monotone-trend statistic of a diameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendStat {
    pub diameters: Vec<f64>,
    pub kl_means: Vec<f64>,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub experiment: Experiment,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    pub runs: Vec<SeedMetrics>,
    pub summary: Vec<MethodSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trend: Option<TrendStat>,
}

impl RunResult {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|m| m.method == label)
    }
}

/// One row of the KL-curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlPoint {
    pub sample_budget: u64,
    pub kl_mean: f64,
    pub kl_lo95: f64,
    pub kl_hi95: f64,
    pub method: String,
}

/// Trace and metrics of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: SeedMetrics,
    /// `(gradient evaluations, KL)` at each checkpoint.
    pub kl_curve: Vec<(u64, f64)>,
    /// Kept only when the config asks for trace files.
    pub trace: Option<SampleTrace>,
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub result: RunResult,
    pub runs: Vec<RunOutput>,
    pub kl_curves: Vec<KlPoint>,
    /// Boundary polylines keyed by diameter (`None` for a single domain).
    pub boundaries: Vec<(Option<f64>, Vec<[f64; 2]>)>,
}

fn method_labels(config: &ExperimentConfig) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for s in config.methods() {
        let base = s.kind.label().to_string();
        let n = labels
            .iter()
            .filter(|l| l.split('#').next() == Some(base.as_str()))
            .count();
        labels.push(if n == 0 {
            base
        } else {
            format!("{base}#{}", n + 1)
        });
    }
    labels
}

/// Diameter, domain, reference grid and boundary polyline.
type PreparedDomain = (Option<f64>, Domain, ReferenceGrid, Vec<[f64; 2]>);

/// Shared, seed-independent problem data.
enum Prepared {
    Gmm {
        gmm: GaussianMixture,
        /// One domain (and its reference grid) per diameter, or a single one.
        domains: Vec<PreparedDomain>,
    },
    Ode {
        problem: crate::potentials::ReducedLeastSquares,
        domain: Domain,
        truth: Vec<f64>,
    },
    Interval {
        domain: Domain,
        lo: f64,
        hi: f64,
    },
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    match (&config.target, &config.domain) {
        (TargetSpec::Gmm(g), DomainSpec::Boundary(b)) => {
            let center = g.center.unwrap_or(b.center);
            let pitch = g
                .pitch
                .ok_or_else(|| Error::config("target.gmm.pitch", "unresolved"))?;
            let variance = g.variance.unwrap_or((pitch / 8.0).powi(2));
            let gmm = GaussianMixture::grid(g.modes_per_side, pitch, variance, center)?;
            let specs: Vec<(Option<f64>, BoundarySpec)> = if config.experiment
                == Experiment::DiameterSweep
            {
                config
                    .diameters
                    .iter()
                    .map(|&d| {
                        let mut spec = b.clone();
                        if let BoundaryKind::RegularPolygon { circumradius, .. } = &mut spec.kind {
                            *circumradius = d / (2.0 * spec.scale);
                        }
                        (Some(d), spec)
                    })
                    .collect()
            } else {
                vec![(None, b.clone())]
            };
            let mut domains = Vec::with_capacity(specs.len());
            for (d, spec) in specs {
                let domain = build_boundary(&spec)?;
                let reference =
                    reference_grid(&gmm, &domain, config.metrics.grid, config.metrics.grid)?;
                domains.push((d, domain, reference, spec.polyline()?.vertices));
            }
            Ok(Prepared::Gmm { gmm, domains })
        }
        (TargetSpec::Ode(o), DomainSpec::Constraints(c)) => {
            let x0 = o.x0.clone().unwrap_or_else(|| vec![1.0; o.system.dim()]);
            let traj = integrate(&o.system, &x0, 0.0, o.t_end, o.step)?;
            let batch = o.batch_size.map_or(Batch::Full, Batch::Minibatch);
            Ok(Prepared::Ode {
                problem: reduced_problem(&o.system, &traj, batch)?,
                domain: constraint_domain(&o.system, c)?,
                truth: o.system.params(),
            })
        }
        (TargetSpec::DoubleWell, DomainSpec::Interval { lo, hi }) => Ok(Prepared::Interval {
            domain: Domain::Box(Bounds::new(vec![*lo], vec![*hi])?),
            lo: *lo,
            hi: *hi,
        }),
        _ => Err(Error::config(
            "target",
            "target and domain do not fit together",
        )),
    }
}

struct Job<'a> {
    label: &'a str,
    sampler: &'a SamplerConfig,
    seed: u64,
    /// Index into the prepared domain list (diameter sweeps).
    domain: usize,
}

fn count_outside(trace: &SampleTrace, domain: &Domain) -> usize {
    trace
        .iter()
        .filter(|x| !domain.contains(x).unwrap_or(false))
        .count()
}

fn base_metrics(
    job: &Job,
    trace: &SampleTrace,
    domain: &Domain,
    diameter: Option<f64>,
) -> SeedMetrics {
    let stats = swap_and_roundtrip_stats(trace);
    SeedMetrics {
        method: job.label.to_string(),
        seed: job.seed,
        diameter,
        samples: trace.len(),
        outside_domain: count_outside(trace, domain),
        swap_rate: trace.swap_rate(),
        swap_rates: stats.swap_rates,
        round_trips: stats.round_trips.total(),
        final_kl: None,
        modes: None,
        rel_errors: None,
        max_rel_error: None,
        tv: None,
    }
}

fn checkpoints(n: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=count)
        .map(|j| (n * j).div_ceil(count))
        .filter(|&c| c > 0)
        .collect();
    out.dedup();
    out
}

fn run_job(config: &ExperimentConfig, prepared: &Prepared, job: &Job) -> Result<RunOutput> {
    let mut sampler = job.sampler.clone();
    sampler.seed = job.seed;
    let m = &config.metrics;
    let (trace, metrics, kl_curve) = match prepared {
        Prepared::Gmm { gmm, domains } => {
            let (diameter, domain, reference, _) = &domains[job.domain];
            let trace = run_sampler(&sampler, gmm, Some(domain))?;
            let mut metrics = base_metrics(job, &trace, domain, *diameter);
            let mut hist = Histogram2D::new(reference.grid);
            let mut curve = Vec::new();
            let mut next = 0;
            let marks = checkpoints(trace.len(), m.checkpoints);
            for (i, x) in trace.iter().enumerate() {
                hist.add(x);
                if marks.get(next) == Some(&(i + 1)) {
                    curve.push((
                        trace.gradient_evaluations(i),
                        kl_divergence(&hist, reference, m.kl_eps)?,
                    ));
                    next += 1;
                }
            }
            metrics.final_kl = Some(kl_divergence(&hist, reference, m.kl_eps)?);
            (trace, metrics, curve)
        }
        Prepared::Ode {
            problem,
            domain,
            truth,
        } => {
            let trace = run_sampler(&sampler, problem, Some(domain))?;
            let mut metrics = base_metrics(job, &trace, domain, None);
            let modes = (0..trace.dim)
                .map(|j| posterior_mode(&trace.coordinate(j)))
                .collect::<Result<Vec<f64>>>()?;
            let errs: Vec<f64> = modes
                .iter()
                .zip(truth)
                .map(|(m, t)| ((m - t) / t).abs())
                .collect();
            metrics.max_rel_error = Some(errs.iter().copied().fold(0.0, f64::max));
            metrics.modes = Some(modes);
            metrics.rel_errors = Some(errs);
            (trace, metrics, Vec::new())
        }
        Prepared::Interval { domain, lo, hi } => {
            let potential = DoubleWell { dim: 1 };
            let trace = run_sampler(&sampler, &potential, Some(domain))?;
            let mut metrics = base_metrics(job, &trace, domain, None);
            let tau = sampler.temperatures[0];
            let p = histogram_1d(&trace.coordinate(0), *lo, *hi, m.tv_bins);
            metrics.tv = Some(total_variation(
                &p,
                &stationary_bins(&potential, tau, *lo, *hi, m.tv_bins),
            ));
            (trace, metrics, Vec::new())
        }
    };
    Ok(RunOutput {
        metrics,
        kl_curve,
        trace: config.write_traces.then_some(trace),
    })
}

/// Bin probabilities of `exp(-U / tau)` on `[lo, hi]`, each bin integrated
/// with a 16-point midpoint rule.
pub fn stationary_bins<P: Potential>(
    potential: &P,
    tau: f64,
    lo: f64,
    hi: f64,
    bins: usize,
) -> Vec<f64> {
    const SUB: usize = 16;
    let width = (hi - lo) / (bins * SUB) as f64;
    let mut rng = crate::sampler::substream(0, 0, 0);
    let mut q: Vec<f64> = (0..bins)
        .map(|b| {
            (0..SUB)
                .map(|s| {
                    let x = lo + ((b * SUB + s) as f64 + 0.5) * width;
                    (-potential.energy(&[x], &mut rng) / tau).exp()
                })
                .sum()
        })
        .collect();
    let z: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= z);
    q
}

fn summarize(
    label: &str,
    diameter: Option<f64>,
    runs: &[&SeedMetrics],
    truth: Option<&[f64]>,
) -> MethodSummary {
    let collect = |f: &dyn Fn(&SeedMetrics) -> Option<f64>| -> Option<MeanCi> {
        let v: Vec<f64> = runs.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| mean_ci(&v))
    };
    let modes = runs.first().and_then(|r| r.modes.as_ref()).map(|first| {
        (0..first.len())
            .map(|j| {
                let v: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.modes.as_ref().map(|m| m[j]))
                    .collect();
                mean_ci(&v)
            })
            .collect::<Vec<_>>()
    });
    let mean_mode_rel_errors = match (&modes, truth) {
        (Some(m), Some(t)) => Some(
            m.iter()
                .zip(t)
                .map(|(ci, t)| ((ci.mean - t) / t).abs())
                .collect(),
        ),
        _ => None,
    };
    MethodSummary {
        method: label.to_string(),
        diameter,
        seeds: runs.len(),
        swap_rate: mean_ci(&runs.iter().map(|r| r.swap_rate).collect::<Vec<_>>()),
        round_trips: mean_ci(
            &runs
                .iter()
                .map(|r| r.round_trips as f64)
                .collect::<Vec<_>>(),
        ),
        outside_domain: runs.iter().map(|r| r.outside_domain).sum(),
        final_kl: collect(&|r| r.final_kl),
        modes,
        mean_mode_rel_errors,
        max_rel_error: collect(&|r| r.max_rel_error),
        tv: collect(&|r| r.tv),
    }
}

/// Runs every (method, domain, seed) combination on `jobs` worker threads.
/// Results come back in config order regardless of `jobs`.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<Outcome> {
    config.validate()?;
    let prepared = prepare(config)?;
    let labels = method_labels(config);
    let methods = config.methods();
    let domain_count = match &prepared {
        Prepared::Gmm { domains, .. } => domains.len(),
        _ => 1,
    };
    let mut work = Vec::new();
    for (label, sampler) in labels.iter().zip(&methods) {
        for domain in 0..domain_count {
            for &seed in &config.seeds {
                work.push(Job {
                    label,
                    sampler,
                    seed,
                    domain,
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunOutput> = pool.install(|| {
        work.par_iter()
            .map(|job| {
                run_job(config, &prepared, job).map_err(|e| Error::Seed {
                    seed: job.seed,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let truth = match &prepared {
        Prepared::Ode { truth, .. } => Some(truth.clone()),
        _ => None,
    };
    let per_group = config.seeds.len();
    let mut summary = Vec::new();
    let mut kl_curves = Vec::new();
    for group in runs.chunks(per_group) {
        let first = &group[0].metrics;
        let metrics: Vec<&SeedMetrics> = group.iter().map(|r| &r.metrics).collect();
        summary.push(summarize(
            &first.method,
            first.diameter,
            &metrics,
            truth.as_deref(),
        ));
        let name = match first.diameter {
            Some(d) => format!("{} d={d}", first.method),
            None => first.method.clone(),
        };
        let points = group.iter().map(|r| r.kl_curve.len()).min().unwrap_or(0);
        for j in 0..points {
            let values: Vec<f64> = group.iter().map(|r| r.kl_curve[j].1).collect();
            let ci = mean_ci(&values);
            kl_curves.push(KlPoint {
                sample_budget: group[0].kl_curve[j].0,
                kl_mean: ci.mean,
                kl_lo95: ci.lo95,
                kl_hi95: ci.hi95,
                method: name.clone(),
            });
        }
    }
    let trend = (config.experiment == Experiment::DiameterSweep).then(|| {
        let rows: Vec<&MethodSummary> = summary.iter().filter(|s| s.method == labels[0]).collect();
        let diameters: Vec<f64> = rows.iter().filter_map(|s| s.diameter).collect();
        let kl_means: Vec<f64> = rows
            .iter()
            .filter_map(|s| s.final_kl.map(|k| k.mean))
            .collect();
        TrendStat {
            spearman: spearman(&diameters, &kl_means),
            diameters,
            kl_means,
        }
    });
    let boundaries = match &prepared {
        Prepared::Gmm { domains, .. } => domains
            .iter()
            .map(|(d, _, _, poly)| (*d, poly.clone()))
            .collect(),
        _ => Vec::new(),
    };
    Ok(Outcome {
        result: RunResult {
            experiment: config.experiment,
            truth,
            runs: runs.iter().map(|r| r.metrics.clone()).collect(),
            summary,
            trend,
        },
        runs,
        kl_curves,
        boundaries,
    })
}

fn file_stem(m: &SeedMetrics) -> String {
    let method: String = m
        .method
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    match m.diameter {
        Some(d) => format!("{method}_d{d}_seed{}", m.seed),
        None => format!("{method}_seed{}", m.seed),
    }
}

/// Writes `metrics.json`, `config.json`, per-run trace CSVs, KL curves and
/// boundary polylines under `dir`. Returns the written paths.
pub fn write_outputs(
    config: &ExperimentConfig,
    outcome: &Outcome,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("metrics.json");
    let mut text = serde_json::to_string_pretty(&outcome.result)?;
    text.push('\n');
    fs::write(&path, text)?;
    written.push(path);

    let path = dir.join("config.json");
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    fs::write(&path, text)?;
    written.push(path);

    if !outcome.kl_curves.is_empty() {
        let path = dir.join("kl_curves.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for p in &outcome.kl_curves {
            w.serialize(p)?;
        }
        w.flush()?;
        written.push(path);
    }

    for (d, vertices) in &outcome.boundaries {
        let name = match d {
            Some(d) => format!("boundary_d{d}.csv"),
            None => "boundary.csv".to_string(),
        };
        let path = dir.join(name);
        let line = crate::domain::Polyline {
            vertices: vertices.clone(),
            closed: true,
        };
        write_polyline_csv(&line, BufWriter::new(File::create(&path)?))?;
        written.push(path);
    }

    if outcome.runs.iter().any(|r| r.trace.is_some()) {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        for run in &outcome.runs {
            if let Some(trace) = &run.trace {
                let stem = file_stem(&run.metrics);
                let path = traces.join(format!("{stem}.csv"));
                trace.write_csv(BufWriter::new(File::create(&path)?))?;
                written.push(path);
                let path = traces.join(format!("{stem}.diagnostics.json"));
                fs::write(
                    &path,
                    serde_json::to_string_pretty(&trace.diagnostics())? + "\n",
                )?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
