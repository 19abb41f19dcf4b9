//! Langevin samplers: plain, penalized and reflected SGLD, their cyclical
//! variants, dual-chain replica exchange, and the multi-chain even/odd
//! ensemble.
//!
//! All randomness comes from ChaCha8 substreams derived from one root seed,
//! so a run is a pure function of its configuration.

mod schedule;
mod step;
mod swap;

pub use schedule::{schedule_lr, ScheduleSpec};
pub use step::{langevin_proposal, langevin_step, reflected_step, ChainState};
pub use swap::{
    adapt_correction, corrected_swap_probability, deo_window_size, swap_log_intensity,
    swap_probability, SwapState, VarianceSpec, DEFAULT_VARIANCE_WINDOW, EXPONENT_CLAMP,
};

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::metrics::count_round_trips;
use crate::potentials::{penalized_grad, PenaltySpec, Potential};

/// Purpose tags for RNG substreams.
const STREAM_CHAIN: u64 = 1;
const STREAM_SWAP: u64 = 2;
const STREAM_INIT: u64 = 3;

/// Generator for substream `(tag, index)` of a root seed.
pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | (index & 0xffff_ffff));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Sgld,
    CycSgld,
    Resgld,
    PenalizedSgld,
    PenalizedCycSgld,
    PenalizedResgld,
    ReflectedSgld,
    ReflectedCycSgld,
    R2sgld,
    Deo,
}

/// How a sampler treats the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Free,
    Penalized,
    Reflected,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 10] = [
        SamplerKind::Sgld,
        SamplerKind::CycSgld,
        SamplerKind::Resgld,
        SamplerKind::PenalizedSgld,
        SamplerKind::PenalizedCycSgld,
        SamplerKind::PenalizedResgld,
        SamplerKind::ReflectedSgld,
        SamplerKind::ReflectedCycSgld,
        SamplerKind::R2sgld,
        SamplerKind::Deo,
    ];

    pub fn boundary(self) -> Boundary {
        use SamplerKind::*;
        match self {
            Sgld | CycSgld | Resgld => Boundary::Free,
            PenalizedSgld | PenalizedCycSgld | PenalizedResgld => Boundary::Penalized,
            ReflectedSgld | ReflectedCycSgld | R2sgld | Deo => Boundary::Reflected,
        }
    }

    pub fn is_cyclical(self) -> bool {
        matches!(
            self,
            SamplerKind::CycSgld | SamplerKind::PenalizedCycSgld | SamplerKind::ReflectedCycSgld
        )
    }

    pub fn is_dual(self) -> bool {
        matches!(
            self,
            SamplerKind::Resgld | SamplerKind::PenalizedResgld | SamplerKind::R2sgld
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::Sgld => "SGLD",
            SamplerKind::CycSgld => "cycSGLD",
            SamplerKind::Resgld => "reSGLD",
            SamplerKind::PenalizedSgld => "P-SGLD",
            SamplerKind::PenalizedCycSgld => "P-cycSGLD",
            SamplerKind::PenalizedResgld => "P-reSGLD",
            SamplerKind::ReflectedSgld => "R-SGLD",
            SamplerKind::ReflectedCycSgld => "R-cycSGLD",
            SamplerKind::R2sgld => "r2SGLD",
            SamplerKind::Deo => "DEO-r2SGLD",
        }
    }
}

/// Adaptive-correction settings of the even/odd ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeoSpec {
    #[serde(default = "default_target_rate")]
    pub target_rate: f64,
    #[serde(default = "default_adapt_step")]
    pub adapt_step: f64,
    #[serde(default)]
    pub initial_correction: f64,
}

fn default_target_rate() -> f64 {
    0.4
}

fn default_adapt_step() -> f64 {
    0.01
}

impl Default for DeoSpec {
    fn default() -> Self {
        Self {
            target_rate: default_target_rate(),
            adapt_step: default_adapt_step(),
            initial_correction: 0.0,
        }
    }
}

fn one() -> usize {
    1
}

fn default_xi() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub iterations: usize,
    /// Defaults to 20% of `iterations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub record_every: usize,
    /// Ascending, one per chain.
    pub temperatures: Vec<f64>,
    /// One per chain, or a single schedule shared by all chains.
    pub schedules: Vec<ScheduleSpec>,
    /// Dual-chain correction constant `C`; `None` disables the correction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<f64>,
    #[serde(default)]
    pub variance: VarianceSpec,
    #[serde(default = "one")]
    pub swap_period: usize,
    #[serde(default = "default_xi")]
    pub penalty_xi: f64,
    #[serde(default)]
    pub deo: DeoSpec,
    /// Initial position of every chain; uniform in the domain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

impl SamplerConfig {
    /// Minimal config with defaults for everything but the essentials.
    pub fn new(
        kind: SamplerKind,
        iterations: usize,
        temperatures: Vec<f64>,
        schedules: Vec<ScheduleSpec>,
    ) -> Self {
        Self {
            kind,
            iterations,
            burn_in: None,
            seed: 0,
            record_every: 1,
            temperatures,
            schedules,
            correction: None,
            variance: VarianceSpec::default(),
            swap_period: 1,
            penalty_xi: default_xi(),
            deo: DeoSpec::default(),
            init: None,
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 5)
    }

    pub fn chain_count(&self) -> usize {
        self.temperatures.len()
    }

    pub fn schedule(&self, chain: usize) -> &ScheduleSpec {
        if self.schedules.len() == 1 {
            &self.schedules[0]
        } else {
            &self.schedules[chain]
        }
    }

    /// Checks the config, reporting the offending field path.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if self.burn_in() > self.iterations {
            return Err(Error::config("burn_in", "must not exceed iterations"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be at least 1"));
        }
        if self.swap_period == 0 {
            return Err(Error::config("swap_period", "must be at least 1"));
        }
        let expected = if kind.is_dual() {
            Some(2)
        } else if kind == SamplerKind::Deo {
            None
        } else {
            Some(1)
        };
        let p = self.temperatures.len();
        match expected {
            Some(n) if p != n => {
                return Err(Error::config(
                    "temperatures",
                    format!("{} needs {n} temperature(s), got {p}", kind.label()),
                ))
            }
            None if p < 2 => {
                return Err(Error::config(
                    "temperatures",
                    "ensemble needs at least 2 chains",
                ))
            }
            _ => {}
        }
        for (i, t) in self.temperatures.iter().enumerate() {
            if !(*t >= 0.0 && t.is_finite()) {
                return Err(Error::config(
                    format!("temperatures[{i}]"),
                    format!("must be finite and non-negative, got {t}"),
                ));
            }
            if i > 0 && !(*t > self.temperatures[i - 1]) {
                return Err(Error::config(
                    format!("temperatures[{i}]"),
                    "temperatures must be strictly increasing",
                ));
            }
        }
        if self.schedules.len() != 1 && self.schedules.len() != p {
            return Err(Error::config(
                "schedules",
                format!("need 1 or {p} schedules, got {}", self.schedules.len()),
            ));
        }
        for (i, s) in self.schedules.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::config(format!("schedules[{i}]"), e.to_string()))?;
            if kind.is_cyclical() && !matches!(s, ScheduleSpec::CosineCyclic { .. }) {
                return Err(Error::config(
                    format!("schedules[{i}]"),
                    format!("{} needs a cosine_cyclic schedule", kind.label()),
                ));
            }
        }
        if let Some(c) = self.correction {
            if !(c > 0.0) {
                return Err(Error::config(
                    "correction",
                    format!("must be positive, got {c}"),
                ));
            }
        }
        SwapState::new(self.correction, self.variance)
            .map_err(|e| Error::config("variance", e.to_string()))?;
        if !(self.penalty_xi >= 0.0 && self.penalty_xi.is_finite()) {
            return Err(Error::config(
                "penalty_xi",
                "must be finite and non-negative",
            ));
        }
        if kind == SamplerKind::Deo {
            deo_window_size(p, self.deo.target_rate)
                .map_err(|e| Error::config("deo.target_rate", e.to_string()))?;
            if !(self.deo.adapt_step >= 0.0 && self.deo.adapt_step.is_finite()) {
                return Err(Error::config(
                    "deo.adapt_step",
                    "must be finite and non-negative",
                ));
            }
        }
        if let Some(x) = &self.init {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("init", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Per-pair outcome of one swap phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SwapOutcome {
    pub attempted: Vec<bool>,
    pub accepted: Vec<bool>,
}

impl SwapOutcome {
    fn none(pairs: usize) -> Self {
        Self {
            attempted: vec![false; pairs],
            accepted: vec![false; pairs],
        }
    }

    pub fn any_accepted(&self) -> bool {
        self.accepted.iter().any(|&a| a)
    }
}

/// One pass of the even/odd swap loop over adjacent pairs `p = 0..P-1`.
///
/// Pair `p` swaps when its gate is armed and `U[p+1] + c < U[p]`; the gate is
/// then disarmed. `arm` re-arms every gate first. Energies and slot labels
/// move with the swapped states. Returns the fraction of pairs whose
/// indicator fired together with the swap counts.
pub fn deo_sweep(
    energies: &mut [f64],
    slots: &mut [usize],
    gates: &mut [bool],
    correction: f64,
    arm: bool,
) -> (f64, SwapOutcome) {
    let pairs = energies.len() - 1;
    let mut fired = 0;
    let mut out = SwapOutcome::none(pairs);
    for p in 0..pairs {
        let indicator = energies[p + 1] + correction < energies[p];
        fired += usize::from(indicator);
        if arm {
            gates[p] = true;
        }
        if gates[p] {
            out.attempted[p] = true;
            if indicator {
                energies.swap(p, p + 1);
                slots.swap(p, p + 1);
                gates[p] = false;
                out.accepted[p] = true;
            }
        }
    }
    (fired as f64 / pairs as f64, out)
}

/// Strict swap threshold: swap iff `u < prob`.
pub fn accept_swap(u: f64, prob: f64) -> bool {
    u < prob
}

/// Chains of one sampler run together with their generators and swap state.
pub struct ReplicaEnsemble<'a, P: Potential> {
    potential: &'a P,
    domain: Option<&'a Domain>,
    boundary: Boundary,
    penalty: PenaltySpec,
    pub chains: Vec<ChainState>,
    pub schedules: Vec<ScheduleSpec>,
    /// Chain identity held by each temperature slot.
    pub identities: Vec<usize>,
    pub swap: SwapState,
    pub deo: DeoSpec,
    pub deo_correction: f64,
    pub gates: Vec<bool>,
    pub window: usize,
    /// Latest energy estimate per slot, when one was computed this step.
    pub energies: Vec<Option<f64>>,
    pub pair_attempts: Vec<u64>,
    pub pair_accepts: Vec<u64>,
    rngs: Vec<ChaCha8Rng>,
    swap_rng: ChaCha8Rng,
    grad: Vec<f64>,
}

impl<'a, P: Potential> ReplicaEnsemble<'a, P> {
    pub fn new(
        config: &SamplerConfig,
        potential: &'a P,
        domain: Option<&'a Domain>,
    ) -> Result<Self> {
        config.validate()?;
        let dim = potential.dim();
        let boundary = config.kind.boundary();
        if boundary != Boundary::Free && domain.is_none() {
            return Err(Error::config(
                "kind",
                format!("{} requires a domain", config.kind.label()),
            ));
        }
        if let Some(d) = domain {
            if d.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: d.dim(),
                });
            }
        }
        let p = config.chain_count();
        let mut init_rng = substream(config.seed, STREAM_INIT, 0);
        let mut chains = Vec::with_capacity(p);
        for &tau in &config.temperatures {
            let position = match (&config.init, domain) {
                (Some(x), _) => {
                    if x.len() != dim {
                        return Err(Error::config(
                            "init",
                            format!("expected {dim} coordinates, got {}", x.len()),
                        ));
                    }
                    x.clone()
                }
                (None, Some(d)) => uniform_in(d, &mut init_rng),
                (None, None) => vec![0.0; dim],
            };
            chains.push(ChainState::new(position, tau)?);
        }
        let window = if config.kind == SamplerKind::Deo {
            deo_window_size(p, config.deo.target_rate)?
        } else {
            1
        };
        Ok(Self {
            potential,
            domain,
            boundary,
            penalty: PenaltySpec {
                xi: config.penalty_xi,
            },
            chains,
            schedules: (0..p).map(|i| *config.schedule(i)).collect(),
            identities: (0..p).collect(),
            swap: SwapState::new(config.correction, config.variance)?,
            deo: config.deo,
            deo_correction: config.deo.initial_correction,
            gates: vec![false; p.saturating_sub(1)],
            window,
            energies: vec![None; p],
            pair_attempts: vec![0; p.saturating_sub(1)],
            pair_accepts: vec![0; p.saturating_sub(1)],
            rngs: (0..p as u64)
                .map(|i| substream(config.seed, STREAM_CHAIN, i))
                .collect(),
            swap_rng: substream(config.seed, STREAM_SWAP, 0),
            grad: vec![0.0; dim],
        })
    }

    /// Moves every chain by one Langevin step at iteration `k`.
    pub fn advance(&mut self, k: usize) -> Result<()> {
        for slot in 0..self.chains.len() {
            let eta = schedule_lr(&self.schedules[slot], k);
            let rng = &mut self.rngs[slot];
            let chain = &mut self.chains[slot];
            chain.step = k;
            self.potential
                .gradient(&chain.position, &mut self.grad, rng);
            let next = match self.boundary {
                Boundary::Free => langevin_step(chain, &self.grad, eta, rng)?,
                Boundary::Penalized => {
                    let domain = self.domain.expect("checked at construction");
                    let g = if chain.position.iter().all(|v| v.is_finite()) {
                        penalized_grad(&self.grad, &chain.position, domain, self.penalty)?
                    } else {
                        self.grad.clone()
                    };
                    langevin_step(chain, &g, eta, rng)?
                }
                Boundary::Reflected => {
                    let domain = self.domain.expect("checked at construction");
                    let proposal = langevin_step(chain, &self.grad, eta, rng)?;
                    if proposal.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Diverged {
                            step: k,
                            chain: self.identities[slot],
                        });
                    }
                    domain.reflect_from(&chain.position, &proposal)?
                }
            };
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    step: k,
                    chain: self.identities[slot],
                });
            }
            chain.position = next;
            self.energies[slot] = None;
        }
        Ok(())
    }

    fn energy(&mut self, slot: usize) -> f64 {
        if let Some(e) = self.energies[slot] {
            return e;
        }
        let e = self
            .potential
            .energy(&self.chains[slot].position, &mut self.rngs[slot]);
        self.energies[slot] = Some(e);
        e
    }

    /// Energy estimate of the chain in `slot`, computed at most once per step.
    pub fn slot_energy(&mut self, slot: usize) -> f64 {
        self.energy(slot)
    }

    /// Swap phase of the dual-chain sampler.
    pub fn dual_swap(&mut self) -> Result<SwapOutcome> {
        let u1 = self.energy(0);
        let u2 = self.energy(1);
        let prob = self.swap.probability(
            u1,
            u2,
            self.chains[0].temperature,
            self.chains[1].temperature,
        )?;
        let u: f64 = self.swap_rng.random();
        let accepted = accept_swap(u, prob);
        if accepted {
            self.swap_slots(0, 1);
        }
        self.swap.update_variance(u1 - u2);
        let out = SwapOutcome {
            attempted: vec![true],
            accepted: vec![accepted],
        };
        self.tally(&out);
        Ok(out)
    }

    /// Full dual-chain iteration: Langevin moves, then a swap attempt when
    /// `k` is a multiple of `swap_period`.
    pub fn dual_chain_step(&mut self, k: usize, swap_period: usize) -> Result<SwapOutcome> {
        self.advance(k)?;
        if k.is_multiple_of(swap_period) {
            self.dual_swap()
        } else {
            Ok(SwapOutcome::none(1))
        }
    }

    /// Swap phase of the even/odd ensemble at iteration `k`, including the
    /// correction update.
    pub fn deo_swap(&mut self, k: usize) -> SwapOutcome {
        let p = self.chains.len();
        let mut energies: Vec<f64> = (0..p).map(|s| self.energy(s)).collect();
        let mut slots: Vec<usize> = (0..p).collect();
        let c = self.deo_correction;
        let (rate, out) = deo_sweep(
            &mut energies,
            &mut slots,
            &mut self.gates,
            c,
            k.is_multiple_of(self.window),
        );
        if out.any_accepted() {
            let mut old: Vec<Vec<f64>> = self
                .chains
                .iter_mut()
                .map(|c| std::mem::take(&mut c.position))
                .collect();
            for (chain, &s) in self.chains.iter_mut().zip(&slots) {
                chain.position = std::mem::take(&mut old[s]);
            }
            self.identities = slots.iter().map(|&s| self.identities[s]).collect();
            self.energies = energies.iter().map(|&e| Some(e)).collect();
        }
        self.deo_correction = adapt_correction(c, self.deo.adapt_step, rate, self.deo.target_rate);
        self.tally(&out);
        out
    }

    /// Full ensemble iteration: Langevin moves, then the even/odd swap pass.
    pub fn deo_ensemble_step(&mut self, k: usize) -> Result<SwapOutcome> {
        self.advance(k)?;
        Ok(self.deo_swap(k))
    }

    fn tally(&mut self, out: &SwapOutcome) {
        for (q, (&t, &a)) in out.attempted.iter().zip(&out.accepted).enumerate() {
            self.pair_attempts[q] += u64::from(t);
            self.pair_accepts[q] += u64::from(a);
        }
    }

    fn swap_slots(&mut self, a: usize, b: usize) {
        let (left, right) = self.chains.split_at_mut(b);
        std::mem::swap(&mut left[a].position, &mut right[0].position);
        self.identities.swap(a, b);
        self.energies.swap(a, b);
    }
}

/// Uniform draw from `domain` by rejection from its bounding box.
pub fn uniform_in<R: Rng + ?Sized>(domain: &Domain, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = domain.bounding_box();
    for _ in 0..100_000 {
        let x: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| rng.random_range(*l..=*h))
            .collect();
        if domain.contains(&x).unwrap_or(false) {
            return x;
        }
    }
    domain.interior_point()
}

/// Post-burn-in output of a sampler run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub dim: usize,
    pub chains: usize,
    pub iterations: usize,
    /// Iteration index of each recorded sample.
    pub steps: Vec<usize>,
    /// Flattened recorded positions of the coldest slot.
    pub samples: Vec<f64>,
    pub energies: Vec<f64>,
    pub learning_rates: Vec<f64>,
    /// Whether any swap happened at the recorded iteration.
    pub swapped: Vec<bool>,
    /// Chain identity occupying the coldest slot at each recorded iteration.
    pub chain_ids: Vec<usize>,
    pub swap_attempts: Vec<u64>,
    pub swap_accepts: Vec<u64>,
    /// Slot-to-identity map after every iteration (multi-chain runs only).
    pub identities: Vec<Vec<usize>>,
    pub final_correction: Option<f64>,
    pub final_sigma2: f64,
}

impl SampleTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim.max(1))
    }

    /// All recorded values of coordinate `j`.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.iter().map(|x| x[j]).collect()
    }

    /// Gradient evaluations spent up to the `i`-th recorded sample.
    pub fn gradient_evaluations(&self, i: usize) -> u64 {
        (self.steps[i] * self.chains) as u64
    }

    /// Accepted over attempted swaps, all pairs pooled.
    pub fn swap_rate(&self) -> f64 {
        let attempts: u64 = self.swap_attempts.iter().sum();
        if attempts == 0 {
            return 0.0;
        }
        self.swap_accepts.iter().sum::<u64>() as f64 / attempts as f64
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            swap_rate: self.swap_rate(),
            final_c: self.final_correction,
            final_sigma2: self.final_sigma2,
            round_trips: count_round_trips(&self.identities, self.chains).total(),
        }
    }

    /// CSV with columns `step, chain_id, x0.., energy, lr, swapped`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "chain_id".to_string()];
        header.extend((0..self.dim).map(|j| format!("x{j}")));
        header.extend(["energy", "lr", "swapped"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.steps[i].to_string(), self.chain_ids[i].to_string()];
            row.extend(self.sample(i).iter().map(|v| v.to_string()));
            row.push(self.energies[i].to_string());
            row.push(self.learning_rates[i].to_string());
            row.push(u8::from(self.swapped[i]).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run summary written next to each trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub swap_rate: f64,
    #[serde(rename = "final_C")]
    pub final_c: Option<f64>,
    pub final_sigma2: f64,
    pub round_trips: usize,
}

/// Runs the configured sampler for `config.iterations` steps and records the
/// coldest chain after burn-in.
pub fn run_sampler<P: Potential>(
    config: &SamplerConfig,
    potential: &P,
    domain: Option<&Domain>,
) -> Result<SampleTrace> {
    let mut ens = ReplicaEnsemble::new(config, potential, domain)?;
    let p = config.chain_count();
    let k_total = config.iterations;
    let burn_in = config.burn_in();
    let n_records = (k_total - burn_in) / config.record_every;
    let dim = potential.dim();
    let pairs = p.saturating_sub(1);

    let mut trace = SampleTrace {
        dim,
        chains: p,
        iterations: k_total,
        steps: Vec::with_capacity(n_records),
        samples: Vec::with_capacity(n_records * dim),
        energies: Vec::with_capacity(n_records),
        learning_rates: Vec::with_capacity(n_records),
        swapped: Vec::with_capacity(n_records),
        chain_ids: Vec::with_capacity(n_records),
        swap_attempts: vec![0; pairs],
        swap_accepts: vec![0; pairs],
        identities: Vec::with_capacity(if p > 1 { k_total } else { 0 }),
        final_correction: None,
        final_sigma2: 0.0,
    };

    for k in 1..=k_total {
        let outcome = if config.kind.is_dual() {
            ens.dual_chain_step(k, config.swap_period)?
        } else if config.kind == SamplerKind::Deo {
            ens.deo_ensemble_step(k)?
        } else {
            ens.advance(k)?;
            SwapOutcome::none(0)
        };
        if pairs > 0 {
            trace.identities.push(ens.identities.clone());
        }
        if k > burn_in && (k - burn_in).is_multiple_of(config.record_every) {
            trace.steps.push(k);
            trace.samples.extend_from_slice(&ens.chains[0].position);
            trace.energies.push(ens.slot_energy(0));
            trace.learning_rates.push(schedule_lr(&ens.schedules[0], k));
            trace.swapped.push(outcome.any_accepted());
            trace.chain_ids.push(ens.identities[0]);
        }
    }
    trace.swap_attempts.clone_from(&ens.pair_attempts);
    trace.swap_accepts.clone_from(&ens.pair_accepts);
    if config.kind == SamplerKind::Deo {
        trace.final_correction = Some(ens.deo_correction);
    } else {
        trace.final_correction = ens.swap.correction;
    }
    trace.final_sigma2 = ens.swap.sigma2();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Bounds;
    use crate::potentials::{DoubleWell, Flat, Quadratic};

    fn constant(eta0: f64) -> Vec<ScheduleSpec> {
        vec![ScheduleSpec::Constant { eta0 }]
    }

    fn unit_box() -> Domain {
        Domain::Box(Bounds::new(vec![-1.0], vec![1.0]).unwrap())
    }

    #[test]
    fn deo_equal_energies_never_fire() {
        let mut e = vec![1.0; 4];
        let mut slots = vec![0, 1, 2, 3];
        let mut gates = vec![true; 3];
        let (rate, out) = deo_sweep(&mut e, &mut slots, &mut gates, 0.0, true);
        assert_eq!(rate, 0.0);
        assert!(!out.any_accepted());
        assert_eq!(slots, vec![0, 1, 2, 3]);
    }

    #[test]
    fn deo_decreasing_energies_bubble_sequentially() {
        // p=0: 2 < 3 swaps -> [2, 3, 1]; p=1: 1 < 3 swaps -> [2, 1, 3].
        let mut e = vec![3.0, 2.0, 1.0];
        let mut slots = vec![0, 1, 2];
        let mut gates = vec![false; 2];
        let (rate, out) = deo_sweep(&mut e, &mut slots, &mut gates, 0.0, true);
        assert_eq!(out.accepted, vec![true, true]);
        assert_eq!(slots, vec![1, 2, 0]);
        assert_eq!(e, vec![2.0, 1.0, 3.0]);
        assert_eq!(gates, vec![false, false]);
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn deo_disarmed_gates_block_swaps() {
        let mut e = vec![3.0, 2.0];
        let mut slots = vec![0, 1];
        let mut gates = vec![false];
        let (rate, out) = deo_sweep(&mut e, &mut slots, &mut gates, 0.0, false);
        assert_eq!(rate, 1.0);
        assert!(!out.any_accepted());
    }

    #[test]
    fn strict_swap_threshold() {
        assert!(!accept_swap(1.0, 1.0));
        assert!(accept_swap(0.999_999, 1.0));
        assert!(!accept_swap(0.3, 0.3));
    }

    #[test]
    fn flat_potential_always_swaps() {
        let dom = unit_box();
        let mut cfg =
            SamplerConfig::new(SamplerKind::R2sgld, 10_000, vec![1.0, 2.0], constant(1e-3));
        cfg.seed = 3;
        let trace = run_sampler(&cfg, &Flat { dim: 1 }, Some(&dom)).unwrap();
        assert_eq!(trace.swap_rate(), 1.0);
        assert_eq!(trace.swap_attempts, vec![10_000]);
    }

    #[test]
    fn swap_of_identical_states_is_noop() {
        let dom = unit_box();
        let pot = Flat { dim: 1 };
        let mut cfg =
            SamplerConfig::new(SamplerKind::R2sgld, 1, vec![1e-40, 2e-40], constant(1e-3));
        cfg.init = Some(vec![0.25]);
        let mut ens = ReplicaEnsemble::new(&cfg, &pot, Some(&dom)).unwrap();
        let out = ens.dual_chain_step(1, 1).unwrap();
        assert!(out.any_accepted());
        assert_eq!(ens.chains[0].position, ens.chains[1].position);
    }

    #[test]
    fn deo_gamma_zero_keeps_correction() {
        let dom = Domain::Box(Bounds::new(vec![-2.0], vec![2.0]).unwrap());
        let mut cfg = SamplerConfig::new(
            SamplerKind::Deo,
            500,
            vec![0.1, 0.3, 0.9, 2.7],
            constant(1e-3),
        );
        cfg.deo.adapt_step = 0.0;
        cfg.deo.initial_correction = 0.7;
        let trace = run_sampler(&cfg, &DoubleWell { dim: 1 }, Some(&dom)).unwrap();
        assert_eq!(trace.final_correction, Some(0.7));
    }

    #[test]
    fn correction_moves_toward_target() {
        let dom = Domain::Box(Bounds::new(vec![-2.0], vec![2.0]).unwrap());
        let pot = Flat { dim: 1 };
        let mut cfg = SamplerConfig::new(SamplerKind::Deo, 1, vec![0.1, 0.3, 0.9], constant(1e-3));
        cfg.deo.adapt_step = 0.5;
        // Equal energies never fire: rate 0 < target pulls C down.
        let mut ens = ReplicaEnsemble::new(&cfg, &pot, Some(&dom)).unwrap();
        ens.deo_ensemble_step(1).unwrap();
        assert!(ens.deo_correction < 0.0);
        // With C < 0 every indicator fires: rate 1 > target pushes C up.
        let before = ens.deo_correction;
        ens.deo_ensemble_step(2).unwrap();
        assert!(ens.deo_correction > before);
    }

    #[test]
    fn full_burn_in_gives_empty_trace() {
        let mut cfg = SamplerConfig::new(SamplerKind::Sgld, 100, vec![1.0], constant(1e-2));
        cfg.burn_in = Some(100);
        let trace = run_sampler(&cfg, &Quadratic { dim: 2 }, None).unwrap();
        assert!(trace.is_empty());
    }

    #[test]
    fn same_seed_same_trace() {
        let dom = Domain::Box(Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap());
        for kind in [
            SamplerKind::ReflectedSgld,
            SamplerKind::R2sgld,
            SamplerKind::PenalizedResgld,
        ] {
            let temps = if kind.is_dual() {
                vec![1.0, 4.0]
            } else {
                vec![1.0]
            };
            let mut cfg = SamplerConfig::new(kind, 2_000, temps, constant(1e-2));
            cfg.seed = 11;
            let a = run_sampler(&cfg, &DoubleWell { dim: 2 }, Some(&dom)).unwrap();
            let b = run_sampler(&cfg, &DoubleWell { dim: 2 }, Some(&dom)).unwrap();
            assert_eq!(a, b);
            cfg.seed = 12;
            let c = run_sampler(&cfg, &DoubleWell { dim: 2 }, Some(&dom)).unwrap();
            assert_ne!(a.samples, c.samples);
        }
    }

    #[test]
    fn reflected_samples_stay_inside() {
        let dom = Domain::Box(Bounds::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap());
        let mut cfg =
            SamplerConfig::new(SamplerKind::ReflectedSgld, 5_000, vec![1.0], constant(0.05));
        cfg.burn_in = Some(0);
        let trace = run_sampler(&cfg, &Quadratic { dim: 2 }, Some(&dom)).unwrap();
        assert!(trace.iter().all(|x| dom.contains(x).unwrap()));
    }

    #[test]
    fn divergence_is_reported() {
        // Huge step on a stiff quadratic explodes geometrically.
        let mut cfg = SamplerConfig::new(SamplerKind::Sgld, 10_000, vec![0.0], constant(3.0));
        cfg.init = Some(vec![1.0]);
        let err = run_sampler(&cfg, &Quadratic { dim: 1 }, None).unwrap_err();
        assert!(matches!(
            err,
            Error::Diverged { chain: 0, .. } | Error::NonFiniteGradient { .. }
        ));
    }

    #[test]
    fn config_validation_paths() {
        let mut cfg = SamplerConfig::new(SamplerKind::R2sgld, 10, vec![1.0, -2.0], constant(1e-3));
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "temperatures[1]"),
            other => panic!("{other:?}"),
        }
        cfg.temperatures = vec![1.0];
        assert!(cfg.validate().is_err());
        let cyc = SamplerConfig::new(SamplerKind::CycSgld, 10, vec![1.0], constant(1e-3));
        assert!(cyc.validate().is_err());
        let no_domain =
            SamplerConfig::new(SamplerKind::ReflectedSgld, 10, vec![1.0], constant(1e-3));
        assert!(run_sampler(&no_domain, &Quadratic { dim: 1 }, None).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let mut cfg = SamplerConfig::new(SamplerKind::Resgld, 10, vec![1.0, 2.0], constant(1e-2));
        cfg.burn_in = Some(5);
        let trace = run_sampler(&cfg, &Quadratic { dim: 2 }, None).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,chain_id,x0,x1,energy,lr,swapped\n6,"));
        assert_eq!(text.lines().count(), 6);
        let diag = serde_json::to_value(trace.diagnostics()).unwrap();
        for key in ["swap_rate", "final_C", "final_sigma2", "round_trips"] {
            assert!(diag.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn config_json_roundtrip() {
        let mut cfg = SamplerConfig::new(
            SamplerKind::ReflectedCycSgld,
            1000,
            vec![1.0],
            vec![ScheduleSpec::CosineCyclic {
                eta0: 1e-3,
                total: 1000,
                cycles: 3,
            }],
        );
        cfg.correction = Some(2.0);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SamplerConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
