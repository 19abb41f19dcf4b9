use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule indexed by the 1-based iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant {
        eta0: f64,
    },
    /// `eta0 * rate^max(0, k - start)`.
    DecayAfter {
        eta0: f64,
        start: usize,
        rate: f64,
    },
    /// Cosine annealing restarted `cycles` times over `total` iterations.
    CosineCyclic {
        eta0: f64,
        total: usize,
        cycles: usize,
    },
}

impl ScheduleSpec {
    pub fn eta0(&self) -> f64 {
        match *self {
            ScheduleSpec::Constant { eta0 }
            | ScheduleSpec::DecayAfter { eta0, .. }
            | ScheduleSpec::CosineCyclic { eta0, .. } => eta0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eta0 = self.eta0();
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta0 must be positive, got {eta0}"
            )));
        }
        match *self {
            ScheduleSpec::Constant { .. } => Ok(()),
            ScheduleSpec::DecayAfter { rate, .. } => {
                if rate > 0.0 && rate <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "decay rate must lie in (0, 1], got {rate}"
                    )))
                }
            }
            ScheduleSpec::CosineCyclic { total, cycles, .. } => {
                if cycles >= 1 && total >= cycles {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "cosine schedule needs 1 <= cycles <= total, got {cycles} cycles over {total}"
                    )))
                }
            }
        }
    }
}

/// Learning rate at iteration `k >= 1`.
pub fn schedule_lr(spec: &ScheduleSpec, k: usize) -> f64 {
    match *spec {
        ScheduleSpec::Constant { eta0 } => eta0,
        ScheduleSpec::DecayAfter { eta0, start, rate } => {
            let excess = k.saturating_sub(start);
            eta0 * rate.powf(excess as f64)
        }
        ScheduleSpec::CosineCyclic {
            eta0,
            total,
            cycles,
        } => {
            let period = total.div_ceil(cycles.max(1)).max(1);
            let phase = (k.max(1) - 1) % period;
            0.5 * eta0 * ((PI * phase as f64 / period as f64).cos() + 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cosine_starts_at_eta0() {
        let s = ScheduleSpec::CosineCyclic {
            eta0: 0.3,
            total: 1000,
            cycles: 4,
        };
        assert_eq!(schedule_lr(&s, 1), 0.3);
        // Period 250, restart at k = 251.
        assert_eq!(schedule_lr(&s, 251), 0.3);
    }

    #[test]
    fn cosine_half_period_is_half_eta0() {
        let s = ScheduleSpec::CosineCyclic {
            eta0: 2.0,
            total: 1000,
            cycles: 5,
        };
        // Period 200; k - 1 = 100.
        assert_relative_eq!(schedule_lr(&s, 101), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn decay_after_start() {
        let s = ScheduleSpec::DecayAfter {
            eta0: 2e-5,
            start: 10_000,
            rate: 0.9999,
        };
        assert_eq!(schedule_lr(&s, 1), 2e-5);
        assert_eq!(schedule_lr(&s, 10_000), 2e-5);
        assert_relative_eq!(schedule_lr(&s, 10_001), 2e-5 * 0.9999, max_relative = 1e-15);
    }

    #[test]
    fn validation() {
        assert!(ScheduleSpec::Constant { eta0: 0.0 }.validate().is_err());
        assert!(ScheduleSpec::DecayAfter {
            eta0: 1.0,
            start: 0,
            rate: 1.5
        }
        .validate()
        .is_err());
        assert!(ScheduleSpec::CosineCyclic {
            eta0: 1.0,
            total: 10,
            cycles: 0
        }
        .validate()
        .is_err());
    }
}
