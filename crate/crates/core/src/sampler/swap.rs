use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bound applied to swap exponents before exponentiation.
pub const EXPONENT_CLAMP: f64 = 50.0;

/// Default length of the energy-difference window behind the variance estimate.
pub const DEFAULT_VARIANCE_WINDOW: usize = 100;

fn check_temperatures(tau1: f64, tau2: f64) -> Result<()> {
    if !(tau1 > 0.0 && tau1 < tau2 && tau2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "swap needs 0 < tau1 < tau2, got {tau1} and {tau2}"
        )));
    }
    Ok(())
}

/// Unclamped log swap intensity `(1/tau1 - 1/tau2)(u1 - u2)`.
pub fn swap_log_intensity(u1: f64, u2: f64, tau1: f64, tau2: f64) -> f64 {
    (1.0 / tau1 - 1.0 / tau2) * (u1 - u2)
}

/// `min(1, exp((1/tau1 - 1/tau2)(u1 - u2)))`.
pub fn swap_probability(u1: f64, u2: f64, tau1: f64, tau2: f64) -> Result<f64> {
    check_temperatures(tau1, tau2)?;
    Ok(capped_exp(swap_log_intensity(u1, u2, tau1, tau2)))
}

/// Swap probability with the variance correction `(1/tau1 - 1/tau2) sigma2 / c`
/// subtracted from the energy difference.
pub fn corrected_swap_probability(
    u1: f64,
    u2: f64,
    tau1: f64,
    tau2: f64,
    sigma2: f64,
    c: f64,
) -> Result<f64> {
    check_temperatures(tau1, tau2)?;
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "correction C must be positive, got {c}"
        )));
    }
    let dt = 1.0 / tau1 - 1.0 / tau2;
    Ok(capped_exp(dt * (u1 - u2 - dt * sigma2 / c)))
}

fn capped_exp(exponent: f64) -> f64 {
    if exponent.is_nan() {
        return 0.0;
    }
    exponent
        .clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP)
        .exp()
        .min(1.0)
}

/// How the energy-difference variance is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum VarianceSpec {
    /// Bessel-corrected variance of the last `size` differences.
    Window {
        size: usize,
    },
    Fixed {
        value: f64,
    },
}

impl Default for VarianceSpec {
    fn default() -> Self {
        VarianceSpec::Window {
            size: DEFAULT_VARIANCE_WINDOW,
        }
    }
}

/// Correction constant and running variance estimate for swap decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapState {
    /// `None` disables the variance correction.
    pub correction: Option<f64>,
    sigma2: f64,
    window: VecDeque<f64>,
    spec: VarianceSpec,
}

impl SwapState {
    pub fn new(correction: Option<f64>, spec: VarianceSpec) -> Result<Self> {
        match spec {
            VarianceSpec::Window { size } if size < 2 => {
                return Err(Error::InvalidParameter(format!(
                    "variance window must be >= 2, got {size}"
                )))
            }
            VarianceSpec::Fixed { value } if !(value >= 0.0 && value.is_finite()) => {
                return Err(Error::InvalidParameter(format!(
                    "fixed sigma2 must be >= 0, got {value}"
                )))
            }
            _ => {}
        }
        Ok(Self {
            correction,
            sigma2: match spec {
                VarianceSpec::Fixed { value } => value,
                VarianceSpec::Window { .. } => 0.0,
            },
            window: VecDeque::new(),
            spec,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Pushes an energy difference and refreshes the variance estimate.
    pub fn update_variance(&mut self, diff: f64) {
        let VarianceSpec::Window { size } = self.spec else {
            return;
        };
        if !diff.is_finite() {
            return;
        }
        if self.window.len() == size {
            self.window.pop_front();
        }
        self.window.push_back(diff);
        let n = self.window.len();
        self.sigma2 = if n < 2 {
            0.0
        } else {
            let mean = self.window.iter().sum::<f64>() / n as f64;
            self.window.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        };
    }

    /// Swap probability for the current correction and variance estimate.
    pub fn probability(&self, u1: f64, u2: f64, tau1: f64, tau2: f64) -> Result<f64> {
        match self.correction {
            Some(c) => corrected_swap_probability(u1, u2, tau1, tau2, self.sigma2, c),
            None => swap_probability(u1, u2, tau1, tau2),
        }
    }
}

/// Gate window of the even/odd scheme:
/// `ceil((ln P + ln ln P) / -ln(1 - S))`, at least 1.
pub fn deo_window_size(chains: usize, target_rate: f64) -> Result<usize> {
    if chains < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 chains, got {chains}"
        )));
    }
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target swap rate must lie in (0, 1), got {target_rate}"
        )));
    }
    let p = chains as f64;
    let w = ((p.ln() + p.ln().ln()) / -(1.0 - target_rate).ln()).ceil();
    Ok((w as usize).max(1))
}

/// One step of the even/odd correction update `C + gamma (rate - target)`.
pub fn adapt_correction(c: f64, gamma: f64, rate: f64, target: f64) -> f64 {
    c + gamma * (rate - target)
}
