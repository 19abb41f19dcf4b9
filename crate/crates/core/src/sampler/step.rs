use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::Domain;
use crate::error::{Error, Result};

/// Position, temperature and iteration count of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub temperature: f64,
    pub step: usize,
}

impl ChainState {
    pub fn new(position: Vec<f64>, temperature: f64) -> Result<Self> {
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be finite and non-negative, got {temperature}"
            )));
        }
        Ok(Self {
            position,
            temperature,
            step: 0,
        })
    }
}

/// `x - eta * grad + sqrt(2 eta tau) * z` for a given noise vector `z`.
pub fn langevin_proposal(
    position: &[f64],
    grad: &[f64],
    eta: f64,
    tau: f64,
    z: &[f64],
) -> Vec<f64> {
    let scale = (2.0 * eta * tau).sqrt();
    position
        .iter()
        .zip(grad)
        .zip(z)
        .map(|((x, g), z)| x - eta * g + scale * z)
        .collect()
}

/// Unreflected Langevin proposal with fresh standard normal noise.
pub fn langevin_step<R: Rng + ?Sized>(
    state: &ChainState,
    grad: &[f64],
    eta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if grad.len() != state.position.len() {
        return Err(Error::DimensionMismatch {
            expected: state.position.len(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step: state.step });
    }
    let z: Vec<f64> = (0..grad.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Ok(langevin_proposal(
        &state.position,
        grad,
        eta,
        state.temperature,
        &z,
    ))
}

/// Langevin proposal mapped back into `domain` by reflection.
pub fn reflected_step<R: Rng + ?Sized>(
    domain: &Domain,
    state: &ChainState,
    grad: &[f64],
    eta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let proposal = langevin_step(state, grad, eta, rng)?;
    domain.reflect_from(&state.position, &proposal)
}
