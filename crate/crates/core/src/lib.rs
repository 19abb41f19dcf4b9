//! Constrained Langevin sampling with reflection and replica exchange.
//!
//! The crate provides bounded domains with a reflection operator
//! ([`domain`]), energy functions and their stochastic gradients
//! ([`potentials`]), the sampler family from plain SGLD up to reflected
//! replica exchange and its multi-chain even/odd variant ([`sampler`]),
//! dynamical-system identification on top of those samplers ([`ode`]),
//! evaluation metrics ([`metrics`]), and a config-driven experiment
//! harness ([`harness`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod ode;
pub mod potentials;
pub mod sampler;

pub use error::{Error, Result};
