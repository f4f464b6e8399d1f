// Index loops over states read better than iterator chains in the dense
// matrix code below.
#![allow(clippy::needless_range_loop)]

//! Tempered sequential Monte Carlo on finite state spaces, with an exact
//! linear-operator engine for the associated Feynman-Kac propagators.
//!
//! The crate has two halves that check each other:
//!
//! - a particle simulator ([`particles`]) running the classic
//!   resample-then-mutate scheme across a ladder of distributions
//!   ([`tempering`] builds the ladder), and
//! - an exact engine ([`measures`], [`feynman_kac`]) that represents every
//!   propagator as a dense matrix, so expectations, variances and operator
//!   norms are computed to floating-point accuracy rather than estimated.
//!
//! On top of those, [`diagnostics`] replays the simulator many times and
//! compares empirical moments against the exact identities they must satisfy,
//! and [`stability`] evaluates the full chain of mixing/stability constants
//! (spectral gaps, contraction coefficients, norm bounds) together with the
//! resulting non-asymptotic mean-squared-error bounds, including a randomized
//! falsifier for every inequality in the chain.

pub mod diagnostics;
pub mod error;
pub mod feynman_kac;
pub mod math;
pub mod measures;
pub mod particles;
pub mod rng;
pub mod stability;
pub mod tempering;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
pub use feynman_kac::{LevelSequence, Propagator, Variant};
pub use measures::{metropolis_kernel, MarkovKernel, ProbMeasure, StateFunction, StateSpace};
pub use particles::{ParticleCloud, RunRecord};
pub use tempering::{ProductSpec, TemperedModel, TemperingSpec};
