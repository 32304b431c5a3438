//! Noise-boosted expectation-maximization (NEM) for one-dimensional Gaussian
//! mixture models.
//!
//! The library provides the noiseless EM building blocks ([`mixture`]), the
//! valid-noise machinery for additive and multiplicative injection
//! ([`noise`]), the noise-injected iteration loop ([`runner`]), Monte-Carlo
//! checks of the underlying positivity condition ([`diagnostics`]), and an
//! experiment harness that sweeps noise intensity and bootstraps convergence
//! speed-up claims ([`harness`]).

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod mixture;
pub mod noise;
pub mod runner;

pub use error::{NemError, Result};
pub use mixture::{Dataset, GmmParams, ResponsibilityMatrix};
pub use noise::{InjectionMode, NoisePolicy, NoiseSpec};
pub use runner::{run_em, run_nem, InitStrategy, RunConfig, TrialRecord};
