//! Hierarchical regime-switching model of HPC job power draw, with
//! predictive power-cap planning.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`model`] - the generative story for per-job power traces (sticky
//!    hidden regimes + AR(1) drift + measurement noise, tied together by a
//!    population-level parent).
//! 2. [`mcmc`] - Gibbs/Metropolis posterior sampling of the full hierarchy
//!    from a corpus of traces.
//! 3. [`predict`] - freezing the fitted parent and updating/predicting a
//!    single running job quickly (empirical-Bayes style).
//! 4. [`pragmatic`] - a fast plug-in alternative to the full posterior:
//!    mixture + Markov-count + AR(1) point estimates with model averaging
//!    over previously seen jobs.
//! 5. [`degradation`] / [`calibrate`] - worst-case slowdown bounds under a
//!    power cap and calibration checks of the predictive distributions.
//! 6. [`caps`] - allocating a machine-level power budget across running jobs
//!    by minimizing expected degradation (Nelder-Mead over reparameterized
//!    caps that spend the budget exactly).
//! 7. [`sim`] - a whole-machine queue simulation for comparing cap
//!    strategies end to end.
//!
//! Everything is deterministic given a master seed: randomness flows through
//! labeled ChaCha streams ([`rng::SeedTree`]) so results do not depend on
//! thread count and chains can resume bit-for-bit from checkpoints.

pub mod ar1;
pub mod calibrate;
pub mod caps;
pub mod degradation;
pub mod diag;
pub mod dist;
pub mod error;
pub mod io;
pub mod mcmc;
pub mod mixfit;
pub mod model;
pub mod neldermead;
pub mod pragmatic;
pub mod predict;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
