//! Joint device-activity detection and mmWave channel estimation by vector
//! approximate message passing.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`] draws synthetic uplink instances `Y = U X + Z`;
//! - [`denoise`] holds the row denoisers (group soft threshold, on-grid hard
//!   threshold, off-grid greedy super-resolution);
//! - [`amp`] runs the AMP iteration with any [`denoise::Denoiser`];
//! - [`state_evolution`] predicts the per-iteration error of a run;
//! - [`metrics`] turns estimates into detection decisions and error figures;
//! - [`experiment`] orchestrates seeded Monte Carlo sweeps and CSV output.

pub mod error;
pub mod linalg;
pub mod par;
pub mod rng;
pub mod scenario;
pub mod state_evolution;
pub mod metrics;
pub mod experiment;
pub mod denoise;
pub mod amp;

pub use error::{Error, Result};
pub use linalg::C64;
