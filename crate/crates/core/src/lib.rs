//! Smoothed online learning with lazy follow-the-perturbed-leader.

pub mod analysis;
pub mod error;
pub mod ftpl;
pub mod oracle;
pub mod perturbation;
pub mod planning;
pub mod polynomial;
pub mod pwa_env;
pub mod rng;
pub mod smoothing;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
