//! Joint precoding and probabilistic constellation shaping for MIMO channels
//! with discrete (QAM) inputs.
//!
//! The channel `y = H·G·Δx + v` is reduced to parallel streams
//! `ȳ = Σ_H·Σ_G·Φ·Δx + v`. The mutual information `I(x; ȳ)` is estimated by
//! Monte Carlo with common random numbers, and maximized by alternating
//!
//! - projected gradient ascent on the power allocation `Σ_G`,
//! - steepest ascent on the unitary group for the rotation `Φ`,
//! - coordinate search over per-antenna Maxwell–Boltzmann shapings.
//!
//! Baseline allocations (equal power, waterfilling, mercury-waterfilling and
//! the uniform-input precoder) and channel generators live alongside.

pub mod baselines;
pub mod channels;
pub mod error;
pub mod linalg;
pub mod mi;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod shaping;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use mi::{McConfig, MiValue};
pub use model::{
    AntennaShaping, EquivalentChannel, JointConstellation, PhysicalChannel, PrecoderState,
};
pub use optimizer::{OptConfig, OptReport};
