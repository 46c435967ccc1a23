//! Library side of the `mimo-shaping` command: configuration, sweeps over
//! strategies and SNR points, and CSV/JSON result files.

pub mod config;
pub mod shape;
pub mod sweep;

pub use config::{ChannelKind, Config, ConfigError, Strategy};
pub use sweep::{run_sweep, Row, RunOutput, SweepError};
