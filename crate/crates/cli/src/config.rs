//! Run configuration: a TOML document with a fixed key set.
//!
//! ```toml
//! channel = "constant"        # or "rayleigh"
//! modulation = 16
//! snr_db = [0.0, 2.0, 4.0]
//! strategies = ["equal", "joint"]   # optional, default: all
//! seed = 1                     # optional
//! sample_count = 1000          # optional, optimization draws
//! report_samples = 10000       # optional, draws for reported values
//!
//! [optimizer]                  # optional, every key optional
//! delta_grid_step = 0.01
//!
//! [rayleigh]                   # optional
//! channels = 50
//! ```

use std::fmt;
use std::str::FromStr;

use mimo_shaping::model::qam_side;
use mimo_shaping::{Error as CoreError, OptConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    /// `H = [[2, 1], [1, 2]]`.
    #[default]
    Constant,
    /// Seeded i.i.d. `CN(0, 1)` ensemble.
    Rayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Equal power, `Φ = I`, uniform inputs.
    Equal,
    /// Classic waterfilling powers with uniform QAM inputs.
    Waterfilling,
    /// Gaussian-input capacity at the waterfilling powers (Shannon limit).
    Capacity,
    /// Mercury-waterfilling powers with uniform QAM inputs.
    Mercury,
    /// Power and rotation optimized for uniform inputs.
    UniformPrecoder,
    /// Power, rotation and shaping optimized jointly.
    Joint,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Equal,
        Strategy::Waterfilling,
        Strategy::Capacity,
        Strategy::Mercury,
        Strategy::UniformPrecoder,
        Strategy::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Equal => "equal",
            Strategy::Waterfilling => "waterfilling",
            Strategy::Capacity => "capacity",
            Strategy::Mercury => "mercury",
            Strategy::UniformPrecoder => "uniform-precoder",
            Strategy::Joint => "joint",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|k| k.name()).collect();
                invalid("strategies", format!("unknown strategy `{s}`, expected one of {names:?}"))
            })
    }
}

/// Optimizer settings; every key defaults to [`OptConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub delta_grid_step: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_tol: f64,
    pub waterfilling_init: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptConfig::default();
        Self {
            armijo_c: d.armijo_c,
            armijo_shrink: d.armijo_shrink,
            initial_step: d.initial_step,
            min_step: d.min_step,
            delta_grid_step: d.delta_grid_step,
            outer_tol: d.outer_tol,
            max_outer: d.max_outer,
            max_inner: d.max_inner,
            inner_tol: d.inner_tol,
            waterfilling_init: d.waterfilling_init,
        }
    }
}

impl From<&OptimizerSection> for OptConfig {
    fn from(s: &OptimizerSection) -> Self {
        OptConfig {
            armijo_c: s.armijo_c,
            armijo_shrink: s.armijo_shrink,
            initial_step: s.initial_step,
            min_step: s.min_step,
            delta_grid_step: s.delta_grid_step,
            outer_tol: s.outer_tol,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            inner_tol: s.inner_tol,
            waterfilling_init: s.waterfilling_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RayleighSection {
    /// Ensemble size.
    pub channels: usize,
    pub n_r: usize,
    pub n_t: usize,
    /// Scale each realization's singular values to `Σ g² = N_t`.
    pub normalize: bool,
}

impl Default for RayleighSection {
    fn default() -> Self {
        Self {
            channels: 50,
            n_r: 2,
            n_t: 2,
            normalize: true,
        }
    }
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_seed() -> u64 {
    1
}

fn default_samples() -> usize {
    1000
}

fn default_modulation() -> usize {
    16
}

fn default_report_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub channel: ChannelKind,
    /// Square QAM order per antenna.
    #[serde(default = "default_modulation")]
    pub modulation: usize,
    pub snr_db: Vec<f64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Noise draws inside the optimizers.
    #[serde(default = "default_samples")]
    pub sample_count: usize,
    /// Noise draws for every reported MI value.
    #[serde(default = "default_report_samples")]
    pub report_samples: usize,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub rayleigh: RayleighSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            channel: ChannelKind::default(),
            modulation: default_modulation(),
            snr_db: Vec::new(),
            strategies: default_strategies(),
            seed: default_seed(),
            sample_count: default_samples(),
            report_samples: default_report_samples(),
            optimizer: OptimizerSection::default(),
            rayleigh: RayleighSection::default(),
        }
    }
}

impl Config {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn opt_config(&self) -> OptConfig {
        OptConfig::from(&self.optimizer)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Err(e) = qam_side(self.modulation) {
            return Err(invalid("modulation", e.to_string()));
        }
        if self.snr_db.is_empty() {
            return Err(invalid("snr_db", "must list at least one SNR point"));
        }
        if let Some((i, v)) = self.snr_db.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(invalid(format!("snr_db[{i}]"), format!("must be finite, got {v}")));
        }
        if self.strategies.is_empty() {
            return Err(invalid("strategies", "must name at least one strategy"));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(invalid("strategies", format!("`{s}` listed twice")));
            }
        }
        if self.sample_count == 0 {
            return Err(invalid(
                "sample_count",
                "must be at least 1 (the Monte-Carlo estimator needs one noise draw)",
            ));
        }
        if self.report_samples == 0 {
            return Err(invalid(
                "report_samples",
                "must be at least 1 (the Monte-Carlo estimator needs one noise draw)",
            ));
        }
        if let Err(e) = self.opt_config().validate() {
            return Err(match e {
                CoreError::InvalidParameter { name, reason } => {
                    invalid(format!("optimizer.{name}"), reason)
                }
                other => invalid("optimizer", other.to_string()),
            });
        }
        let r = &self.rayleigh;
        for (name, v) in [("channels", r.channels), ("n_r", r.n_r), ("n_t", r.n_t)] {
            if v == 0 {
                return Err(invalid(format!("rayleigh.{name}"), "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Parses `start:stop:step` (inclusive of `stop` up to round-off) or a
/// comma-separated list.
pub fn parse_snr_list(text: &str) -> Result<Vec<f64>, ConfigError> {
    let number = |s: &str| -> Result<f64, ConfigError> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| invalid("snr", format!("`{s}` is not a number")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
            if !(step > 0.0) || !step.is_finite() || !(stop >= start) {
                return Err(invalid("snr", "range needs start <= stop and a positive step"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|k| start + k as f64 * step).collect())
        }
        [_] => text.split(',').map(number).collect(),
        _ => Err(invalid("snr", "expected start:stop:step or a comma-separated list")),
    }
}

/// Parses a comma-separated strategy list.
pub fn parse_strategies(text: &str) -> Result<Vec<Strategy>, ConfigError> {
    text.split(',').map(str::parse).collect()
}
