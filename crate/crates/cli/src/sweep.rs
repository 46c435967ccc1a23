//! SNR sweeps over strategies and channel realizations.
//!
//! Every strategy at a given `(snr, channel)` is scored with the same report
//! noise draws, so differences between rows are free of Monte-Carlo noise
//! from the reporting step. Rows are produced strategy by strategy, SNR by
//! SNR, channel by channel, and flushed as soon as each SNR point completes.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mimo_shaping::baselines::{
    gaussian_capacity, mercury_waterfilling, uniform_input_precoder, waterfilling,
};
use mimo_shaping::channels::{constant_channel, rayleigh_sample};
use mimo_shaping::mi::{estimate_mi, McConfig, MiValue};
use mimo_shaping::model::build_joint;
use mimo_shaping::optimizer::{initial_state, joint_optimize};
use mimo_shaping::shaping::input_entropy;
use mimo_shaping::{
    AntennaShaping, EquivalentChannel, OptReport, PhysicalChannel, PrecoderState,
};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ChannelKind, Config, ConfigError, Strategy};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] mimo_shaping::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SweepError>;

pub const SNR_MAPPING: &str =
    "P = N_t (so trace(Σ_G²) = N_t); σ² = N_t / (N_r · 10^(snr_db/10))";

/// Noise variance for an SNR point under the fixed budget `P = N_t`.
pub fn noise_variance(snr_db: f64, n_r: usize, n_t: usize) -> f64 {
    n_t as f64 / (n_r as f64 * 10f64.powf(snr_db / 10.0))
}

const TAG_OPTIMIZE: u64 = 0x6f70_7469_6d69_7a65;
const TAG_REPORT: u64 = 0x7265_706f_7274_0000;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Noise seed for optimization runs on channel `index`.
pub fn optimize_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed ^ TAG_OPTIMIZE) ^ index)
}

/// Noise seed for reported values on channel `index`, shared by all strategies.
pub fn report_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed ^ TAG_REPORT) ^ index)
}

pub fn channel_count(cfg: &Config) -> usize {
    match cfg.channel {
        ChannelKind::Constant => 1,
        ChannelKind::Rayleigh => cfg.rayleigh.channels,
    }
}

pub fn physical_channel(cfg: &Config, index: u64) -> Result<PhysicalChannel> {
    Ok(match cfg.channel {
        ChannelKind::Constant => constant_channel(),
        ChannelKind::Rayleigh => {
            rayleigh_sample(cfg.rayleigh.n_r, cfg.rayleigh.n_t, cfg.seed, index)?
        }
    })
}

fn normalize(cfg: &Config) -> bool {
    match cfg.channel {
        ChannelKind::Constant => true,
        ChannelKind::Rayleigh => cfg.rayleigh.normalize,
    }
}

/// Number of parallel streams, `min(N_r, N_t)`.
pub fn stream_count(cfg: &Config) -> usize {
    match cfg.channel {
        ChannelKind::Constant => 2,
        ChannelKind::Rayleigh => cfg.rayleigh.n_r.min(cfg.rayleigh.n_t),
    }
}

/// One output row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub strategy: Strategy,
    pub snr_db: f64,
    pub channel_index: u64,
    pub mi: MiValue,
    pub power_fraction_strong: f64,
    /// `None` for the Gaussian-input capacity row.
    pub entropy_bits: Option<f64>,
    pub deltas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

/// A row plus the optimizer report for the optimizing strategies.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub row: Row,
    pub report: Option<OptReport>,
    pub precoder: Option<PrecoderState>,
}

/// Scores `strategy` on channel `h` at `snr_db`.
pub fn evaluate(
    cfg: &Config,
    strategy: Strategy,
    h: &PhysicalChannel,
    channel_index: u64,
    snr_db: f64,
) -> Result<Evaluation> {
    let budget = h.n_t() as f64;
    let noise = noise_variance(snr_db, h.n_r(), h.n_t());
    let eq = EquivalentChannel::from_physical(h, noise, normalize(cfg))?;
    let n = eq.dim();
    let order = cfg.modulation;
    let opt_mc = McConfig::new(cfg.sample_count, optimize_seed(cfg.seed, channel_index))?;
    let report_mc = McConfig::new(cfg.report_samples, report_seed(cfg.seed, channel_index))?;
    let opt = cfg.opt_config();
    let uniform = vec![AntennaShaping::uniform(order)?; n];

    let fixed = |power: Vec<f64>| -> Result<(PrecoderState, Vec<AntennaShaping>)> {
        Ok((PrecoderState::initial(n, budget)?.with_power(power)?, uniform.clone()))
    };
    let (precoder, shapings, report) = match strategy {
        Strategy::Equal => (PrecoderState::initial(n, budget)?, uniform.clone(), None),
        Strategy::Waterfilling => {
            let (p, s) = fixed(waterfilling(eq.gains(), budget, noise)?)?;
            (p, s, None)
        }
        Strategy::Mercury => {
            let (p, s) = fixed(mercury_waterfilling(eq.gains(), budget, noise, order)?)?;
            (p, s, None)
        }
        Strategy::Capacity => {
            let power = waterfilling(eq.gains(), budget, noise)?;
            let bits = gaussian_capacity(eq.gains(), &power, noise);
            let prec = PrecoderState::initial(n, budget)?.with_power(power)?;
            let row = Row {
                strategy,
                snr_db,
                channel_index,
                mi: MiValue {
                    bits,
                    std_error: 0.0,
                },
                power_fraction_strong: prec.power_fraction_strong(),
                entropy_bits: None,
                deltas: Vec::new(),
                lambdas: Vec::new(),
            };
            return Ok(Evaluation {
                row,
                report: None,
                precoder: Some(prec),
            });
        }
        Strategy::UniformPrecoder => {
            let r = uniform_input_precoder(&eq, order, budget, &opt_mc, &opt)?;
            (r.precoder.clone(), r.shapings.clone(), Some(r))
        }
        Strategy::Joint => {
            let (prec, shapings) = initial_state(&eq, order, budget, &opt)?;
            let r = joint_optimize(&eq, &prec, &shapings, &opt_mc, &opt)?;
            (r.precoder.clone(), r.shapings.clone(), Some(r))
        }
    };
    let joint = build_joint(&shapings)?;
    let mi = estimate_mi(&eq, &precoder, &joint, &report_mc)?;
    let row = Row {
        strategy,
        snr_db,
        channel_index,
        mi,
        power_fraction_strong: precoder.power_fraction_strong(),
        entropy_bits: Some(input_entropy(&joint)),
        deltas: shapings.iter().map(|s| s.delta()).collect(),
        lambdas: shapings.iter().map(|s| s.lambda()).collect(),
    };
    Ok(Evaluation {
        row,
        report,
        precoder: Some(precoder),
    })
}

pub fn csv_header(streams: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "strategy",
        "snr_db",
        "channel_index",
        "mi_bits",
        "mi_stderr",
        "power_fraction_strong",
        "entropy_bits",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=streams).map(|j| format!("delta_{j}")));
    h.extend((1..=streams).map(|j| format!("lambda_{j}")));
    h
}

fn csv_record(row: &Row, streams: usize) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut r = vec![
        row.strategy.to_string(),
        row.snr_db.to_string(),
        row.channel_index.to_string(),
        row.mi.bits.to_string(),
        row.mi.std_error.to_string(),
        row.power_fraction_strong.to_string(),
        opt(row.entropy_bits),
    ];
    for values in [&row.deltas, &row.lambdas] {
        r.extend((0..streams).map(|j| opt(values.get(j).copied())));
    }
    r
}

/// Plain mean over channels of one `(strategy, snr)` group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsemblePoint {
    pub strategy: Strategy,
    pub snr_db: f64,
    pub channels: usize,
    pub mean_mi_bits: f64,
    /// Sample standard deviation across channels.
    pub spread_bits: f64,
    pub mean_stderr: f64,
    pub mean_power_fraction_strong: f64,
}

impl EnsemblePoint {
    fn from_rows(rows: &[Row]) -> Self {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&Row) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean_mi_bits = mean(&|r| r.mi.bits);
        let spread_bits = if rows.len() > 1 {
            (rows.iter().map(|r| (r.mi.bits - mean_mi_bits).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            strategy: rows[0].strategy,
            snr_db: rows[0].snr_db,
            channels: rows.len(),
            mean_mi_bits,
            spread_bits,
            mean_stderr: mean(&|r| r.mi.std_error),
            mean_power_fraction_strong: mean(&|r| r.power_fraction_strong),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    library_version: &'static str,
    command: &'a str,
    seed: u64,
    snr_mapping: &'static str,
    budget: usize,
    streams: usize,
    seeds: SeedNotes,
    columns: Vec<String>,
    files: Vec<&'static str>,
    config: &'a Config,
}

#[derive(Debug, Serialize)]
struct SeedNotes {
    channels: &'static str,
    optimization: &'static str,
    report: &'static str,
}

/// Files written by a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub results: PathBuf,
    pub manifest: PathBuf,
    pub ensemble: Option<PathBuf>,
    pub rows: Vec<Row>,
    pub ensemble_points: Vec<EnsemblePoint>,
}

/// Runs every `(strategy, snr, channel)` combination of `cfg`, writing
/// `results.csv`, `manifest.json` and, for channel ensembles,
/// `ensemble.csv` under `out_dir`.
pub fn run_sweep(cfg: &Config, command: &str, out_dir: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let streams = stream_count(cfg);
    let ensemble = cfg.channel == ChannelKind::Rayleigh;
    let results = out_dir.join("results.csv");
    let manifest_path = out_dir.join("manifest.json");
    let ensemble_path = ensemble.then(|| out_dir.join("ensemble.csv"));

    let budget = match cfg.channel {
        ChannelKind::Constant => 2,
        ChannelKind::Rayleigh => cfg.rayleigh.n_t,
    };
    let mut files = vec!["results.csv", "manifest.json"];
    if ensemble {
        files.push("ensemble.csv");
    }
    let manifest = Manifest {
        tool: "mimo-shaping",
        library_version: mimo_shaping::VERSION,
        command,
        seed: cfg.seed,
        snr_mapping: SNR_MAPPING,
        budget,
        streams,
        seeds: SeedNotes {
            channels: "Rayleigh realization k is drawn from (seed, k)",
            optimization: "optimizers on channel k use a seed derived from (seed, k)",
            report: "reported values on channel k use a second seed derived from (seed, k), shared by all strategies and SNR points",
        },
        columns: csv_header(streams),
        files,
        config: cfg,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;

    let channels: Vec<PhysicalChannel> = (0..channel_count(cfg) as u64)
        .map(|k| physical_channel(cfg, k))
        .collect::<Result<_>>()?;

    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(&results)?));
    writer.write_record(csv_header(streams))?;
    writer.flush()?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &strategy in &cfg.strategies {
        for &snr_db in &cfg.snr_db {
            let group: Vec<Row> = channels
                .par_iter()
                .enumerate()
                .map(|(k, h)| evaluate(cfg, strategy, h, k as u64, snr_db).map(|e| e.row))
                .collect::<Result<_>>()?;
            for row in &group {
                writer.write_record(csv_record(row, streams))?;
            }
            writer.flush()?;
            points.push(EnsemblePoint::from_rows(&group));
            rows.extend(group);
        }
    }
    writer.flush()?;

    if let Some(path) = &ensemble_path {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for p in &points {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    Ok(RunOutput {
        results,
        manifest: manifest_path,
        ensemble: ensemble_path,
        rows,
        ensemble_points: points,
    })
}
