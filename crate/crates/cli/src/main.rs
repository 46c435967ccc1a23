use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mimo_shaping_cli::config::{parse_snr_list, parse_strategies, ChannelKind, Config};
use mimo_shaping_cli::shape::shape;
use mimo_shaping_cli::sweep::run_sweep;

/// Joint precoding and probabilistic shaping for discrete-input MIMO channels.
#[derive(Debug, Parser)]
#[command(name = "mimo-shaping", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mutual information against SNR for each strategy.
    Sweep(Common),
    /// Ensemble-averaged sweep over Rayleigh realizations.
    Rayleigh {
        #[command(flatten)]
        common: Common,
        /// Number of channel realizations.
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Optimized input distribution at one SNR point.
    Shape {
        #[command(flatten)]
        common: Common,
        /// Write the report as JSON to this file as well.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Noise draws used while optimizing.
    #[arg(long)]
    samples: Option<usize>,
    /// Noise draws used for the reported values.
    #[arg(long)]
    report_samples: Option<usize>,
    /// QAM order per antenna.
    #[arg(long)]
    modulation: Option<usize>,
    /// `start:stop:step` or a comma-separated list, in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    /// Comma-separated strategy names.
    #[arg(long)]
    strategies: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Config::parse(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.samples {
            cfg.sample_count = s;
        }
        if let Some(s) = self.report_samples {
            cfg.report_samples = s;
        }
        if let Some(m) = self.modulation {
            cfg.modulation = m;
        }
        if let Some(s) = &self.snr {
            cfg.snr_db = parse_snr_list(s)?;
        }
        if let Some(s) = &self.strategies {
            cfg.strategies = parse_strategies(s)?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Sweep(common) => {
            let cfg = common.load()?;
            cfg.validate()?;
            let out = run_sweep(&cfg, "sweep", &common.out)?;
            writeln!(stdout, "{} rows -> {}", out.rows.len(), out.results.display())?;
        }
        Command::Rayleigh { common, channels } => {
            let mut cfg = common.load()?;
            cfg.channel = ChannelKind::Rayleigh;
            if let Some(c) = channels {
                cfg.rayleigh.channels = c;
            }
            cfg.validate()?;
            let out = run_sweep(&cfg, "rayleigh", &common.out)?;
            for p in &out.ensemble_points {
                writeln!(
                    stdout,
                    "{:<16} {:>6.1} dB  {:.4} ± {:.4} bits",
                    p.strategy.name(),
                    p.snr_db,
                    p.mean_mi_bits,
                    p.spread_bits
                )?;
            }
        }
        Command::Shape { common, json } => {
            let cfg = common.load()?;
            let [snr_db] = cfg.snr_db[..] else {
                anyhow::bail!("shape takes exactly one SNR point (got {})", cfg.snr_db.len());
            };
            let report = shape(&cfg, snr_db)?;
            write!(stdout, "{report}")?;
            if let Some(path) = json {
                fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
