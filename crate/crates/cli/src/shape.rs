//! The optimized input distribution at a single operating point.

use std::fmt;

use mimo_shaping::AntennaShaping;
use serde::Serialize;

use crate::config::{Config, Strategy};
use crate::sweep::{evaluate, physical_channel, Result};

/// Symbols of one energy level and their common probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ring {
    /// `‖x‖²` on the unscaled integer grid.
    pub energy: f64,
    pub symbols: usize,
    pub prob_each: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AntennaReport {
    pub delta: f64,
    pub lambda: f64,
    pub entropy_bits: f64,
    pub rings: Vec<Ring>,
}

impl AntennaReport {
    pub fn from_shaping(s: &AntennaShaping) -> Self {
        let mut rings: Vec<Ring> = Vec::new();
        for (x, &p) in s.alphabet().iter().zip(s.probs()) {
            let energy = x.norm_sqr();
            match rings.iter_mut().find(|r| r.energy == energy) {
                Some(r) => r.symbols += 1,
                None => rings.push(Ring {
                    energy,
                    symbols: 1,
                    prob_each: p,
                }),
            }
        }
        rings.sort_by(|a, b| a.energy.total_cmp(&b.energy));
        Self {
            delta: s.delta(),
            lambda: s.lambda(),
            entropy_bits: s.entropy_bits(),
            rings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    pub snr_db: f64,
    pub modulation: usize,
    pub mi_bits: f64,
    pub mi_stderr: f64,
    pub power_diag: Vec<f64>,
    pub antennas: Vec<AntennaReport>,
}

/// Runs the joint optimizer at `snr_db` on the configured channel
/// (realization 0 for an ensemble).
pub fn shape(cfg: &Config, snr_db: f64) -> Result<ShapeReport> {
    cfg.validate()?;
    let h = physical_channel(cfg, 0)?;
    let e = evaluate(cfg, Strategy::Joint, &h, 0, snr_db)?;
    let report = e.report.expect("joint evaluation carries its report");
    Ok(ShapeReport {
        snr_db,
        modulation: cfg.modulation,
        mi_bits: e.row.mi.bits,
        mi_stderr: e.row.mi.std_error,
        power_diag: report.precoder.power_diag().to_vec(),
        antennas: report.shapings.iter().map(AntennaReport::from_shaping).collect(),
    })
}

impl fmt::Display for ShapeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}-QAM at {} dB: I = {:.4} ± {:.4} bits, powers {:?}",
            self.modulation, self.snr_db, self.mi_bits, self.mi_stderr, self.power_diag
        )?;
        for (j, a) in self.antennas.iter().enumerate() {
            writeln!(
                f,
                "antenna {}: delta = {:.5}, lambda = {:.6}, entropy = {:.4} bits",
                j + 1,
                a.delta,
                a.lambda,
                a.entropy_bits
            )?;
            for r in &a.rings {
                writeln!(
                    f,
                    "  |x|^2 = {:>4}: {:>2} symbols, p = {:.6} each",
                    r.energy, r.symbols, r.prob_each
                )?;
            }
        }
        Ok(())
    }
}
