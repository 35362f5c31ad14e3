//! Pulse-sequence simulation: measurement protocols played against the
//! exchange model, producing the datasets the estimators consume.
//!
//! # Protocols
//!
//! * [`run_two_timescale`] — the central relaxometry sequence. The qubit is
//!   repeatedly reset and its early decay sampled at a handful of delays
//!   (fast axis, microseconds), while the reset polarity alternates between
//!   halves so the defect bath is slowly pumped up and down (slow axis,
//!   milliseconds). Two block schedules are supported, one optimized for
//!   slowly-relaxing spectral regions and one for fast peaks.
//! * [`run_standard_t1`] — a deliberately naive single-exponential lifetime
//!   measurement with conventional scheduling, used to demonstrate how badly
//!   a memoryful bath distorts it.
//! * [`run_bath_prep_t1`] — lifetime curves taken after explicitly driving
//!   the bath to a chosen polarization, which exposes the bi-exponential
//!   structure of the coupled decay.
//!
//! # Timing bookkeeping
//!
//! Every window of every block is one exact propagator segment, so the
//! simulated schedule *is* the accounting: the interaction-on fraction `η`,
//! the suppressed-interaction fraction `ε`, and the window-averaged qubit
//! polarizations `z̄_H`, `z̄_L` reported in a [`MeasurementRecord`] are
//! accumulated from the very segments that were played, not recomputed from
//! nominal durations.

mod engine;
mod t1;

pub use engine::{run_two_timescale, run_two_timescale_with_audit, BlockAudit};
pub use t1::{
    run_bath_prep_t1, run_standard_t1, BathPrepConfig, InitScheme, StandardT1Config, SweepOrder,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which polarity the qubit is reset to during one half of the slow cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Half {
    /// Qubit repeatedly reset toward positive polarization (excited state);
    /// the bath is pumped up.
    High,
    /// Qubit repeatedly reset toward negative polarization (ground state);
    /// the bath is pumped down.
    Low,
}

impl Half {
    /// Single-letter tag used in serialized sample tables.
    pub fn as_str(&self) -> &'static str {
        match self {
            Half::High => "H",
            Half::Low => "L",
        }
    }

    /// Parse the single-letter tag.
    pub fn from_str_tag(s: &str) -> Result<Self> {
        match s {
            "H" => Ok(Half::High),
            "L" => Ok(Half::Low),
            other => Err(Error::Schema(format!(
                "half tag must be \"H\" or \"L\", got {other:?}"
            ))),
        }
    }
}

/// How delays are arranged inside one measurement block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSchedule {
    /// Every delay of the list is played once per unit, each followed by its
    /// own readout: `[prep, idle, delay_i, readout]` for each `i`, then a
    /// trailing wait. With `doubled: true` the unit is played twice per
    /// block, yielding two samples per delay per block.
    ///
    /// Suited to slowly-decaying spectral regions: the block is long, the
    /// delay list spans a wide range.
    SweptDelays { doubled: bool },
    /// One block is a single readout slot; two slots form one sequence:
    ///
    /// ```text
    /// [prep, measured delay, readout, prep, filler delay, wait]   (slot A)
    /// [prep, measured delay, readout, prep, filler delay, wait]   (slot B)
    /// ```
    ///
    /// The delay list (even length `n`, sorted ascending) is split into
    /// complementary pairs `(d[i], d[n-1-i])`; a permutation table with `n`
    /// rows — one row per cycle, looping — assigns one pair to slot A's
    /// (measured, filler) positions and the adjacent pair to slot B's, so
    /// that the interaction-on time between any two consecutive readouts is
    /// the pair sum plus two idle windows, i.e. (nearly) constant. Across
    /// `n` consecutive cycles every block position measures every delay
    /// exactly once, assembling one short decay curve per block position
    /// whose bath state is the same for all of its points. `cycles` must be
    /// a multiple of `n`.
    ///
    /// Suited to fast-decaying peaks, where a long block would smear the
    /// bath state: readout spacing stays at ~200 µs and all delays fit in a
    /// window short enough for a single-exponential slope fit to track even
    /// a strongly hybridized decay.
    CycledDelays,
}

/// Full parameterization of the two-timescale relaxometry sequence.
///
/// All durations in seconds, polarizations in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTimescaleConfig {
    /// Fast-axis readout delays, played according to `schedule`.
    pub delays_s: Vec<f64>,
    /// Qubit state-preparation (pump) window; the qubit is clamped by the
    /// drive and exchange is suppressed.
    pub pump_s: f64,
    /// Post-preparation idle window with exchange fully on; ends with the
    /// half's polarity pulse (identity or π), modeled as an exact reset.
    pub idle_s: f64,
    /// Readout window; exchange suppressed, the sample is drawn after the
    /// window.
    pub readout_s: f64,
    /// Trailing dead time per unit; exchange suppressed.
    pub wait_s: f64,
    /// Measurement blocks per half; each block yields one slow-axis point.
    pub blocks_per_half: usize,
    /// Recorded high/low cycles.
    pub cycles: usize,
    /// Cycles played before recording starts, letting the bath reach its
    /// steady alternating pattern.
    pub warmup_cycles: usize,
    /// Qubit polarization after a reset toward the excited state.
    pub reset_z_e: f64,
    /// Qubit polarization after a reset toward the ground state.
    pub reset_z_g: f64,
    /// Block layout.
    pub schedule: BlockSchedule,
    /// Standard deviation of the additive Gaussian readout noise per sample;
    /// `0` gives noiseless records.
    pub readout_noise_sigma: f64,
}

impl TwoTimescaleConfig {
    /// Wide-range schedule for slowly-relaxing spectral regions: four delays
    /// spanning 1–330 µs, long doubled blocks.
    pub fn swept_four_delay() -> Self {
        Self {
            delays_s: vec![1.0e-6, 40.0e-6, 150.0e-6, 330.0e-6],
            pump_s: 35.0e-6,
            idle_s: 15.0e-6,
            readout_s: 15.4e-6,
            wait_s: 17.4e-6,
            blocks_per_half: 12,
            cycles: 8,
            warmup_cycles: 1,
            reset_z_e: 0.95,
            reset_z_g: -0.95,
            schedule: BlockSchedule::SweptDelays { doubled: true },
            readout_noise_sigma: 0.0,
        }
    }

    /// Constant-spacing schedule for fast-decaying peaks: eight delays
    /// spanning 1–70 µs in complementary pairs, cycled through a permutation
    /// table so each of the twelve block positions per half sweeps the full
    /// list across eight cycles.
    pub fn cycled_eight() -> Self {
        Self {
            delays_s: vec![
                1.0e-6, 10.0e-6, 20.0e-6, 30.0e-6, 40.0e-6, 50.0e-6, 60.0e-6, 70.0e-6,
            ],
            pump_s: 35.0e-6,
            idle_s: 15.0e-6,
            readout_s: 15.4e-6,
            wait_s: 14.6e-6,
            blocks_per_half: 12,
            cycles: 16,
            warmup_cycles: 2,
            reset_z_e: 0.95,
            reset_z_g: -0.95,
            schedule: BlockSchedule::CycledDelays,
            readout_noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays_s.is_empty() {
            return Err(Error::InvalidInput("delay list must not be empty".into()));
        }
        for (i, d) in self.delays_s.iter().enumerate() {
            if !d.is_finite() || *d <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "delays_s[{i}] must be positive and finite, got {d}"
                )));
            }
        }
        for (name, v) in [
            ("pump_s", self.pump_s),
            ("idle_s", self.idle_s),
            ("readout_s", self.readout_s),
            ("wait_s", self.wait_s),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        if self.blocks_per_half == 0 {
            return Err(Error::InvalidInput("blocks_per_half must be at least 1".into()));
        }
        if self.cycles == 0 {
            return Err(Error::InvalidInput("cycles must be at least 1".into()));
        }
        for (name, v) in [("reset_z_e", self.reset_z_e), ("reset_z_g", self.reset_z_g)] {
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in [-1, 1], got {v}"
                )));
            }
        }
        if !self.readout_noise_sigma.is_finite() || self.readout_noise_sigma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "readout_noise_sigma must be non-negative, got {}",
                self.readout_noise_sigma
            )));
        }
        if self.schedule == BlockSchedule::CycledDelays {
            if self.delays_s.len() % 2 != 0 {
                return Err(Error::InvalidInput(format!(
                    "cycled schedule pairs each delay with a complementary one; the delay count ({}) must be even",
                    self.delays_s.len()
                )));
            }
            if self.blocks_per_half % 2 != 0 {
                return Err(Error::InvalidInput(format!(
                    "cycled schedule groups blocks into two-readout sequences; blocks_per_half ({}) must be even",
                    self.blocks_per_half
                )));
            }
            if self.cycles % self.delays_s.len() != 0 {
                return Err(Error::InvalidInput(format!(
                    "cycled schedule sweeps the delay list across cycles; cycles ({}) must be a multiple of the delay count ({})",
                    self.cycles,
                    self.delays_s.len()
                )));
            }
        }
        Ok(())
    }
}

/// One readout outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Reset polarity of the half this sample was taken in.
    pub half: Half,
    /// Block index within the half (slow-axis position).
    pub block: u32,
    /// Slow-axis timestamp, seconds from the start of the half. For the
    /// swept schedule this is the start of the sample's own
    /// prepare-delay-readout unit (units sit at different offsets inside a
    /// block, so it is recorded per sample). For the cycled schedule it is
    /// the start of the sample's slot, so the first slot of every half sits
    /// at T = 0 — the anchor where the slow-axis fit places the bath at the
    /// opposite half's asymptote.
    pub bath_time_s: f64,
    /// Fast-axis delay between reset and readout, seconds.
    pub delay_s: f64,
    /// Measured qubit polarization (true value plus readout noise).
    pub z: f64,
}

/// Everything one run of the two-timescale sequence produced at one qubit
/// frequency: raw samples plus the schedule bookkeeping the slow-axis model
/// needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    /// Schema version of this record.
    pub format_version: u32,
    /// Qubit frequency the sequence was played at, Hz.
    pub qubit_freq_hz: f64,
    /// The exact protocol that was played.
    pub config: TwoTimescaleConfig,
    /// Seed of the per-record noise stream.
    pub seed: u64,
    /// Interaction-on time fraction actually played (idle + delays over
    /// total).
    pub eta: f64,
    /// Suppressed-interaction time fraction actually played (pump + readout
    /// over total).
    pub epsilon: f64,
    /// Window-averaged qubit polarization over the interaction-on windows of
    /// the final high-half block (bath fully pumped up).
    pub zbar_h: f64,
    /// Same for the final low-half block (bath fully pumped down).
    pub zbar_l: f64,
    /// All readout outcomes, in execution order.
    pub samples: Vec<Sample>,
    /// Ground-truth environment the record was simulated from, if the
    /// producer chose to embed it (synthetic data).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<crate::model::Environment>,
}

/// Current [`MeasurementRecord::format_version`].
pub const RECORD_FORMAT_VERSION: u32 = 1;

/// A plain averaged decay curve: mean measured polarization per delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    /// Readout delays, seconds.
    pub delays_s: Vec<f64>,
    /// Mean measured polarization at each delay.
    pub z: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_tags_round_trip() {
        assert_eq!(Half::from_str_tag(Half::High.as_str()).unwrap(), Half::High);
        assert_eq!(Half::from_str_tag(Half::Low.as_str()).unwrap(), Half::Low);
        assert!(Half::from_str_tag("X").is_err());
    }

    #[test]
    fn default_configs_validate() {
        TwoTimescaleConfig::swept_four_delay().validate().unwrap();
        TwoTimescaleConfig::cycled_eight().validate().unwrap();
    }

    #[test]
    fn swept_schedule_has_documented_timing() {
        // 4·(35 + 15 + 15.4) µs + (1 + 40 + 150 + 330) µs + 17.4 µs = 800 µs.
        let c = TwoTimescaleConfig::swept_four_delay();
        let unit = c.delays_s.iter().sum::<f64>()
            + c.delays_s.len() as f64 * (c.pump_s + c.idle_s + c.readout_s)
            + c.wait_s;
        assert!((unit - 800.0e-6).abs() < 1e-12);
    }

    #[test]
    fn cycled_schedule_readout_spacing_is_documented() {
        // The gap between consecutive readout starts is one readout window,
        // two preparations and one complementary delay pair plus the wait:
        // 15.4 + 2·(35 + 15) + 14.6 + 70 µs = 200 µs (201 µs for the pair
        // containing the 1 µs technical minimum).
        let c = TwoTimescaleConfig::cycled_eight();
        let n = c.delays_s.len();
        for i in 0..n / 2 {
            let pair = c.delays_s[i] + c.delays_s[n - 1 - i];
            let gap = c.readout_s + 2.0 * (c.pump_s + c.idle_s) + c.wait_s + pair;
            let expected = if i == 0 { 201.0e-6 } else { 200.0e-6 };
            assert!(
                (gap - expected).abs() < 1e-12,
                "readout gap for pair {i} was {gap}"
            );
        }
    }

    #[test]
    fn cycled_schedule_shape_is_validated() {
        let mut c = TwoTimescaleConfig::cycled_eight();
        c.cycles = 12; // not a multiple of 8
        assert!(c.validate().is_err());
        let mut c = TwoTimescaleConfig::cycled_eight();
        c.delays_s.pop(); // odd count cannot be paired
        assert!(c.validate().is_err());
        let mut c = TwoTimescaleConfig::cycled_eight();
        c.blocks_per_half = 11; // half would end mid-sequence
        assert!(c.validate().is_err());
    }

    #[test]
    fn validation_rejects_bad_durations_and_polarizations() {
        let mut c = TwoTimescaleConfig::swept_four_delay();
        c.delays_s[0] = 0.0;
        assert!(c.validate().is_err());
        let mut c = TwoTimescaleConfig::swept_four_delay();
        c.pump_s = -1.0e-6;
        assert!(c.validate().is_err());
        let mut c = TwoTimescaleConfig::swept_four_delay();
        c.reset_z_e = 1.2;
        assert!(c.validate().is_err());
        let mut c = TwoTimescaleConfig::swept_four_delay();
        c.delays_s.clear();
        assert!(c.validate().is_err());
    }
}
