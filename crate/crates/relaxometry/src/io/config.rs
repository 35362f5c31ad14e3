//! Run configuration: the single JSON document that drives the command-line
//! tool.
//!
//! A configuration names one [`Command`], the physical [`EnvironmentSpec`]
//! (inline or referenced by path), the measurement [`ProtocolSpec`], an
//! optional qubit-frequency [`SweepSpec`], the master seed, and the output
//! directory. Command-specific knobs live in optional sections
//! ([`RoundtripSpec`], [`PitfallsSpec`], [`CalibrateSpec`]) so one schema
//! covers every command. All physical fields carry explicit unit suffixes
//! (`_hz`, `_s`, `_per_s`) and the document is versioned through
//! `format_version`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::DEFAULT_SMOOTHING_ORDER;
use crate::error::{Error, Result};
use crate::model::Environment;
use crate::sequence::TwoTimescaleConfig;

/// Current [`RunConfig::format_version`].
pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Which pipeline the tool runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate the configured protocol at every sweep frequency and write
    /// one measurement record per point plus a hashed manifest.
    Simulate,
    /// Load the records previously written to the output directory and run
    /// the full inverse pipeline, emitting spectrum tables, the defect fit,
    /// and per-point residual tables.
    Analyze,
    /// Simulate, analyze, and compare the fit against the embedded truth;
    /// the process exits 0 only if every tolerance is met.
    Roundtrip,
    /// Run the four conventional lifetime protocols on the configured
    /// environment and report how far each naive fit lands from the true
    /// total rate.
    Pitfalls,
    /// Demonstrate the readout-phase calibration: synthesize a three-level
    /// delay scan, solve it, and smooth a contrast-versus-frequency table.
    CalibrateDemo,
}

impl Command {
    /// Stable name, as spelled in configuration files.
    #[must_use]
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze => "analyze",
            Command::Roundtrip => "roundtrip",
            Command::Pitfalls => "pitfalls",
            Command::CalibrateDemo => "calibrate-demo",
        }
    }
}

/// Record-table output format. The structured JSON record is always written
/// (it is what `analyze` reads back); `csv` additionally exports each
/// record's sample table as a flat CSV.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// JSON records plus flat per-record CSV sample tables.
    #[default]
    Csv,
    /// JSON records only.
    Json,
}

/// The environment, either written out inline or referenced by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvironmentSpec {
    /// Path to a JSON file holding an [`Environment`]; relative paths are
    /// resolved against the configuration file's directory.
    File { path: PathBuf },
    /// The environment spelled out in place.
    Inline(Environment),
}

impl EnvironmentSpec {
    /// Load and validate the environment, resolving a relative path against
    /// `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Environment> {
        let env = match self {
            EnvironmentSpec::File { path } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                if !full.is_file() {
                    return Err(Error::InvalidInput(format!(
                        "referenced environment file {} does not exist",
                        full.display()
                    )));
                }
                let text = std::fs::read_to_string(&full)?;
                serde_json::from_str(&text).map_err(|e| {
                    Error::Schema(format!("environment file {}: {e}", full.display()))
                })?
            }
            EnvironmentSpec::Inline(env) => env.clone(),
        };
        env.validate()?;
        Ok(env)
    }
}

/// Qubit-frequency sweep: an inclusive arithmetic grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// First qubit frequency, Hz.
    pub start_hz: f64,
    /// Last qubit frequency (inclusive when the grid lands on it), Hz.
    pub stop_hz: f64,
    /// Grid spacing, Hz.
    pub step_hz: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("start_hz", self.start_hz),
            ("stop_hz", self.stop_hz),
            ("step_hz", self.step_hz),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("sweep {name} must be finite")));
            }
        }
        if self.start_hz >= self.stop_hz {
            return Err(Error::InvalidInput(format!(
                "sweep start ({} Hz) must be below stop ({} Hz)",
                self.start_hz, self.stop_hz
            )));
        }
        if self.step_hz <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "sweep step must be positive, got {} Hz",
                self.step_hz
            )));
        }
        Ok(())
    }

    /// The grid frequencies: `start, start+step, …` up to and including
    /// `stop` when the arithmetic lands on it (within one part in 10⁹ of a
    /// step, so binary representation error cannot drop the endpoint).
    #[must_use]
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let f = self.start_hz + k as f64 * self.step_hz;
            if f > self.stop_hz + 1e-9 * self.step_hz {
                break;
            }
            out.push(f);
            k += 1;
        }
        out
    }
}

/// Baseline schedule a protocol starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolVariant {
    /// [`TwoTimescaleConfig::swept_four_delay`]: wide delay range, long
    /// blocks — for slowly-relaxing spectral regions.
    SweptFourDelay,
    /// [`TwoTimescaleConfig::cycled_eight`]: constant readout spacing — for
    /// fast-decaying peaks.
    CycledEight,
}

/// Protocol selection plus optional overrides of the variant's baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub variant: ProtocolVariant,
    /// Override the baseline delay list, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays_s: Option<Vec<f64>>,
    /// Override the recorded high/low cycle count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<usize>,
    /// Override the blocks per half.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks_per_half: Option<usize>,
    /// Override the warmup cycle count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_cycles: Option<usize>,
    /// Override the per-sample readout noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_noise_sigma: Option<f64>,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            variant: ProtocolVariant::SweptFourDelay,
            delays_s: None,
            cycles: None,
            blocks_per_half: None,
            warmup_cycles: None,
            readout_noise_sigma: None,
        }
    }
}

impl ProtocolSpec {
    /// The fully-resolved (and validated) sequence configuration.
    pub fn to_sequence_config(&self) -> Result<TwoTimescaleConfig> {
        let mut config = match self.variant {
            ProtocolVariant::SweptFourDelay => TwoTimescaleConfig::swept_four_delay(),
            ProtocolVariant::CycledEight => TwoTimescaleConfig::cycled_eight(),
        };
        if let Some(d) = &self.delays_s {
            config.delays_s = d.clone();
        }
        if let Some(c) = self.cycles {
            config.cycles = c;
        }
        if let Some(b) = self.blocks_per_half {
            config.blocks_per_half = b;
        }
        if let Some(w) = self.warmup_cycles {
            config.warmup_cycles = w;
        }
        if let Some(s) = self.readout_noise_sigma {
            config.readout_noise_sigma = s;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Tolerances and options of the `roundtrip` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundtripSpec {
    /// When set, frequency points whose first-pass total rate exceeds this
    /// are re-simulated with the cycled-eight schedule (the fast-peak
    /// protocol) and the analysis is repeated — mirroring how strongly
    /// coupled defects are measured in practice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_above_gamma_sigma_per_s: Option<f64>,
    /// A recovered defect frequency must land within this of the truth, Hz.
    #[serde(default = "default_freq_tol_hz")]
    pub freq_tol_hz: f64,
    /// A recovered coupling must land within this relative error.
    #[serde(default = "default_g_rel_tol")]
    pub g_rel_tol: f64,
    /// The defect-rate check passes when the truth lies inside the fitted
    /// profile-likelihood interval inflated by this factor on both sides.
    /// The raw interval is a ~68% region, so on many defects at once it
    /// *should* miss occasionally; the inflation turns it into a sanity
    /// bound rather than a coverage test.
    #[serde(default = "default_gamma_t_inflation")]
    pub gamma_t_interval_inflation: f64,
}

fn default_freq_tol_hz() -> f64 {
    0.5e6
}
fn default_g_rel_tol() -> f64 {
    0.15
}
fn default_gamma_t_inflation() -> f64 {
    2.0
}

impl Default for RoundtripSpec {
    fn default() -> Self {
        Self {
            refine_above_gamma_sigma_per_s: None,
            freq_tol_hz: default_freq_tol_hz(),
            g_rel_tol: default_g_rel_tol(),
            gamma_t_interval_inflation: default_gamma_t_inflation(),
        }
    }
}

impl RoundtripSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.freq_tol_hz > 0.0)
            || !(self.g_rel_tol > 0.0)
            || !(self.gamma_t_interval_inflation >= 1.0)
        {
            return Err(Error::InvalidInput(
                "roundtrip tolerances must be positive (interval inflation ≥ 1)".into(),
            ));
        }
        if let Some(t) = self.refine_above_gamma_sigma_per_s {
            if !(t > 0.0) {
                return Err(Error::InvalidInput(
                    "roundtrip refine threshold must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Parameters of the `pitfalls` command's four conventional lifetime runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitfallsSpec {
    /// Delay points per curve.
    #[serde(default = "default_pitfall_points")]
    pub points: usize,
    /// Delay spacing, seconds.
    #[serde(default = "default_pitfall_step_s")]
    pub step_s: f64,
    /// Averaging repetitions per delay.
    #[serde(default = "default_pitfall_rounds")]
    pub rounds: usize,
    /// Clock period of the fixed-period schemes, seconds.
    #[serde(default = "default_pitfall_period_s")]
    pub period_s: f64,
    /// Reset polarization of the active-reset schemes.
    #[serde(default = "default_pitfall_reset_z")]
    pub reset_z: f64,
    /// Post-reset settling time, seconds.
    #[serde(default = "default_pitfall_relax_s")]
    pub relax_s: f64,
    /// Per-shot readout noise.
    #[serde(default)]
    pub readout_noise_sigma: f64,
}

fn default_pitfall_points() -> usize {
    30
}
fn default_pitfall_step_s() -> f64 {
    20.0e-6
}
fn default_pitfall_rounds() -> usize {
    8
}
fn default_pitfall_period_s() -> f64 {
    0.5e-3
}
fn default_pitfall_reset_z() -> f64 {
    0.95
}
fn default_pitfall_relax_s() -> f64 {
    10.0e-6
}

impl Default for PitfallsSpec {
    fn default() -> Self {
        Self {
            points: default_pitfall_points(),
            step_s: default_pitfall_step_s(),
            rounds: default_pitfall_rounds(),
            period_s: default_pitfall_period_s(),
            reset_z: default_pitfall_reset_z(),
            relax_s: default_pitfall_relax_s(),
            readout_noise_sigma: 0.0,
        }
    }
}

/// Parameters of the `calibrate-demo` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrateSpec {
    /// Polynomial order of the contrast-table smoothing.
    #[serde(default = "default_smoothing_order")]
    pub smoothing_order: usize,
    /// Additive Gaussian noise on every synthesized readout phase, radians.
    #[serde(default)]
    pub phase_noise_rad: f64,
    /// Number of delays in the synthesized three-level scan.
    #[serde(default = "default_calibrate_delays")]
    pub delays: usize,
    /// Number of frequency points in the synthesized contrast table.
    #[serde(default = "default_calibrate_table_points")]
    pub table_points: usize,
}

fn default_smoothing_order() -> usize {
    DEFAULT_SMOOTHING_ORDER
}
fn default_calibrate_delays() -> usize {
    6
}
fn default_calibrate_table_points() -> usize {
    41
}

impl Default for CalibrateSpec {
    fn default() -> Self {
        Self {
            smoothing_order: default_smoothing_order(),
            phase_noise_rad: 0.0,
            delays: default_calibrate_delays(),
            table_points: default_calibrate_table_points(),
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Schema version of this document.
    #[serde(default = "default_config_version")]
    pub format_version: u32,
    pub command: Command,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    /// Qubit-frequency sweep; required by `simulate`, `analyze` and
    /// `roundtrip`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// Master seed; every stochastic quantity in the run derives from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Directory all outputs are written into (created if missing).
    pub output_dir: PathBuf,
    /// Bound on the sweep's worker threads; defaults to the machine's
    /// parallelism. Outputs are identical for any worker count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub format: OutputFormat,
    /// Embed the simulated environment into each record (synthetic-data
    /// truth for later comparison).
    #[serde(default = "default_true")]
    pub embed_truth: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roundtrip: Option<RoundtripSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitfalls: Option<PitfallsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrateSpec>,
}

fn default_config_version() -> u32 {
    CONFIG_FORMAT_VERSION
}
fn default_seed() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    /// Validate everything that can be checked without touching the
    /// filesystem (the environment reference is checked on resolve).
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "config format version {} is not the supported {CONFIG_FORMAT_VERSION}",
                self.format_version
            )));
        }
        match self.command {
            Command::Simulate | Command::Analyze | Command::Roundtrip => {
                let sweep = self.sweep.as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "command {:?} requires a sweep section",
                        self.command.as_str()
                    ))
                })?;
                sweep.validate()?;
            }
            Command::Pitfalls | Command::CalibrateDemo => {
                if let Some(s) = &self.sweep {
                    s.validate()?;
                }
            }
        }
        self.protocol.to_sequence_config()?;
        if let Some(r) = &self.roundtrip {
            r.validate()?;
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::InvalidInput("workers must be at least 1".into()));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::InvalidInput("output_dir must not be empty".into()));
        }
        Ok(())
    }

    /// Parse and validate a configuration file. Returns the configuration
    /// and the directory relative paths inside it resolve against.
    pub fn from_file(path: &Path) -> Result<(Self, PathBuf)> {
        if !path.is_file() {
            return Err(Error::InvalidInput(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("config file {}: {e}", path.display())))?;
        config.validate()?;
        let base = path
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok((config, base))
    }
}
