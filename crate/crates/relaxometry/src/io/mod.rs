//! Run configuration, dataset serialization, and command drivers.
//!
//! A run is described by one versioned JSON [`RunConfig`] naming a command,
//! an environment, a protocol, and (for sweeps) a frequency grid. [`run`]
//! dispatches it, writes every artifact under the configured output
//! directory, and records a SHA-256 [`Manifest`] of what was written.
//! Identical configurations and seeds reproduce every output byte for byte.

mod commands;
mod config;
mod manifest;
mod records;

pub use commands::{
    cmd_analyze, cmd_calibrate_demo, cmd_pitfalls, cmd_roundtrip, cmd_simulate, point_seed, run,
    run_pitfall_suite, simulate_sweep, CalibrationReport, DefectComparison, DefectReport,
    PitfallsReport, RoundtripReport, RunOutcome, SchemeResult, SpectrumReport,
    REPORT_FORMAT_VERSION,
};
pub use config::{
    CalibrateSpec, Command, EnvironmentSpec, OutputFormat, PitfallsSpec, ProtocolSpec,
    ProtocolVariant, RoundtripSpec, RunConfig, SweepSpec, CONFIG_FORMAT_VERSION,
};
pub use manifest::{
    sha256_hex, Manifest, ManifestEntry, OutputWriter, MANIFEST_FILE_NAME,
    MANIFEST_FORMAT_VERSION,
};
pub use records::{
    list_record_files, read_record_json, record_file_stem, record_json_bytes,
    record_samples_csv, spectrum_points_csv, ANALYSIS_DIR, RECORDS_DIR,
};
