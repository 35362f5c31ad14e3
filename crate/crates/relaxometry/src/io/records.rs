//! On-disk record and table formats.
//!
//! The authoritative record format is versioned JSON
//! ([`crate::sequence::MeasurementRecord`] verbatim); flat CSV tables are
//! derived exports for plotting and spreadsheets. Floats are written with
//! Rust's shortest round-trip formatting, so re-running a run reproduces
//! every byte.

use std::path::{Path, PathBuf};

use crate::analysis::{AnalyzedRecord, SpectrumDataset};
use crate::calibration::PhaseQuartet;
use crate::error::{Error, Result};
use crate::sequence::{DecayCurve, MeasurementRecord, RECORD_FORMAT_VERSION};

/// Subdirectory of the output directory that holds per-point records.
pub const RECORDS_DIR: &str = "records";

/// Subdirectory of the output directory that holds analysis tables.
pub const ANALYSIS_DIR: &str = "analysis";

/// `record_0042` for point 42 — a stable, sortable stem.
#[must_use]
pub fn record_file_stem(index: usize) -> String {
    format!("record_{index:04}")
}

/// Serialize a record as pretty JSON with a trailing newline.
pub fn record_json_bytes(record: &MeasurementRecord) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(record)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parse a record file, rejecting unknown format versions.
pub fn read_record_json(path: &Path) -> Result<MeasurementRecord> {
    let text = std::fs::read_to_string(path)?;
    let record: MeasurementRecord = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("record {}: {e}", path.display())))?;
    if record.format_version != RECORD_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "record {} has format version {}, supported version is {RECORD_FORMAT_VERSION}",
            path.display(),
            record.format_version
        )));
    }
    Ok(record)
}

/// All `records/record_*.json` files under `run_dir`, sorted by name (which
/// sorts by sweep index).
pub fn list_record_files(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = run_dir.join(RECORDS_DIR);
    if !dir.is_dir() {
        return Err(Error::InvalidInput(format!(
            "no records directory at {}; run the simulate command first",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "json")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| s.starts_with("record_"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "records directory {} holds no record_*.json files",
            dir.display()
        )));
    }
    Ok(files)
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    fill(&mut writer)?;
    writer
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))
}

/// Flat sample table of one record: `half,block,T_s,t_s,z`.
pub fn record_samples_csv(record: &MeasurementRecord) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["half", "block", "T_s", "t_s", "z"])?;
        for s in &record.samples {
            w.write_record([
                s.half.as_str().to_string(),
                s.block.to_string(),
                s.bath_time_s.to_string(),
                s.delay_s.to_string(),
                s.z.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Per-frequency reduced quantities of the whole sweep, one row per point.
pub fn spectrum_points_csv(dataset: &SpectrumDataset) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "qubit_freq_hz",
            "gamma_sigma_per_s",
            "gamma_sigma_uncertainty_per_s",
            "gamma_deltadelta_per_s",
            "gamma_deltadelta_uncertainty_per_s",
            "gamma_sigma_h_per_s",
            "gamma_sigma_l_per_s",
            "tau_bath_s",
            "eta",
            "epsilon",
            "z_pump",
            "zbar_h",
            "zbar_l",
        ])?;
        for p in &dataset.points {
            w.write_record([
                p.qubit_freq_hz.to_string(),
                p.gamma_sigma_per_s.to_string(),
                p.gamma_sigma_uncertainty_per_s.to_string(),
                p.gamma_deltadelta_per_s.to_string(),
                p.gamma_deltadelta_uncertainty_per_s.to_string(),
                p.gamma_sigma_h_per_s.to_string(),
                p.gamma_sigma_l_per_s.to_string(),
                p.tau_bath_s.map_or_else(String::new, |t| t.to_string()),
                p.eta.to_string(),
                p.epsilon.to_string(),
                p.z_pump.to_string(),
                p.zbar_h.to_string(),
                p.zbar_l.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Measured and modeled slow-axis slopes of one analyzed record:
/// `half,T_s,zdot_per_s,zdot_sigma_per_s,model_zdot_per_s,residual_per_s`.
pub fn slopes_csv(analyzed: &AnalyzedRecord) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "half",
            "T_s",
            "zdot_per_s",
            "zdot_sigma_per_s",
            "model_zdot_per_s",
            "residual_per_s",
        ])?;
        for (s, model) in analyzed.slopes.iter().zip(&analyzed.model_zdot_per_s) {
            w.write_record([
                s.half.as_str().to_string(),
                s.bath_time_s.to_string(),
                s.zdot_per_s.to_string(),
                s.zdot_sigma_per_s.to_string(),
                model.to_string(),
                (s.zdot_per_s - model).to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Per-frequency polarizability table.
pub fn polarizability_csv(points: &[crate::analysis::PolarizabilityPoint]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "qubit_freq_hz",
            "polarizability",
            "raw",
            "out_of_range",
            "significant",
        ])?;
        for p in points {
            w.write_record([
                p.qubit_freq_hz.to_string(),
                p.polarizability.to_string(),
                p.raw.to_string(),
                p.out_of_range.to_string(),
                p.significant.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// The four conventional-lifetime decay curves, stacked long-form:
/// `scheme,delay_s,z`.
pub fn decay_curves_csv(curves: &[(String, DecayCurve)]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["scheme", "delay_s", "z"])?;
        for (name, curve) in curves {
            for (d, z) in curve.delays_s.iter().zip(&curve.z) {
                w.write_record([name.clone(), d.to_string(), z.to_string()])?;
            }
        }
        Ok(())
    })
}

/// The four phase readouts of a three-level delay scan, one row per delay:
/// `delay_s,m_bare,m_ef,m_ge,m_ge_ef`.
pub fn calibration_scan_csv(quartets: &[PhaseQuartet]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["delay_s", "m_bare", "m_ef", "m_ge", "m_ge_ef"])?;
        for q in quartets {
            w.write_record([
                q.delay_s.to_string(),
                q.m[0].to_string(),
                q.m[1].to_string(),
                q.m[2].to_string(),
                q.m[3].to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Raw and smoothed contrast-versus-frequency table.
pub fn contrast_table_csv(
    freq_hz: &[f64],
    raw_rad: &[f64],
    smoothed_rad: &[f64],
) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["qubit_freq_hz", "contrast_rad", "smoothed_contrast_rad"])?;
        for ((f, r), s) in freq_hz.iter().zip(raw_rad).zip(smoothed_rad) {
            w.write_record([f.to_string(), r.to_string(), s.to_string()])?;
        }
        Ok(())
    })
}
