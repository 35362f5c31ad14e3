//! Drivers for the five run commands.
//!
//! Each driver takes a validated [`RunConfig`], writes its outputs under the
//! configured directory, merges a hashed manifest, and returns a
//! [`RunOutcome`] with the console summary. Frequency sweeps fan out over a
//! bounded worker pool; every point draws its own seed from the master seed
//! by index, so results are identical for any worker count.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    analyze_record_detailed, fit_gamma_sigma_spectrum, fit_gamma_t, fit_single_exponential,
    mean_significant_polarizability, polarizability_estimates, PolarizabilityPoint,
    SpectrumDataset, SpectrumFit, TlsRateEstimate,
};
use crate::calibration::{
    four_measurements, smooth_contrast_table, solve_phase_contrast, PhaseModel, PhaseQuartet,
    Populations3,
};
use crate::error::{Error, Result};
use crate::model::Environment;
use crate::sequence::{
    run_standard_t1, run_two_timescale, DecayCurve, MeasurementRecord, StandardT1Config,
    SweepOrder, TwoTimescaleConfig,
};

use super::config::{
    Command, OutputFormat, PitfallsSpec, ProtocolSpec, ProtocolVariant, RoundtripSpec, RunConfig,
};
use super::manifest::OutputWriter;
use super::records::{
    calibration_scan_csv, contrast_table_csv, decay_curves_csv, list_record_files,
    polarizability_csv, read_record_json, record_file_stem, record_json_bytes,
    record_samples_csv, slopes_csv, spectrum_points_csv, ANALYSIS_DIR, RECORDS_DIR,
};

/// Current `format_version` of every JSON report this module writes.
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Seed salt of the refinement pass, so refined points draw a stream
/// distinct from their first-pass one.
const REFINE_SEED_SALT: u64 = 0x5EED_0000_0000_0001;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The seed of sweep point `index` under master seed `master`. A full
/// 64-bit mix keeps neighboring points statistically independent while the
/// mapping stays pure — the sweep can run on any worker count, in any
/// order, and reproduce the same records.
#[must_use]
pub fn point_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn with_worker_pool<T: Send>(
    workers: Option<usize>,
    job: impl FnOnce() -> T + Send,
) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// Console-facing result of a command.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub command: Command,
    /// Human-readable summary, one line each.
    pub lines: Vec<String>,
    /// `false` only when a command with a pass/fail meaning (roundtrip)
    /// missed a tolerance; plain reporting commands always pass.
    pub passed: bool,
    /// Files written by this invocation (excluding the manifest itself).
    pub files_written: usize,
}

/// Simulate the protocol at every frequency, one record per point.
pub fn simulate_sweep(
    env: &Environment,
    freqs: &[f64],
    protocol: &TwoTimescaleConfig,
    master_seed: u64,
    workers: Option<usize>,
    embed_truth: bool,
) -> Result<Vec<MeasurementRecord>> {
    env.validate()?;
    protocol.validate()?;
    if freqs.is_empty() {
        return Err(Error::InvalidInput("sweep has no frequency points".into()));
    }
    with_worker_pool(workers, || {
        freqs
            .par_iter()
            .enumerate()
            .map(|(i, &freq_hz)| {
                let mut point_env = env.clone();
                point_env.qubit.freq_hz = freq_hz;
                let mut record =
                    run_two_timescale(&point_env, protocol, point_seed(master_seed, i))?;
                if embed_truth {
                    record.truth = Some(point_env);
                }
                Ok(record)
            })
            .collect::<Result<Vec<_>>>()
    })?
}

fn write_records(
    writer: &mut OutputWriter,
    records: &[MeasurementRecord],
    format: OutputFormat,
    master_seed: u64,
) -> Result<()> {
    for (i, record) in records.iter().enumerate() {
        let stem = record_file_stem(i);
        let freq = Some(record.qubit_freq_hz);
        let seed = Some(point_seed(master_seed, i));
        writer.write_tagged(
            &format!("{RECORDS_DIR}/{stem}.json"),
            &record_json_bytes(record)?,
            "record",
            freq,
            seed,
        )?;
        if format == OutputFormat::Csv {
            writer.write_tagged(
                &format!("{RECORDS_DIR}/{stem}.csv"),
                &record_samples_csv(record)?,
                "record-table",
                freq,
                seed,
            )?;
        }
    }
    Ok(())
}

fn write_run_config(writer: &mut OutputWriter, config: &RunConfig) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(config)?;
    bytes.push(b'\n');
    writer.write("run_config.json", &bytes, "config")
}

/// `simulate`: records plus manifest.
pub fn cmd_simulate(config: &RunConfig, base_dir: &Path) -> Result<RunOutcome> {
    let env = config.environment.resolve(base_dir)?;
    let freqs = config
        .sweep
        .as_ref()
        .expect("validated simulate config has a sweep")
        .points();
    let protocol = config.protocol.to_sequence_config()?;
    let records = simulate_sweep(
        &env,
        &freqs,
        &protocol,
        config.seed,
        config.workers,
        config.embed_truth,
    )?;

    let mut writer = OutputWriter::create(&config.output_dir)?;
    write_run_config(&mut writer, config)?;
    write_records(&mut writer, &records, config.format, config.seed)?;
    let files_written = writer.files_written();
    let manifest_entries = writer.finalize()?;

    Ok(RunOutcome {
        command: Command::Simulate,
        lines: vec![
            format!(
                "simulated {} frequency points from {:.3} to {:.3} MHz (seed {})",
                freqs.len(),
                freqs[0] / 1.0e6,
                freqs[freqs.len() - 1] / 1.0e6,
                config.seed
            ),
            format!(
                "wrote {files_written} files to {} ({manifest_entries} manifest entries)",
                config.output_dir.display()
            ),
        ],
        passed: true,
        files_written,
    })
}

/// Everything the inverse pipeline produces for one set of records.
struct AnalysisProducts {
    dataset: SpectrumDataset,
    fit: SpectrumFit,
    gamma_t: Vec<TlsRateEstimate>,
    polarizability: Vec<PolarizabilityPoint>,
    mean_polarizability: Option<f64>,
}

/// Per-defect summary in the spectrum report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub freq_hz: f64,
    pub freq_uncertainty_hz: f64,
    pub g_hz: f64,
    pub g_uncertainty_hz: f64,
    pub gamma2_hz: f64,
    pub gamma2_uncertainty_hz: f64,
    /// Best-fit defect relaxation rate, 1/s.
    pub gamma_t_per_s: f64,
    /// Profile-likelihood interval, 1/s.
    pub gamma_t_lower_per_s: f64,
    pub gamma_t_upper_per_s: f64,
}

/// The spectrum-level fit written as `analysis/spectrum_fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub format_version: u32,
    pub n_points: usize,
    /// Background qubit relaxation rate, 1/s.
    pub gamma_q_per_s: f64,
    pub gamma_q_uncertainty_per_s: f64,
    pub chi2: f64,
    pub dof: usize,
    pub defects: Vec<DefectReport>,
    /// Mean defect polarizability over significant points, when any.
    pub mean_polarizability: Option<f64>,
    pub n_significant_polarizability: usize,
}

fn build_spectrum_report(products: &AnalysisProducts) -> SpectrumReport {
    let defects = products
        .fit
        .defects
        .iter()
        .zip(&products.gamma_t)
        .map(|(d, est)| DefectReport {
            freq_hz: d.freq_hz,
            freq_uncertainty_hz: d.freq_uncertainty_hz,
            g_hz: d.g_hz,
            g_uncertainty_hz: d.g_uncertainty_hz,
            gamma2_hz: d.gamma2_hz,
            gamma2_uncertainty_hz: d.gamma2_uncertainty_hz,
            gamma_t_per_s: est.gamma_t_per_s,
            gamma_t_lower_per_s: est.lower_per_s,
            gamma_t_upper_per_s: est.upper_per_s,
        })
        .collect();
    SpectrumReport {
        format_version: REPORT_FORMAT_VERSION,
        n_points: products.dataset.points.len(),
        gamma_q_per_s: products.fit.gamma_q_per_s,
        gamma_q_uncertainty_per_s: products.fit.gamma_q_uncertainty_per_s,
        chi2: products.fit.chi2,
        dof: products.fit.dof,
        defects,
        mean_polarizability: products.mean_polarizability,
        n_significant_polarizability: products
            .polarizability
            .iter()
            .filter(|p| p.significant)
            .count(),
    }
}

/// Reduce records to spectrum points (in parallel), fit the spectrum, and
/// write every analysis artifact under `analysis/`.
fn analyze_records(
    records: &[MeasurementRecord],
    workers: Option<usize>,
    writer: &mut OutputWriter,
) -> Result<AnalysisProducts> {
    let analyzed = with_worker_pool(workers, || {
        records
            .par_iter()
            .map(analyze_record_detailed)
            .collect::<Result<Vec<_>>>()
    })??;

    for (i, a) in analyzed.iter().enumerate() {
        writer.write_tagged(
            &format!("{ANALYSIS_DIR}/slopes/point_{i:04}.csv"),
            &slopes_csv(a)?,
            "slopes",
            Some(a.point.qubit_freq_hz),
            None,
        )?;
    }

    let mut order: Vec<usize> = (0..analyzed.len()).collect();
    order.sort_by(|&a, &b| {
        analyzed[a]
            .point
            .qubit_freq_hz
            .total_cmp(&analyzed[b].point.qubit_freq_hz)
    });
    let dataset = SpectrumDataset {
        points: order.iter().map(|&i| analyzed[i].point.clone()).collect(),
    };

    let fit = fit_gamma_sigma_spectrum(&dataset.points, None)?;
    let gamma_t = fit_gamma_t(&dataset.points, &fit)?;
    let polarizability = polarizability_estimates(&dataset.points, &fit);
    let mean_polarizability = mean_significant_polarizability(&polarizability);

    writer.write(
        &format!("{ANALYSIS_DIR}/spectrum_points.csv"),
        &spectrum_points_csv(&dataset)?,
        "analysis",
    )?;
    writer.write(
        &format!("{ANALYSIS_DIR}/polarizability.csv"),
        &polarizability_csv(&polarizability)?,
        "analysis",
    )?;

    let products = AnalysisProducts {
        dataset,
        fit,
        gamma_t,
        polarizability,
        mean_polarizability,
    };
    let mut report_bytes = serde_json::to_vec_pretty(&build_spectrum_report(&products))?;
    report_bytes.push(b'\n');
    writer.write(
        &format!("{ANALYSIS_DIR}/spectrum_fit.json"),
        &report_bytes,
        "report",
    )?;
    Ok(products)
}

fn spectrum_summary_lines(products: &AnalysisProducts) -> Vec<String> {
    let mut lines = vec![format!(
        "gamma_q = {:.4} /ms (+/- {:.4}), {} defects, chi2/dof = {:.3}",
        products.fit.gamma_q_per_s / 1.0e3,
        products.fit.gamma_q_uncertainty_per_s / 1.0e3,
        products.fit.defects.len(),
        products.fit.chi2 / products.fit.dof.max(1) as f64
    )];
    for (d, est) in products.fit.defects.iter().zip(&products.gamma_t) {
        lines.push(format!(
            "defect at {:.3} MHz: g = {:.1} kHz, gamma_t = {:.3} /ms in [{:.3}, {:.3}]",
            d.freq_hz / 1.0e6,
            d.g_hz / 1.0e3,
            est.gamma_t_per_s / 1.0e3,
            est.lower_per_s / 1.0e3,
            est.upper_per_s / 1.0e3,
        ));
    }
    if let Some(m) = products.mean_polarizability {
        lines.push(format!("mean defect polarizability = {m:.3}"));
    }
    lines
}

/// `analyze`: read previously simulated records and run the full inverse
/// pipeline.
pub fn cmd_analyze(config: &RunConfig) -> Result<RunOutcome> {
    let files = list_record_files(&config.output_dir)?;
    let records: Vec<MeasurementRecord> = files
        .iter()
        .map(|p| read_record_json(p))
        .collect::<Result<Vec<_>>>()?;

    let mut writer = OutputWriter::create(&config.output_dir)?;
    let products = analyze_records(&records, config.workers, &mut writer)?;
    let files_written = writer.files_written();
    writer.finalize()?;

    let mut lines = vec![format!("analyzed {} records", records.len())];
    lines.extend(spectrum_summary_lines(&products));
    Ok(RunOutcome {
        command: Command::Analyze,
        lines,
        passed: true,
        files_written,
    })
}

/// Truth-versus-fit comparison of one defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectComparison {
    pub true_freq_hz: f64,
    pub true_g_hz: f64,
    pub true_gamma_t_per_s: f64,
    /// The matched fitted defect, when one landed within the frequency
    /// tolerance.
    pub fitted: Option<DefectReport>,
    /// Fit minus truth, Hz.
    pub freq_error_hz: Option<f64>,
    /// `(fit − truth) / truth` of the coupling.
    pub g_rel_error: Option<f64>,
    /// Fit minus truth over the reported uncertainty, when it is nonzero.
    pub freq_pull: Option<f64>,
    pub g_pull: Option<f64>,
    /// Whether the true rate lies inside the (inflated) fitted interval.
    pub gamma_t_in_interval: Option<bool>,
    pub passed: bool,
}

/// The recovery report written as `roundtrip_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub format_version: u32,
    pub passed: bool,
    pub tolerances: RoundtripSpec,
    pub gamma_q_true_per_s: f64,
    pub gamma_q_fit_per_s: f64,
    pub gamma_q_pull: Option<f64>,
    pub gamma_q_passed: bool,
    /// One entry per true defect inside the sweep range.
    pub defects: Vec<DefectComparison>,
    /// Fitted defects that matched no truth.
    pub spurious: Vec<DefectReport>,
    /// Points re-simulated with the fast-peak protocol.
    pub refined_points: usize,
}

fn compare_to_truth(
    truth: &Environment,
    sweep_lo_hz: f64,
    sweep_hi_hz: f64,
    report: &SpectrumReport,
    spec: &RoundtripSpec,
) -> RoundtripReport {
    let gamma_q_error = report.gamma_q_per_s - truth.qubit.gamma_q_per_s;
    let gamma_q_pull = (report.gamma_q_uncertainty_per_s > 0.0)
        .then(|| gamma_q_error / report.gamma_q_uncertainty_per_s);
    let gamma_q_passed = gamma_q_error.abs() <= 0.10 * truth.qubit.gamma_q_per_s
        || gamma_q_pull.is_some_and(|p| p.abs() <= 5.0);

    // Greedy nearest-frequency matching: each fitted defect may absorb at
    // most one truth.
    let in_range: Vec<&crate::model::TlsParams> = truth
        .tls
        .iter()
        .filter(|t| t.freq_hz >= sweep_lo_hz && t.freq_hz <= sweep_hi_hz)
        .collect();
    let mut used = vec![false; report.defects.len()];
    let mut defects = Vec::with_capacity(in_range.len());
    for t in &in_range {
        let nearest = report
            .defects
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .min_by(|(_, a), (_, b)| {
                (a.freq_hz - t.freq_hz)
                    .abs()
                    .total_cmp(&(b.freq_hz - t.freq_hz).abs())
            })
            .map(|(j, d)| (j, *d))
            .filter(|(_, d)| (d.freq_hz - t.freq_hz).abs() <= spec.freq_tol_hz);
        let comparison = match nearest {
            Some((j, d)) => {
                used[j] = true;
                let freq_error = d.freq_hz - t.freq_hz;
                let g_rel = (d.g_hz - t.g_hz) / t.g_hz;
                let infl = spec.gamma_t_interval_inflation;
                let in_interval = t.gamma_t_per_s >= d.gamma_t_lower_per_s / infl
                    && t.gamma_t_per_s <= d.gamma_t_upper_per_s * infl;
                DefectComparison {
                    true_freq_hz: t.freq_hz,
                    true_g_hz: t.g_hz,
                    true_gamma_t_per_s: t.gamma_t_per_s,
                    fitted: Some(d),
                    freq_error_hz: Some(freq_error),
                    g_rel_error: Some(g_rel),
                    freq_pull: (d.freq_uncertainty_hz > 0.0)
                        .then(|| freq_error / d.freq_uncertainty_hz),
                    g_pull: (d.g_uncertainty_hz > 0.0)
                        .then(|| (d.g_hz - t.g_hz) / d.g_uncertainty_hz),
                    gamma_t_in_interval: Some(in_interval),
                    passed: g_rel.abs() <= spec.g_rel_tol && in_interval,
                }
            }
            None => DefectComparison {
                true_freq_hz: t.freq_hz,
                true_g_hz: t.g_hz,
                true_gamma_t_per_s: t.gamma_t_per_s,
                fitted: None,
                freq_error_hz: None,
                g_rel_error: None,
                freq_pull: None,
                g_pull: None,
                gamma_t_in_interval: None,
                passed: false,
            },
        };
        defects.push(comparison);
    }
    let spurious: Vec<DefectReport> = report
        .defects
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(d, _)| *d)
        .collect();

    let passed =
        gamma_q_passed && spurious.is_empty() && defects.iter().all(|c| c.passed);
    RoundtripReport {
        format_version: REPORT_FORMAT_VERSION,
        passed,
        tolerances: *spec,
        gamma_q_true_per_s: truth.qubit.gamma_q_per_s,
        gamma_q_fit_per_s: report.gamma_q_per_s,
        gamma_q_pull,
        gamma_q_passed,
        defects,
        spurious,
        refined_points: 0,
    }
}

/// `roundtrip`: simulate with embedded truth, analyze, and compare.
pub fn cmd_roundtrip(config: &RunConfig, base_dir: &Path) -> Result<RunOutcome> {
    let env = config.environment.resolve(base_dir)?;
    let sweep = config
        .sweep
        .as_ref()
        .expect("validated roundtrip config has a sweep");
    let freqs = sweep.points();
    let protocol = config.protocol.to_sequence_config()?;
    let spec = config.roundtrip.unwrap_or_default();

    let mut records = simulate_sweep(
        &env,
        &freqs,
        &protocol,
        config.seed,
        config.workers,
        true,
    )?;

    let mut writer = OutputWriter::create(&config.output_dir)?;
    write_run_config(&mut writer, config)?;

    // Optional second pass: points that came out too fast for the swept
    // schedule are re-simulated with the constant-spacing schedule, exactly
    // as a fast-decaying peak is handled at the instrument.
    let mut refined_points = 0usize;
    if let Some(threshold) = spec.refine_above_gamma_sigma_per_s {
        let first_pass = with_worker_pool(config.workers, || {
            records
                .par_iter()
                .map(analyze_record_detailed)
                .collect::<Result<Vec<_>>>()
        })??;
        let mut refine_protocol = ProtocolSpec {
            variant: ProtocolVariant::CycledEight,
            readout_noise_sigma: config.protocol.readout_noise_sigma,
            ..ProtocolSpec::default()
        }
        .to_sequence_config()?;
        refine_protocol.reset_z_e = protocol.reset_z_e;
        refine_protocol.reset_z_g = protocol.reset_z_g;
        let refine: Vec<usize> = first_pass
            .iter()
            .enumerate()
            .filter(|(_, a)| a.point.gamma_sigma_per_s > threshold)
            .map(|(i, _)| i)
            .collect();
        refined_points = refine.len();
        let refined: Vec<(usize, MeasurementRecord)> = with_worker_pool(config.workers, || {
            refine
                .par_iter()
                .map(|&i| {
                    let mut point_env = env.clone();
                    point_env.qubit.freq_hz = freqs[i];
                    let seed = point_seed(config.seed ^ REFINE_SEED_SALT, i);
                    let mut record = run_two_timescale(&point_env, &refine_protocol, seed)?;
                    record.truth = Some(point_env);
                    Ok((i, record))
                })
                .collect::<Result<Vec<_>>>()
        })??;
        for (i, record) in refined {
            records[i] = record;
        }
    }

    write_records(&mut writer, &records, config.format, config.seed)?;
    let products = analyze_records(&records, config.workers, &mut writer)?;
    let report = build_spectrum_report(&products);
    let mut comparison = compare_to_truth(
        &env,
        sweep.start_hz,
        sweep.stop_hz,
        &report,
        &spec,
    );
    comparison.refined_points = refined_points;

    let mut bytes = serde_json::to_vec_pretty(&comparison)?;
    bytes.push(b'\n');
    writer.write("roundtrip_report.json", &bytes, "report")?;
    let files_written = writer.files_written();
    writer.finalize()?;

    let mut lines = vec![format!(
        "roundtrip over {} points ({} refined): {}",
        freqs.len(),
        refined_points,
        if comparison.passed { "PASS" } else { "FAIL" }
    )];
    lines.push(format!(
        "gamma_q: true {:.4} /ms, fit {:.4} /ms [{}]",
        comparison.gamma_q_true_per_s / 1.0e3,
        comparison.gamma_q_fit_per_s / 1.0e3,
        if comparison.gamma_q_passed { "ok" } else { "off" }
    ));
    for c in &comparison.defects {
        match &c.fitted {
            Some(_) => lines.push(format!(
                "defect {:.3} MHz: freq err {:+.1} kHz, g err {:+.1}%, gamma_t {} [{}]",
                c.true_freq_hz / 1.0e6,
                c.freq_error_hz.unwrap_or(0.0) / 1.0e3,
                c.g_rel_error.unwrap_or(0.0) * 100.0,
                if c.gamma_t_in_interval == Some(true) {
                    "in interval"
                } else {
                    "outside interval"
                },
                if c.passed { "ok" } else { "MISS" }
            )),
            None => lines.push(format!(
                "defect {:.3} MHz (g = {:.1} kHz): not recovered [MISS]",
                c.true_freq_hz / 1.0e6,
                c.true_g_hz / 1.0e3
            )),
        }
    }
    if !comparison.spurious.is_empty() {
        lines.push(format!(
            "{} spurious defect(s) fitted with no matching truth",
            comparison.spurious.len()
        ));
    }
    let passed = comparison.passed;
    Ok(RunOutcome {
        command: Command::Roundtrip,
        lines,
        passed,
        files_written,
    })
}

/// One conventional-lifetime scheme's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    /// `clock_cycle_rounds_outer`, `active_reset_delays_outer`, …
    pub scheme: String,
    /// Naive single-exponential rate, 1/s.
    pub fitted_rate_per_s: f64,
    pub fitted_rate_uncertainty_per_s: f64,
    /// `1 / fitted_rate`, seconds — the lifetime the naive analysis reports.
    pub naive_t1_s: f64,
    /// `(fitted − true) / true` against the true total rate.
    pub rate_bias_rel: f64,
}

/// The report written as `pitfalls_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitfallsReport {
    pub format_version: u32,
    /// True total relaxation rate `Γ_Σ` at this frequency, 1/s.
    pub true_total_rate_per_s: f64,
    /// `1 / Γ_Σ`, seconds.
    pub true_t1_s: f64,
    pub schemes: Vec<SchemeResult>,
    /// Largest relative difference between any two fitted rates — how much
    /// the "same" measurement disagrees with itself across conventions.
    pub max_scheme_spread_rel: f64,
}

/// Run the four conventional lifetime protocols (fixed-period and
/// reset-based initialization, each with both sweep orders), fit each curve
/// with a naive single exponential, and compare against the true total rate.
pub fn run_pitfall_suite(
    env: &Environment,
    spec: &PitfallsSpec,
    master_seed: u64,
) -> Result<(PitfallsReport, Vec<(String, DecayCurve)>)> {
    env.validate()?;
    let true_rate = env.gamma_sigma_per_s();
    let schemes: [(&str, StandardT1Config); 4] = {
        let mut clock = StandardT1Config::clock_cycle(spec.period_s, spec.points, spec.step_s);
        clock.rounds = spec.rounds;
        clock.readout_noise_sigma = spec.readout_noise_sigma;
        let mut reset = StandardT1Config::active_reset(spec.reset_z, spec.points, spec.step_s);
        reset.rounds = spec.rounds;
        reset.readout_noise_sigma = spec.readout_noise_sigma;
        if let crate::sequence::InitScheme::ActiveReset { relax_s, .. } = &mut reset.init {
            *relax_s = spec.relax_s;
        }
        let mut clock_delays = clock.clone();
        clock_delays.order = SweepOrder::DelaysOuter;
        let mut reset_delays = reset.clone();
        reset_delays.order = SweepOrder::DelaysOuter;
        [
            ("clock_cycle_rounds_outer", clock),
            ("clock_cycle_delays_outer", clock_delays),
            ("active_reset_rounds_outer", reset),
            ("active_reset_delays_outer", reset_delays),
        ]
    };

    let mut results = Vec::with_capacity(4);
    let mut curves = Vec::with_capacity(4);
    for (i, (name, config)) in schemes.into_iter().enumerate() {
        let curve = run_standard_t1(env, &config, point_seed(master_seed, i))?;
        let fit = fit_single_exponential(&curve.delays_s, &curve.z, spec.readout_noise_sigma)?;
        results.push(SchemeResult {
            scheme: name.to_string(),
            fitted_rate_per_s: fit.rate_per_s,
            fitted_rate_uncertainty_per_s: fit.rate_uncertainty_per_s,
            naive_t1_s: 1.0 / fit.rate_per_s,
            rate_bias_rel: (fit.rate_per_s - true_rate) / true_rate,
        });
        curves.push((name.to_string(), curve));
    }

    let mut max_spread = 0.0f64;
    for a in &results {
        for b in &results {
            let spread = (a.fitted_rate_per_s - b.fitted_rate_per_s).abs()
                / a.fitted_rate_per_s.min(b.fitted_rate_per_s);
            max_spread = max_spread.max(spread);
        }
    }

    Ok((
        PitfallsReport {
            format_version: REPORT_FORMAT_VERSION,
            true_total_rate_per_s: true_rate,
            true_t1_s: 1.0 / true_rate,
            schemes: results,
            max_scheme_spread_rel: max_spread,
        },
        curves,
    ))
}

/// `pitfalls`: run the suite and write the report plus the raw curves.
pub fn cmd_pitfalls(config: &RunConfig, base_dir: &Path) -> Result<RunOutcome> {
    let env = config.environment.resolve(base_dir)?;
    let spec = config.pitfalls.unwrap_or_default();
    let (report, curves) = run_pitfall_suite(&env, &spec, config.seed)?;

    let mut writer = OutputWriter::create(&config.output_dir)?;
    write_run_config(&mut writer, config)?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    writer.write("pitfalls_report.json", &bytes, "report")?;
    writer.write("pitfalls_curves.csv", &decay_curves_csv(&curves)?, "analysis")?;
    let files_written = writer.files_written();
    writer.finalize()?;

    let mut lines = vec![format!(
        "true total rate {:.4} /ms (T1 = {:.3} ms)",
        report.true_total_rate_per_s / 1.0e3,
        report.true_t1_s * 1.0e3
    )];
    for s in &report.schemes {
        lines.push(format!(
            "{}: naive T1 = {:.3} ms, rate bias {:+.1}%",
            s.scheme,
            s.naive_t1_s * 1.0e3,
            s.rate_bias_rel * 100.0
        ));
    }
    lines.push(format!(
        "max spread between schemes: {:.1}%",
        report.max_scheme_spread_rel * 100.0
    ));
    Ok(RunOutcome {
        command: Command::Pitfalls,
        lines,
        passed: true,
        files_written,
    })
}

/// The solved calibration written as `calibration_solution.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub format_version: u32,
    pub true_contrast_rad: f64,
    pub fitted_contrast_rad: f64,
    pub contrast_error_rad: f64,
    pub phi_g_rad: f64,
    pub phi_e_rad: f64,
    pub phi_f_rad: f64,
    pub residual_rms_rad: f64,
    /// Recovered second-excited-state population at each scan delay.
    pub p_f: Vec<f64>,
}

/// `calibrate-demo`: synthesize a three-level delay scan, solve it, and
/// smooth a synthetic contrast-versus-frequency table.
pub fn cmd_calibrate_demo(config: &RunConfig, base_dir: &Path) -> Result<RunOutcome> {
    let env = config.environment.resolve(base_dir)?;
    let spec = config.calibration.unwrap_or_default();
    if spec.delays < 2 {
        return Err(Error::InvalidInput(
            "calibration scan needs at least 2 delays".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let noise = if spec.phase_noise_rad > 0.0 {
        Some(
            Normal::new(0.0, spec.phase_noise_rad)
                .map_err(|e| Error::InvalidInput(format!("phase noise: {e}")))?,
        )
    } else {
        None
    };

    // Synthetic truth: leaked second-excited-state population decays away
    // over the scan and is exactly gone at the longest delay (the closure
    // the solver assumes); the first-excited population relaxes toward a
    // small thermal floor.
    let model = PhaseModel::new(-0.8, 0.6, 1.9)?;
    let n = spec.delays;
    let quartets: Vec<PhaseQuartet> = (0..n)
        .map(|j| {
            let delay_s = 20.0e-6 * (j + 1) as f64;
            let p_f = if j + 1 == n {
                0.0
            } else {
                0.30 * (-(delay_s) / 60.0e-6).exp()
            };
            let p_e = 0.20 + 0.25 * (-(delay_s) / 90.0e-6).exp();
            let pop = Populations3::new(1.0 - p_e - p_f, p_e, p_f)?;
            let mut m = four_measurements(&pop, &model);
            if let Some(dist) = &noise {
                for v in &mut m {
                    *v += dist.sample(&mut rng);
                }
            }
            Ok(PhaseQuartet { delay_s, m })
        })
        .collect::<Result<Vec<_>>>()?;

    let solution = solve_phase_contrast(&quartets, true)?;

    // Synthetic dispersive contrast across the sweep band: a smooth cubic
    // plus measurement noise, then polynomial smoothing.
    let (lo, hi) = config.sweep.map_or((200.0e6, 400.0e6), |s| {
        (s.start_hz, s.stop_hz)
    });
    let table_n = spec.table_points.max(spec.smoothing_order + 1);
    let freq_hz: Vec<f64> = (0..table_n)
        .map(|i| lo + (hi - lo) * i as f64 / (table_n - 1).max(1) as f64)
        .collect();
    let raw: Vec<f64> = freq_hz
        .iter()
        .map(|&f| {
            let x = (2.0 * (f - lo) / (hi - lo)) - 1.0;
            let clean = 1.4 + 0.3 * x - 0.2 * x * x + 0.05 * x * x * x;
            match &noise {
                Some(dist) => clean + dist.sample(&mut rng),
                None => clean,
            }
        })
        .collect();
    let smoothed = smooth_contrast_table(&freq_hz, &raw, spec.smoothing_order)?;

    let report = CalibrationReport {
        format_version: REPORT_FORMAT_VERSION,
        true_contrast_rad: model.contrast_rad(),
        fitted_contrast_rad: solution.contrast_rad,
        contrast_error_rad: solution.contrast_rad - model.contrast_rad(),
        phi_g_rad: solution.model.phi_g,
        phi_e_rad: solution.model.phi_e,
        phi_f_rad: solution.model.phi_f,
        residual_rms_rad: solution.residual_rms_rad,
        p_f: solution.populations.iter().map(|p| p.p_f).collect(),
    };

    let mut writer = OutputWriter::create(&config.output_dir)?;
    write_run_config(&mut writer, config)?;
    writer.write(
        "calibration_scan.csv",
        &calibration_scan_csv(&quartets)?,
        "analysis",
    )?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    writer.write("calibration_solution.json", &bytes, "report")?;
    writer.write(
        "contrast_table.csv",
        &contrast_table_csv(&freq_hz, &raw, &smoothed)?,
        "analysis",
    )?;
    let files_written = writer.files_written();
    writer.finalize()?;

    // The environment is loaded for config uniformity; the demo itself is
    // synthetic, so only report which qubit it nominally belongs to.
    let lines = vec![
        format!(
            "calibration scan ({} delays) near {:.1} MHz: contrast {:.6} rad (true {:.6}, err {:+.2e})",
            n,
            env.qubit.freq_hz / 1.0e6,
            report.fitted_contrast_rad,
            report.true_contrast_rad,
            report.contrast_error_rad
        ),
        format!(
            "residual rms {:.3e} rad; smoothed {}-point contrast table (order {})",
            report.residual_rms_rad, table_n, spec.smoothing_order
        ),
    ];
    Ok(RunOutcome {
        command: Command::CalibrateDemo,
        lines,
        passed: true,
        files_written,
    })
}

/// Validate and dispatch a run configuration. `base_dir` is the directory
/// relative file references inside the configuration resolve against.
pub fn run(config: &RunConfig, base_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    match config.command {
        Command::Simulate => cmd_simulate(config, base_dir),
        Command::Analyze => cmd_analyze(config),
        Command::Roundtrip => cmd_roundtrip(config, base_dir),
        Command::Pitfalls => cmd_pitfalls(config, base_dir),
        Command::CalibrateDemo => cmd_calibrate_demo(config, base_dir),
    }
}
