//! Execution engine for the two-timescale relaxometry sequence.
//!
//! # Algorithm
//!
//! Every window type of the sequence (preparation, idle, each distinct
//! delay, readout, wait) maps to one precomputed propagator segment, so a
//! full run is a chain of small matrix–vector products over the exact
//! solution of the rate equations — no time discretization anywhere.
//!
//! A run plays `warmup_cycles + cycles` cycles; each cycle is a high half
//! followed by a low half; each half is `blocks_per_half` blocks; blocks are
//! laid out by the configured [`BlockSchedule`]. The building unit is:
//!
//! ```text
//! prep  = [pump: qubit clamped, exchange suppressed]
//!         [idle: exchange on]
//!         [polarity pulse: z set to the half's reset target]
//! then    [delay: exchange on] …optionally followed by… [readout + sample]
//! ```
//!
//! The swept schedule strings one such unit per delay into a long block with
//! a readout after every delay; the cycled schedule plays per block one
//! measured unit (with readout) and one filler unit (without), drawing the
//! two delays from complementary pairs via a per-cycle permutation table so
//! consecutive readouts always bracket the same interaction-on time.
//!
//! The readout sample is drawn *after* the readout window has evolved the
//! state (exchange suppressed), mirroring a detector that reports at the end
//! of its integration window.
//!
//! # Bookkeeping
//!
//! Interaction-on seconds, suppressed seconds (pump + readout), total
//! seconds, and the exact `∫Z dt` over interaction-on windows are tallied
//! per block from the segments actually played. These feed the record-level
//! duty fractions `η`, `ε` and the saturated window averages `z̄_H`, `z̄_L`
//! (taken from the final block of each half in the final cycle, where the
//! bath is maximally pumped).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{AffinePropagator, Environment, PinnedPropagator, SegmentOp, SystemState};
use crate::sequence::{
    BlockSchedule, Half, MeasurementRecord, Sample, TwoTimescaleConfig, RECORD_FORMAT_VERSION,
};

/// Precomputed segments for one (environment, config) pair.
struct Segments {
    pump: PinnedPropagator,
    pump_s: f64,
    idle: SegmentOp,
    delays: Vec<SegmentOp>,
    readout: SegmentOp,
    wait: SegmentOp,
}

impl Segments {
    fn build(env: &Environment, config: &TwoTimescaleConfig) -> Result<Self> {
        let on = AffinePropagator::new(env, true)?;
        let off = AffinePropagator::new(env, false)?;
        Ok(Self {
            // The pump drive pushes the qubit toward the excited state in
            // both halves; the low half's polarity comes from a π pulse at
            // the end of the idle window.
            pump: PinnedPropagator::new(env, config.reset_z_e)?,
            pump_s: config.pump_s,
            idle: on.segment_op(config.idle_s)?,
            delays: config
                .delays_s
                .iter()
                .map(|d| on.segment_op(*d))
                .collect::<Result<Vec<_>>>()?,
            readout: off.segment_op(config.readout_s)?,
            wait: off.segment_op(config.wait_s)?,
        })
    }
}

/// Per-block time and polarization tallies.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    on_s: f64,
    suppressed_s: f64,
    dead_s: f64,
    z_integral: f64,
}

impl Tally {
    fn on(&mut self, duration_s: f64, z_integral: f64) {
        self.on_s += duration_s;
        self.z_integral += z_integral;
    }

    fn suppressed(&mut self, duration_s: f64) {
        self.suppressed_s += duration_s;
    }

    fn dead(&mut self, duration_s: f64) {
        self.dead_s += duration_s;
    }

    fn total_s(&self) -> f64 {
        self.on_s + self.suppressed_s + self.dead_s
    }
}

/// Diagnostic snapshot of one executed block, for schedule and steady-state
/// verification.
#[derive(Debug, Clone)]
pub struct BlockAudit {
    /// Absolute cycle index, warmup included.
    pub cycle: u32,
    /// Whether this block's samples went into the record.
    pub recorded: bool,
    pub half: Half,
    /// Block index within the half.
    pub block: u32,
    /// Time from half start to block start, seconds.
    pub bath_time_s: f64,
    /// Actual block duration, seconds.
    pub block_duration_s: f64,
    /// Interaction-on seconds inside the block (idle + delays).
    pub interaction_on_s: f64,
    /// Suppressed-interaction seconds inside the block (pump + readout).
    pub suppressed_s: f64,
    /// Window-averaged qubit polarization over the block's interaction-on
    /// windows.
    pub zbar: f64,
    /// System state at the end of the block.
    pub end_state: SystemState,
}

/// Delay-table lookup for the cycled schedule: which delay indices a block
/// measures and fills, given the cycle.
///
/// The delay list is split into complementary pairs `P_i = (i, n-1-i)` for
/// `i < n/2`. The permutation table has `n` rows, two per pair: row `2i`
/// assigns `P_i` to the even (first-readout) slots and the cyclically next
/// pair `P_j`, `j = (i+1) mod n/2`, to the odd slots; row `2i+1` repeats
/// that with both pairs' orientations flipped. Within a slot the measured
/// delay and its filler come from *different* pairs — the pairing
/// constraint lives between consecutive readouts, where filler-of-one plus
/// measured-of-the-next always completes a pair, keeping the interaction-on
/// gap constant.
///
/// Columns then work out so that over `n` consecutive cycles every slot
/// parity measures every delay exactly once.
fn cycled_pair_indices(n_delays: usize, cycle: usize, block: usize) -> (usize, usize) {
    let q = n_delays / 2;
    let row = cycle % n_delays;
    let (i, flipped) = (row / 2, row % 2 == 1);
    let j = (i + 1) % q;
    let (lo_i, hi_i) = (i, n_delays - 1 - i);
    let (lo_j, hi_j) = (j, n_delays - 1 - j);
    match (block % 2 == 0, flipped) {
        (true, false) => (lo_i, lo_j),
        (true, true) => (hi_i, hi_j),
        (false, false) => (hi_j, hi_i),
        (false, true) => (lo_j, lo_i),
    }
}

/// Play the two-timescale sequence and also return a per-block audit trail.
///
/// The audit is what integration tests use to check duty-cycle bookkeeping
/// and bath saturation against closed-form predictions; production sweeps
/// use [`run_two_timescale`], which discards it.
pub fn run_two_timescale_with_audit(
    env: &Environment,
    config: &TwoTimescaleConfig,
    seed: u64,
) -> Result<(MeasurementRecord, Vec<BlockAudit>)> {
    env.validate()?;
    config.validate()?;
    let segs = Segments::build(env, config)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut state = SystemState::thermal(env);
    let mut samples = Vec::new();
    let mut audits = Vec::new();

    let total_cycles = config.warmup_cycles + config.cycles;
    let n_delays = config.delays_s.len();
    // Run-level tallies over recorded cycles.
    let (mut run_on, mut run_suppressed, mut run_total) = (0.0_f64, 0.0_f64, 0.0_f64);
    let (mut zbar_h, mut zbar_l) = (None, None);

    let sample_z = |state: &SystemState, rng: &mut ChaCha12Rng| -> f64 {
        if config.readout_noise_sigma > 0.0 {
            let noise: f64 = StandardNormal.sample(rng);
            state.z() + config.readout_noise_sigma * noise
        } else {
            state.z()
        }
    };

    // One preparation: pump (clamped), idle (interaction on), polarity pulse.
    let play_prep = |state: &mut SystemState, target_z: f64, tally: &mut Tally| -> Result<()> {
        *state = segs.pump.step(state, segs.pump_s)?;
        tally.suppressed(segs.pump_s);
        let (after_idle, z_int) = segs.idle.apply_with_integral(state)?;
        *state = after_idle;
        tally.on(segs.idle.duration_s(), z_int);
        *state = state.with_z(target_z)?;
        Ok(())
    };

    for cycle in 0..total_cycles {
        let recorded = cycle >= config.warmup_cycles;
        let last_cycle = cycle + 1 == total_cycles;
        for half in [Half::High, Half::Low] {
            let target_z = match half {
                Half::High => config.reset_z_e,
                Half::Low => config.reset_z_g,
            };
            let mut half_time_s = 0.0;
            for block in 0..config.blocks_per_half {
                let bath_time_s = half_time_s;
                let mut tally = Tally::default();
                match config.schedule {
                    BlockSchedule::SweptDelays { doubled } => {
                        let plays = if doubled { 2 } else { 1 };
                        for _ in 0..plays {
                            for (i, delay_op) in segs.delays.iter().enumerate() {
                                // Stamp each sample with its own unit's start
                                // so averaged timestamps sit mid-block, where
                                // the block-averaged bath state effectively
                                // lives.
                                let unit_time_s = bath_time_s + tally.total_s();
                                play_prep(&mut state, target_z, &mut tally)?;
                                let (after_delay, z_int) = delay_op.apply_with_integral(&state)?;
                                state = after_delay;
                                tally.on(delay_op.duration_s(), z_int);
                                state = segs.readout.apply(&state)?;
                                tally.suppressed(segs.readout.duration_s());
                                if recorded {
                                    samples.push(Sample {
                                        half,
                                        block: block as u32,
                                        bath_time_s: unit_time_s,
                                        delay_s: config.delays_s[i],
                                        z: sample_z(&state, &mut rng),
                                    });
                                }
                            }
                            state = segs.wait.apply(&state)?;
                            tally.dead(segs.wait.duration_s());
                        }
                    }
                    BlockSchedule::CycledDelays => {
                        // One block is one readout slot; the cycle's
                        // permutation-table row fixes which complementary
                        // pair supplies the measured and filler delays (see
                        // `cycled_pair_indices`). The sample is stamped at
                        // the slot's start: the first slot of each half then
                        // sits at T = 0, where the slow-axis fit anchors the
                        // bath at the opposite half's asymptote — during the
                        // preparation that precedes the first measurement
                        // the bath state is still essentially the one the
                        // previous half left behind.
                        let (measured, filler) =
                            cycled_pair_indices(n_delays, cycle, block);
                        play_prep(&mut state, target_z, &mut tally)?;
                        let (after_meas, z_int) =
                            segs.delays[measured].apply_with_integral(&state)?;
                        state = after_meas;
                        tally.on(segs.delays[measured].duration_s(), z_int);
                        state = segs.readout.apply(&state)?;
                        tally.suppressed(segs.readout.duration_s());
                        if recorded {
                            samples.push(Sample {
                                half,
                                block: block as u32,
                                bath_time_s,
                                delay_s: config.delays_s[measured],
                                z: sample_z(&state, &mut rng),
                            });
                        }
                        play_prep(&mut state, target_z, &mut tally)?;
                        let (after_filler, z_int) =
                            segs.delays[filler].apply_with_integral(&state)?;
                        state = after_filler;
                        tally.on(segs.delays[filler].duration_s(), z_int);
                        state = segs.wait.apply(&state)?;
                        tally.dead(segs.wait.duration_s());
                    }
                }
                half_time_s += tally.total_s();
                if recorded {
                    run_on += tally.on_s;
                    run_suppressed += tally.suppressed_s;
                    run_total += tally.total_s();
                }
                let zbar = tally.z_integral / tally.on_s;
                if last_cycle && block + 1 == config.blocks_per_half {
                    match half {
                        Half::High => zbar_h = Some(zbar),
                        Half::Low => zbar_l = Some(zbar),
                    }
                }
                audits.push(BlockAudit {
                    cycle: cycle as u32,
                    recorded,
                    half,
                    block: block as u32,
                    bath_time_s,
                    block_duration_s: tally.total_s(),
                    interaction_on_s: tally.on_s,
                    suppressed_s: tally.suppressed_s,
                    zbar,
                    end_state: state.clone(),
                });
            }
        }
    }

    let record = MeasurementRecord {
        format_version: RECORD_FORMAT_VERSION,
        qubit_freq_hz: env.qubit.freq_hz,
        config: config.clone(),
        seed,
        eta: run_on / run_total,
        epsilon: run_suppressed / run_total,
        zbar_h: zbar_h.expect("at least one high block is always played"),
        zbar_l: zbar_l.expect("at least one low block is always played"),
        samples,
        truth: None,
    };
    Ok((record, audits))
}

/// Play the two-timescale sequence at the environment's qubit frequency.
///
/// Deterministic for a given `(env, config, seed)` triple: the only random
/// element is the additive readout noise.
pub fn run_two_timescale(
    env: &Environment,
    config: &TwoTimescaleConfig,
    seed: u64,
) -> Result<MeasurementRecord> {
    run_two_timescale_with_audit(env, config, seed).map(|(record, _)| record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QubitParams;
    use approx::assert_relative_eq;

    fn quiet_env() -> Environment {
        Environment {
            qubit: QubitParams {
                freq_hz: 3.0e8,
                gamma_q_per_s: 555.6,
                z_eq: -0.2,
            },
            tls: vec![],
            gamma_qt_eff_per_s: 0.0,
        }
    }

    #[test]
    fn swept_schedule_duty_fractions_match_nominal_arithmetic() {
        let env = quiet_env();
        let config = TwoTimescaleConfig::swept_four_delay();
        let record = run_two_timescale(&env, &config, 1).unwrap();
        // Per 800 µs unit: interaction on = 4·15 + (1+40+150+330) = 581 µs,
        // suppressed = 4·(35 + 15.4) = 201.6 µs.
        assert_relative_eq!(record.eta, 581.0 / 800.0, epsilon = 1e-12);
        assert_relative_eq!(record.epsilon, 201.6 / 800.0, epsilon = 1e-12);
    }

    #[test]
    fn cycled_schedule_duty_fractions_match_nominal_arithmetic() {
        let env = quiet_env();
        let config = TwoTimescaleConfig::cycled_eight();
        let record = run_two_timescale(&env, &config, 1).unwrap();
        // Per two-slot sequence: interaction on = 4·15 µs idle + two
        // complementary pair sums; suppressed = 4·35 µs pump + 2·15.4 µs
        // readout. Across the 8-row table the adjacent pair sums are
        // (71+70, 70+70, 70+70, 70+71), each row twice.
        let on: f64 = 8.0 * 60.0 + 2.0 * (141.0 + 140.0 + 140.0 + 141.0);
        let suppressed: f64 = 8.0 * 170.8;
        let total: f64 = on + suppressed + 8.0 * 2.0 * 14.6;
        assert_relative_eq!(record.eta, on / total, epsilon = 1e-9);
        assert_relative_eq!(record.epsilon, suppressed / total, epsilon = 1e-9);
    }

    #[test]
    fn record_is_deterministic_for_fixed_seed() {
        let env = quiet_env();
        let mut config = TwoTimescaleConfig::swept_four_delay();
        config.readout_noise_sigma = 0.03;
        config.cycles = 2;
        let a = run_two_timescale(&env, &config, 99).unwrap();
        let b = run_two_timescale(&env, &config, 99).unwrap();
        assert_eq!(a, b);
        let c = run_two_timescale(&env, &config, 100).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn sample_counts_follow_the_schedule() {
        let env = quiet_env();
        let mut config = TwoTimescaleConfig::swept_four_delay();
        config.cycles = 3;
        let record = run_two_timescale(&env, &config, 1).unwrap();
        // cycles · halves · blocks · delays · doubled
        assert_eq!(record.samples.len(), 3 * 2 * 12 * 4 * 2);
        let mut config = TwoTimescaleConfig::cycled_eight();
        config.cycles = 8;
        config.warmup_cycles = 0;
        let record = run_two_timescale(&env, &config, 1).unwrap();
        // One sample per block (readout slot).
        assert_eq!(record.samples.len(), 8 * 2 * 12);
        // Across 8 cycles every block position measures every delay exactly
        // once, so each (half, block) group forms one full decay curve.
        for block in 0..12u32 {
            for half in [Half::High, Half::Low] {
                let mut seen: Vec<f64> = record
                    .samples
                    .iter()
                    .filter(|s| s.block == block && s.half == half)
                    .map(|s| s.delay_s)
                    .collect();
                seen.sort_by(f64::total_cmp);
                assert_eq!(seen.len(), 8);
                for (a, b) in seen.iter().zip(&config.delays_s) {
                    assert_relative_eq!(a, b, epsilon = 1e-18);
                }
            }
        }
    }

    #[test]
    fn noiseless_bare_qubit_samples_match_closed_form() {
        // With no defects the sampled polarization is the scalar exponential
        // from the reset target, evolved through delay (Γ_q) and the readout
        // window (Γ_q again; exchange suppression changes nothing with no
        // defects present).
        let env = quiet_env();
        let mut config = TwoTimescaleConfig::swept_four_delay();
        config.cycles = 1;
        config.warmup_cycles = 0;
        let record = run_two_timescale(&env, &config, 1).unwrap();
        let gq = env.qubit.gamma_q_per_s;
        let zeq = env.qubit.z_eq;
        for s in &record.samples {
            let z0 = match s.half {
                Half::High => config.reset_z_e,
                Half::Low => config.reset_z_g,
            };
            let t = s.delay_s + config.readout_s;
            let expected = zeq + (z0 - zeq) * (-gq * t).exp();
            assert_relative_eq!(s.z, expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn bath_time_accumulates_actual_block_durations() {
        let env = quiet_env();
        let mut config = TwoTimescaleConfig::swept_four_delay();
        config.cycles = 1;
        config.warmup_cycles = 0;
        let (record, audits) = run_two_timescale_with_audit(&env, &config, 1).unwrap();
        // Doubled 800 µs unit → 1.6 ms blocks; each sample carries its own
        // unit's start time. Unit length is prep (50 µs) + delay + readout
        // (15.4 µs), so within each 800 µs play the four units start at
        // 0, 66.4, 171.8 and 387.2 µs.
        let unit_starts_us = [0.0, 66.4, 171.8, 387.2, 800.0, 866.4, 971.8, 1187.2];
        for s in &record.samples {
            let offset_us = (s.bath_time_s - s.block as f64 * 1.6e-3) * 1e6;
            assert!(
                unit_starts_us
                    .iter()
                    .any(|u| (u - offset_us).abs() < 1e-6),
                "unexpected unit offset {offset_us} µs"
            );
        }
        for a in &audits {
            assert_relative_eq!(a.block_duration_s, 1.6e-3, epsilon = 1e-12);
            assert_relative_eq!(
                a.bath_time_s,
                a.block as f64 * 1.6e-3,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn cycled_slot_durations_follow_the_permutation_table() {
        let env = quiet_env();
        let mut config = TwoTimescaleConfig::cycled_eight();
        config.cycles = 8;
        config.warmup_cycles = 0;
        let (record, audits) = run_two_timescale_with_audit(&env, &config, 1).unwrap();
        for a in &audits {
            let (measured, filler) =
                cycled_pair_indices(8, a.cycle as usize, a.block as usize);
            let expected = 2.0 * (config.pump_s + config.idle_s)
                + config.delays_s[measured]
                + config.delays_s[filler]
                + config.readout_s
                + config.wait_s;
            assert_relative_eq!(a.block_duration_s, expected, epsilon = 1e-12);
        }
        // Readout starts are evenly spaced within every half: each gap is
        // 200 µs, or 201 µs when the bracketing pair contains the 1 µs
        // technical minimum. A readout starts one preparation plus the
        // measured delay after its slot's start.
        let prep_s = config.pump_s + config.idle_s;
        for chunk in record.samples.chunks(12) {
            assert_eq!(chunk.len(), 12);
            for pair in chunk.windows(2) {
                let gap = (pair[1].bath_time_s + prep_s + pair[1].delay_s)
                    - (pair[0].bath_time_s + prep_s + pair[0].delay_s);
                let gap_us = gap * 1e6;
                assert!(
                    (gap_us - 200.0).abs() < 1e-6 || (gap_us - 201.0).abs() < 1e-6,
                    "readout gap was {gap_us} µs"
                );
            }
        }
    }

    #[test]
    fn zbar_sits_between_reset_and_equilibrium() {
        let env = quiet_env();
        let config = TwoTimescaleConfig::swept_four_delay();
        let record = run_two_timescale(&env, &config, 1).unwrap();
        assert!(record.zbar_h > 0.5 && record.zbar_h < config.reset_z_e);
        assert!(record.zbar_l < -0.5 && record.zbar_l > config.reset_z_g);
    }
}
