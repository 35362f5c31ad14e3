//! Single-lifetime measurement protocols: the conventional (bath-blind)
//! sequence and the bath-prepared diagnostic sequence.
//!
//! The conventional protocol is implemented exactly as it is usually run —
//! fixed-period or reset-then-wait scheduling, sweep averaged over rounds —
//! so that its systematic errors in the presence of a memoryful bath can be
//! demonstrated rather than assumed. The bath state carries over from shot
//! to shot; that carry-over is the entire effect under study.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AffinePropagator, Environment, SystemState};
use crate::sequence::DecayCurve;

/// How each shot of the conventional lifetime sequence initializes the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Fixed-period scheduling: every shot occupies one clock period. The
    /// shot starts with a π pulse (polarization sign flip from wherever the
    /// previous period left the qubit), waits the delay, reads out, then
    /// idles out the remainder of the period. If delay + readout exceed the
    /// period, the period stretches to fit.
    ClockCycle {
        /// Clock period, seconds.
        period_s: f64,
    },
    /// Reset-based scheduling: every shot starts by actively setting the
    /// qubit polarization, settles briefly, waits the delay, reads out, and
    /// immediately begins the next shot.
    ActiveReset {
        /// Polarization imposed by the reset.
        reset_z: f64,
        /// Settling time between reset and delay, seconds.
        relax_s: f64,
    },
}

/// Order in which the delay sweep and the averaging loop are nested.
///
/// With a memoryful bath the two orderings pump the bath differently around
/// each delay point and therefore measure different curves — on an ideal
/// Markovian qubit they would be identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    /// Outer loop over rounds, inner sweep over all delays in order.
    RoundsOuter,
    /// Outer loop over delays, inner loop repeating one delay `rounds`
    /// times before moving on.
    DelaysOuter,
}

/// Parameters of the conventional lifetime measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardT1Config {
    /// Readout delays, seconds.
    pub delays_s: Vec<f64>,
    /// Readout window, seconds. Exchange stays on and the sample is the
    /// window-averaged polarization (a non-destructive integrating readout).
    pub readout_s: f64,
    pub init: InitScheme,
    pub order: SweepOrder,
    /// Averaging repetitions per delay.
    pub rounds: usize,
    /// Standard deviation of additive Gaussian readout noise per shot.
    pub readout_noise_sigma: f64,
}

impl StandardT1Config {
    /// Fixed-period sequence: `points` delays spaced `step_s` apart starting
    /// at zero.
    pub fn clock_cycle(period_s: f64, points: usize, step_s: f64) -> Self {
        Self {
            delays_s: (0..points).map(|i| i as f64 * step_s).collect(),
            readout_s: 15.0e-6,
            init: InitScheme::ClockCycle { period_s },
            order: SweepOrder::RoundsOuter,
            rounds: 1,
            readout_noise_sigma: 0.0,
        }
    }

    /// Reset-based sequence: `points` delays spaced `step_s` apart starting
    /// at zero.
    pub fn active_reset(reset_z: f64, points: usize, step_s: f64) -> Self {
        Self {
            delays_s: (0..points).map(|i| i as f64 * step_s).collect(),
            readout_s: 15.0e-6,
            init: InitScheme::ActiveReset {
                reset_z,
                relax_s: 10.0e-6,
            },
            order: SweepOrder::RoundsOuter,
            rounds: 1,
            readout_noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays_s.is_empty() {
            return Err(Error::InvalidInput("delay list must not be empty".into()));
        }
        for (i, d) in self.delays_s.iter().enumerate() {
            if !d.is_finite() || *d < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "delays_s[{i}] must be non-negative and finite, got {d}"
                )));
            }
        }
        if !self.readout_s.is_finite() || self.readout_s <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "readout_s must be positive (the sample is a window average), got {}",
                self.readout_s
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidInput("rounds must be at least 1".into()));
        }
        match self.init {
            InitScheme::ClockCycle { period_s } => {
                if !period_s.is_finite() || period_s <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "period_s must be positive, got {period_s}"
                    )));
                }
            }
            InitScheme::ActiveReset { reset_z, relax_s } => {
                if !reset_z.is_finite() || reset_z.abs() > 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "reset_z must lie in [-1, 1], got {reset_z}"
                    )));
                }
                if !relax_s.is_finite() || relax_s < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "relax_s must be non-negative, got {relax_s}"
                    )));
                }
            }
        }
        if !self.readout_noise_sigma.is_finite() || self.readout_noise_sigma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "readout_noise_sigma must be non-negative, got {}",
                self.readout_noise_sigma
            )));
        }
        Ok(())
    }
}

/// Play the conventional lifetime measurement and return the averaged decay
/// curve.
///
/// The system starts in thermal equilibrium and the bath state persists
/// across shots and rounds, exactly as on real hardware.
pub fn run_standard_t1(
    env: &Environment,
    config: &StandardT1Config,
    seed: u64,
) -> Result<DecayCurve> {
    env.validate()?;
    config.validate()?;
    let on = AffinePropagator::new(env, true)?;
    let delay_ops = config
        .delays_s
        .iter()
        .map(|d| on.segment_op(*d))
        .collect::<Result<Vec<_>>>()?;
    let readout_op = on.segment_op(config.readout_s)?;
    // Fixed-period tails: the idle remainder after delay + readout, clamped
    // at zero when the shot overruns (stretched period).
    let tail_ops = match config.init {
        InitScheme::ClockCycle { period_s } => Some(
            config
                .delays_s
                .iter()
                .map(|d| on.segment_op((period_s - d - config.readout_s).max(0.0)))
                .collect::<Result<Vec<_>>>()?,
        ),
        InitScheme::ActiveReset { .. } => None,
    };
    let relax_op = match config.init {
        InitScheme::ActiveReset { relax_s, .. } => Some(on.segment_op(relax_s)?),
        InitScheme::ClockCycle { .. } => None,
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut state = SystemState::thermal(env);
    let mut sums = vec![0.0_f64; config.delays_s.len()];

    let shot = |i: usize, state: &mut SystemState, rng: &mut ChaCha12Rng| -> Result<f64> {
        match config.init {
            InitScheme::ClockCycle { .. } => {
                *state = state.with_z(-state.z())?;
            }
            InitScheme::ActiveReset { reset_z, .. } => {
                *state = state.with_z(reset_z)?;
                *state = relax_op.as_ref().expect("built for active reset").apply(state)?;
            }
        }
        *state = delay_ops[i].apply(state)?;
        let (after_readout, z_int) = readout_op.apply_with_integral(state)?;
        *state = after_readout;
        let mut z = z_int / config.readout_s;
        if config.readout_noise_sigma > 0.0 {
            let noise: f64 = StandardNormal.sample(rng);
            z += config.readout_noise_sigma * noise;
        }
        if let Some(tails) = &tail_ops {
            *state = tails[i].apply(state)?;
        }
        Ok(z)
    };

    match config.order {
        SweepOrder::RoundsOuter => {
            for _ in 0..config.rounds {
                for i in 0..config.delays_s.len() {
                    sums[i] += shot(i, &mut state, &mut rng)?;
                }
            }
        }
        SweepOrder::DelaysOuter => {
            for i in 0..config.delays_s.len() {
                for _ in 0..config.rounds {
                    sums[i] += shot(i, &mut state, &mut rng)?;
                }
            }
        }
    }

    Ok(DecayCurve {
        delays_s: config.delays_s.clone(),
        z: sums.iter().map(|s| s / config.rounds as f64).collect(),
    })
}

/// Parameters of the bath-prepared lifetime measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathPrepConfig {
    /// Readout delays, seconds.
    pub delays_s: Vec<f64>,
    /// Number of reset-and-interact repetitions used to drag the bath to the
    /// chosen polarity before each shot.
    pub prep_repeats: usize,
    /// Interaction window after each preparation reset, seconds.
    pub prep_interact_s: f64,
    /// Qubit polarization imposed during bath preparation.
    pub bath_z: f64,
    /// Qubit polarization at the start of the measured delay.
    pub qubit_init_z: f64,
    /// Standard deviation of additive Gaussian readout noise per shot.
    pub readout_noise_sigma: f64,
}

impl BathPrepConfig {
    /// Preparation defaults (7 × 25 µs) with the given polarities and delays.
    pub fn with_polarity(bath_z: f64, qubit_init_z: f64, delays_s: Vec<f64>) -> Self {
        Self {
            delays_s,
            prep_repeats: 7,
            prep_interact_s: 25.0e-6,
            bath_z,
            qubit_init_z,
            readout_noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays_s.is_empty() {
            return Err(Error::InvalidInput("delay list must not be empty".into()));
        }
        for (i, d) in self.delays_s.iter().enumerate() {
            if !d.is_finite() || *d < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "delays_s[{i}] must be non-negative and finite, got {d}"
                )));
            }
        }
        if self.prep_repeats == 0 {
            return Err(Error::InvalidInput("prep_repeats must be at least 1".into()));
        }
        if !self.prep_interact_s.is_finite() || self.prep_interact_s <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "prep_interact_s must be positive, got {}",
                self.prep_interact_s
            )));
        }
        for (name, v) in [("bath_z", self.bath_z), ("qubit_init_z", self.qubit_init_z)] {
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
        Ok(())
    }
}

/// Play the bath-prepared lifetime measurement.
///
/// Each delay point is an independent shot from thermal equilibrium: the
/// bath is dragged toward `bath_z` by repeated reset-and-interact windows,
/// the qubit is then set to `qubit_init_z`, and its polarization is sampled
/// after the delay. Sweeping the four sign combinations of
/// (`bath_z`, `qubit_init_z`) yields curve families whose shared rates
/// expose both eigenmodes of the coupled decay.
pub fn run_bath_prep_t1(
    env: &Environment,
    config: &BathPrepConfig,
    seed: u64,
) -> Result<DecayCurve> {
    env.validate()?;
    config.validate()?;
    let on = AffinePropagator::new(env, true)?;
    let prep_op = on.segment_op(config.prep_interact_s)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut z_out = Vec::with_capacity(config.delays_s.len());
    for delay in &config.delays_s {
        let mut state = SystemState::thermal(env);
        for _ in 0..config.prep_repeats {
            state = state.with_z(config.bath_z)?;
            state = prep_op.apply(&state)?;
        }
        state = state.with_z(config.qubit_init_z)?;
        state = on.step(&state, *delay)?;
        let mut z = state.z();
        if config.readout_noise_sigma > 0.0 {
            let noise: f64 = StandardNormal.sample(&mut rng);
            z += config.readout_noise_sigma * noise;
        }
        z_out.push(z);
    }
    Ok(DecayCurve {
        delays_s: config.delays_s.clone(),
        z: z_out,
    })
}
