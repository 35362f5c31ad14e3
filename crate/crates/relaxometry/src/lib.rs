//! Simulator and estimation toolkit for qubit energy relaxation in a bath of
//! discrete, long-lived two-level systems (TLS).
//!
//! A superconducting qubit that exchanges energy with a handful of slow defect
//! TLS does not relax exponentially: the visible decay rate and the apparent
//! equilibrium both depend on how the measurement sequence itself has polarized
//! the defects. This crate models that feedback loop end to end:
//!
//! * [`model`] — polarization-exchange (Solomon) rate equations for one qubit
//!   coupled to N defects, the detuning-dependent exchange rate, and an exact
//!   affine propagator built on a symmetric eigendecomposition.
//! * [`sequence`] — pulse-level simulation of relaxometry protocols: the
//!   four-delay and cycled-delay two-timescale sequences, bath-prepared T1
//!   scans, and the "standard T1" schedules whose fitted lifetime is biased by
//!   bath polarization.
//! * [`analysis`] — the inverse pipeline: initial-slope extraction, joint
//!   bath-relaxation fits, multi-Lorentzian spectrum fits with
//!   profile-likelihood intervals for defect lifetimes, polarizability
//!   spectra, shared-timescale double-exponential fits, and the defect dipole
//!   estimate.
//! * [`calibration`] — readout-phase algebra for two- and three-level
//!   calibration: the four-measurement pulse variants, the bilinear
//!   phase/population solve, and phase-pair to polarization conversion.
//! * [`io`] — run configuration, record serialization (CSV/JSON), hashed run
//!   manifests, and the command implementations behind the `relaxometry`
//!   binary.
//!
//! # Conventions
//!
//! * Frequencies, couplings and linewidths in public APIs are **ordinary
//!   frequencies in Hz** (field names end in `_hz`); conversion to angular
//!   units happens only inside the exchange-rate kernel.
//! * Rates are **1/s** (`_per_s`), durations are **seconds** (`_s`).
//! * Polarizations are dimensionless in `[-1, 1]` with `+1` = excited.
//! * All stochastic behavior is driven by explicit `u64` seeds; identical
//!   seeds and inputs produce bit-identical outputs.

pub mod analysis;
pub mod calibration;
pub mod error;
pub mod io;
pub mod model;
pub mod sequence;

pub use error::{Error, Result};
