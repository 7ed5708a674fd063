//! Desk-scale simulator of a squeezed-light optical link sharing a fiber
//! with a classical channel, measured with a locally generated local
//! oscillator that is phase-stabilized by a discrete-time heterodyne
//! phase-locked loop.
//!
//! The crate is organized along the signal path:
//!
//! * [`spectrum`] - Gaussian-state model of the squeezed source and the
//!   channel acting on it (loss, excess noise, residual-phase averaging).
//! * [`lockloop`] - the heterodyne phase lock: laser phase diffusion, I/Q
//!   demodulation, PI control, and the dual frequency/phase actuators.
//! * [`homodyne`] - synthesis of balanced-detector records from a
//!   quadrature spectrum and their analysis (Welch PSD, shot-noise
//!   normalization, band powers, pilot phase statistics).
//! * [`scenario`] - the end-to-end link configurations, calibration fits,
//!   and noise-budget reports.
//!
//! All randomness is seeded and every run is reproducible bit for bit.
//! With the default `parallel` feature the heavy inner loops (FIR shaping,
//! Welch segments, sweeps) run on rayon; disabling the feature selects
//! sequential fallbacks that produce identical results.

// validators use `!(v >= 0.0)` so that NaN inputs fail the checks too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fir;
pub mod homodyne;
pub mod lockloop;
pub mod rng;
pub mod scenario;
pub mod spectrum;
pub mod stats;

pub use error::{Error, Result};
pub use homodyne::{HomodyneRecord, LoPhase, PhaseHistogram, PsdEstimate, Window};
pub use lockloop::{LockParams, LockResult};
pub use scenario::{
    AnalysisBand, Calibration, Mode, ScenarioConfig, ScenarioReport, SweepPoint,
};
pub use spectrum::{ChannelParams, OpoParams, PhaseNoiseModel, QuadratureSpectrum};
