//! Gaussian-state model of the squeezed source and the channel acting on it.
//!
//! All variances are in shot-noise units: vacuum = 1. A below-threshold
//! parametric oscillator with pump parameter `x` (square root of pump power
//! over threshold power) and detected efficiency `eta` emits quadrature
//! spectra
//!
//! ```text
//! V-(f) = 1 - eta * 4x / ((1 + x)^2 + (f/gamma)^2)     squeezed
//! V+(f) = 1 + eta * 4x / ((1 - x)^2 + (f/gamma)^2)     anti-squeezed
//! ```
//!
//! with `gamma` the cavity half width. Optical loss is a beam splitter that
//! mixes in vacuum, `V -> eta V + (1 - eta)`, and excess noise is additive in
//! both quadratures. A residual local-oscillator phase error theta, Gaussian
//! with mean `theta_bar` and deviation `sigma`, projects the measured
//! quadrature onto `V- cos^2 theta + V+ sin^2 theta`; its expectation has the
//! closed form implemented by [`phase_noise_average`].

use crate::error::{Error, Result};
use crate::stats::interp_clamped;

/// Quadrature noise variances versus sideband frequency, vacuum = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpectrum {
    /// Sideband frequencies in Hz, strictly increasing, all positive.
    pub freqs: Vec<f64>,
    /// Squeezed-quadrature variance per frequency.
    pub v_minus: Vec<f64>,
    /// Anti-squeezed-quadrature variance per frequency.
    pub v_plus: Vec<f64>,
}

impl QuadratureSpectrum {
    /// Build a spectrum after validating the grid and positivity.
    pub fn new(freqs: Vec<f64>, v_minus: Vec<f64>, v_plus: Vec<f64>) -> Result<Self> {
        validate_grid(&freqs)?;
        if v_minus.len() != freqs.len() || v_plus.len() != freqs.len() {
            return Err(Error::BadGrid("variance arrays must match the grid length"));
        }
        for (&m, &p) in v_minus.iter().zip(&v_plus) {
            if !(m > 0.0) || !(p > 0.0) {
                return Err(Error::ParamDomain {
                    name: "variance",
                    value: m.min(p),
                    constraint: "> 0",
                });
            }
        }
        Ok(Self {
            freqs,
            v_minus,
            v_plus,
        })
    }

    /// Vacuum spectrum (both variances 1) on the given grid.
    pub fn vacuum(freqs: Vec<f64>) -> Result<Self> {
        let n = freqs.len();
        Self::new(freqs, vec![1.0; n], vec![1.0; n])
    }

    /// Squeezed variance at `f`, linearly interpolated, clamped at the ends.
    pub fn v_minus_at(&self, f: f64) -> f64 {
        interp_clamped(&self.freqs, &self.v_minus, f)
    }

    /// Anti-squeezed variance at `f`, linearly interpolated, clamped at the ends.
    pub fn v_plus_at(&self, f: f64) -> f64 {
        interp_clamped(&self.freqs, &self.v_plus, f)
    }
}

fn validate_grid(freqs: &[f64]) -> Result<()> {
    if freqs.is_empty() {
        return Err(Error::BadGrid("frequency grid is empty"));
    }
    if !(freqs[0] > 0.0) {
        return Err(Error::BadGrid("frequencies must be positive"));
    }
    if freqs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::BadGrid("frequencies must be strictly increasing"));
    }
    Ok(())
}

/// Physical parameters of the squeezed source as seen by the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpoParams {
    /// Pump parameter x = sqrt(pump power / threshold power), in [0, 1).
    pub pump_parameter: f64,
    /// Combined escape and detection efficiency, in (0, 1].
    pub eta_total: f64,
    /// Cavity half width at half maximum in Hz.
    pub cavity_hwhm: f64,
    /// Pilot-tone offset frequency in Hz.
    pub pilot_freq: f64,
    /// Pilot carrier-to-noise ratio in the demodulation bandwidth, dB.
    pub pilot_cnr_db: f64,
}

impl Default for OpoParams {
    fn default() -> Self {
        Self {
            pump_parameter: 0.0,
            eta_total: 0.8,
            cavity_hwhm: 50e6,
            pilot_freq: 40e6,
            pilot_cnr_db: 35.0,
        }
    }
}

impl OpoParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.pump_parameter) {
            return Err(Error::ParamDomain {
                name: "pump_parameter",
                value: self.pump_parameter,
                constraint: "0 <= x < 1",
            });
        }
        if !(self.eta_total > 0.0 && self.eta_total <= 1.0) {
            return Err(Error::ParamDomain {
                name: "eta_total",
                value: self.eta_total,
                constraint: "0 < eta <= 1",
            });
        }
        if !(self.cavity_hwhm > 0.0) {
            return Err(Error::ParamDomain {
                name: "cavity_hwhm",
                value: self.cavity_hwhm,
                constraint: "> 0",
            });
        }
        if !(self.pilot_freq > 0.0) {
            return Err(Error::ParamDomain {
                name: "pilot_freq",
                value: self.pilot_freq,
                constraint: "> 0",
            });
        }
        Ok(())
    }
}

/// Fiber-channel parameters. All losses are in dB and non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub fiber_length_km: f64,
    pub attenuation_db_per_km: f64,
    pub wdm_insertion_loss_db: f64,
    pub connector_loss_db: f64,
    /// Excess noise added to both quadratures, shot-noise units.
    pub excess_noise: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            fiber_length_km: 0.0,
            attenuation_db_per_km: 0.18,
            wdm_insertion_loss_db: 0.0,
            connector_loss_db: 0.0,
            excess_noise: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fiber_length_km", self.fiber_length_km),
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("wdm_insertion_loss_db", self.wdm_insertion_loss_db),
            ("connector_loss_db", self.connector_loss_db),
            ("excess_noise", self.excess_noise),
        ] {
            if !(v >= 0.0) {
                return Err(Error::ParamDomain {
                    name,
                    value: v,
                    constraint: ">= 0",
                });
            }
        }
        Ok(())
    }

    /// Total loss of the channel in dB.
    pub fn total_loss_db(&self) -> f64 {
        self.fiber_length_km * self.attenuation_db_per_km
            + self.wdm_insertion_loss_db
            + self.connector_loss_db
    }
}

/// Residual local-oscillator phase error model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseNoiseModel {
    /// Mean lock-point offset in rad.
    pub mean_offset: f64,
    /// Standard deviation of the Gaussian residual phase in rad.
    pub sigma: f64,
}

impl PhaseNoiseModel {
    pub fn new(mean_offset: f64, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::ParamDomain {
                name: "sigma",
                value: sigma,
                constraint: ">= 0",
            });
        }
        Ok(Self { mean_offset, sigma })
    }
}

/// Quadrature spectra of the parametric oscillator output on `freqs`.
pub fn opo_spectrum(params: &OpoParams, freqs: &[f64]) -> Result<QuadratureSpectrum> {
    params.validate()?;
    validate_grid(freqs)?;
    let x = params.pump_parameter;
    let eta = params.eta_total;
    let g = params.cavity_hwhm;
    let mut v_minus = Vec::with_capacity(freqs.len());
    let mut v_plus = Vec::with_capacity(freqs.len());
    for &f in freqs {
        let r2 = (f / g) * (f / g);
        // cancellation-free form of 1 - eta 4x / ((1+x)^2 + r2): stays
        // strictly positive all the way to threshold
        let denom = (1.0 + x) * (1.0 + x) + r2;
        v_minus.push(((1.0 - x) * (1.0 - x) + r2 + 4.0 * x * (1.0 - eta)) / denom);
        v_plus.push(1.0 + eta * 4.0 * x / ((1.0 - x) * (1.0 - x) + r2));
    }
    QuadratureSpectrum::new(freqs.to_vec(), v_minus, v_plus)
}

/// Squeezed variance of the source at a single frequency (no allocation).
pub fn opo_v_minus_at(x: f64, eta: f64, gamma: f64, f: f64) -> f64 {
    let r2 = (f / gamma) * (f / gamma);
    ((1.0 - x) * (1.0 - x) + r2 + 4.0 * x * (1.0 - eta)) / ((1.0 + x) * (1.0 + x) + r2)
}

/// Pump parameter that makes the detected squeezing at `f_eval` equal to
/// `target_sq_db` (a negative dB value), found by bisection on x in [0, 1).
///
/// The squeezed variance decreases monotonically in x toward the open bound
/// `1 - 4 eta / (4 + (f/gamma)^2)`; targets at or below that bound are
/// rejected with the bound named in the error.
pub fn calibrate_pump(target_sq_db: f64, eta_total: f64, gamma: f64, f_eval: f64) -> Result<f64> {
    if !(eta_total > 0.0 && eta_total <= 1.0) {
        return Err(Error::ParamDomain {
            name: "eta_total",
            value: eta_total,
            constraint: "0 < eta <= 1",
        });
    }
    if !(gamma > 0.0) {
        return Err(Error::ParamDomain {
            name: "gamma",
            value: gamma,
            constraint: "> 0",
        });
    }
    if target_sq_db > 0.0 {
        return Err(Error::ParamDomain {
            name: "target_sq_db",
            value: target_sq_db,
            constraint: "<= 0 dB",
        });
    }
    let target_v = undb(target_sq_db);
    let r2 = (f_eval / gamma) * (f_eval / gamma);
    let floor_v = 1.0 - 4.0 * eta_total / (4.0 + r2);
    if target_v <= floor_v {
        return Err(Error::Infeasible {
            what: "pump calibration",
            target: target_sq_db,
            bound: db(floor_v),
            unit: "dB",
        });
    }
    if target_sq_db == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0 - f64::EPSILON;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if opo_v_minus_at(mid, eta_total, gamma, f_eval) > target_v {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    // forward check against the contract tolerance
    let achieved = opo_v_minus_at(x, eta_total, gamma, f_eval);
    debug_assert!(
        (achieved - target_v).abs() < 1e-6,
        "bisection residual {}",
        achieved - target_v
    );
    Ok(x)
}

/// Beam-splitter loss: `V' = eta V + (1 - eta)` in both quadratures.
pub fn apply_loss(spec: &QuadratureSpectrum, eta: f64) -> Result<QuadratureSpectrum> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::ParamDomain {
            name: "transmittance",
            value: eta,
            constraint: "0 < eta <= 1",
        });
    }
    let map = |v: &[f64]| v.iter().map(|&x| eta * x + (1.0 - eta)).collect();
    QuadratureSpectrum::new(spec.freqs.clone(), map(&spec.v_minus), map(&spec.v_plus))
}

/// Power transmittance of the channel, `10^(-total_loss_db / 10)`.
pub fn transmittance_of(channel: &ChannelParams) -> Result<f64> {
    channel.validate()?;
    Ok(undb(-channel.total_loss_db()))
}

/// Additive excess noise in both quadratures.
pub fn add_excess_noise(spec: &QuadratureSpectrum, n_x: f64) -> Result<QuadratureSpectrum> {
    if !(n_x >= 0.0) {
        return Err(Error::ParamDomain {
            name: "excess_noise",
            value: n_x,
            constraint: ">= 0",
        });
    }
    let map = |v: &[f64]| v.iter().map(|&x| x + n_x).collect();
    QuadratureSpectrum::new(spec.freqs.clone(), map(&spec.v_minus), map(&spec.v_plus))
}

/// Measured variance when the analysis quadrature dithers around the
/// squeezed one with Gaussian phase error theta ~ N(theta_bar, sigma^2):
///
/// ```text
/// E[V- cos^2 t + V+ sin^2 t]
///   = (V+ + V-)/2 - (V+ - V-)/2 * exp(-2 sigma^2) * cos(2 theta_bar)
/// ```
pub fn phase_noise_average(v_minus: f64, v_plus: f64, model: &PhaseNoiseModel) -> Result<f64> {
    if !(v_minus > 0.0) || !(v_plus >= v_minus) {
        return Err(Error::ParamDomain {
            name: "variances",
            value: v_minus,
            constraint: "0 < v_minus <= v_plus",
        });
    }
    if !(model.sigma >= 0.0) {
        return Err(Error::ParamDomain {
            name: "sigma",
            value: model.sigma,
            constraint: ">= 0",
        });
    }
    let mean = 0.5 * (v_plus + v_minus);
    let half_diff = 0.5 * (v_plus - v_minus);
    let damp = (-2.0 * model.sigma * model.sigma).exp();
    Ok(mean - half_diff * damp * (2.0 * model.mean_offset).cos())
}

/// Linear variance to decibels.
pub fn db(v: f64) -> f64 {
    assert!(v > 0.0, "db of non-positive value {v}");
    10.0 * v.log10()
}

/// Decibels to linear variance.
pub fn undb(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
