//! The three link configurations: a shared-laser reference with a scanned
//! analysis phase, and two locally-locked-oscillator runs (back to back and
//! through 10 km of fiber), plus the closed-form noise budget and the
//! calibration fit for losses that are not known a priori.

use crate::error::{Error, Result};
use crate::homodyne::{
    band_noise_power, normalize_to_shot, phase_histogram_fit, synthesize_trace, welch_psd,
    HomodyneRecord, LoPhase, PhaseHistogram, PsdEstimate, Window, DEFAULT_OVERLAP,
    DEFAULT_SEGMENT_LEN,
};
use crate::lockloop::{run_lock, LockParams, LockResult};
use crate::rng::{normal_vec, stream_rng, subseed};
use crate::spectrum::{
    add_excess_noise, apply_loss, db, opo_spectrum, phase_noise_average, transmittance_of, undb,
    ChannelParams, OpoParams, PhaseNoiseModel, QuadratureSpectrum,
};
use std::f64::consts::{FRAC_PI_2, PI};

/// Receiver insertion loss reproducing the back-to-back measurement,
/// obtained once with [`fit_insertion_loss`] and frozen as a calibration
/// fixture (dB).
pub const RECEIVER_INSERTION_DB_FIT: f64 = 3.2739;
/// Additional coexistence loss reproducing the 10 km measurement, fitted on
/// top of the receiver insertion and fiber loss and frozen (dB).
pub const COEXISTENCE_EXTRA_DB_FIT: f64 = 1.9635;

/// Link configuration selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Shared-laser reference, analysis phase scanned over a full turn.
    TloScan,
    /// Local oscillator, source and receiver connected back to back.
    LloB2b,
    /// Local oscillator through 10 km of fiber.
    Llo10km,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::TloScan => "tlo_scan",
            Mode::LloB2b => "llo_b2b",
            Mode::Llo10km => "llo_10km",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "tlo_scan" => Some(Mode::TloScan),
            "llo_b2b" => Some(Mode::LloB2b),
            "llo_10km" => Some(Mode::Llo10km),
            _ => None,
        }
    }
}

/// Band used for the reported squeezing numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisBand {
    pub center: f64,
    pub rbw: f64,
}

/// Calibration values that are fitted against measured squeezing rather
/// than taken from the link budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Receiver-side insertion loss (mux/demux, connectors), dB.
    pub receiver_insertion_db: f64,
    /// Extra coexistence loss present only on the 10 km link, dB.
    pub coexistence_extra_db: f64,
}

/// Full configuration of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub opo: OpoParams,
    pub channel: ChannelParams,
    pub lock: LockParams,
    pub mode: Mode,
    /// Record length in seconds.
    pub duration: f64,
    pub seed: u64,
    /// Homodyne sampling rate in Hz.
    pub sample_rate: f64,
    pub band: AnalysisBand,
    pub calibration: Calibration,
    /// Override the lock-loop residual sigma used in phase averaging and
    /// synthesis (regression pinning); `None` takes it from the lock run.
    pub pin_sigma: Option<f64>,
    /// Mean lock-point offset in rad.
    pub theta_bar: f64,
    /// Electronic noise clearance below shot noise, dB.
    pub electronic_clearance_db: f64,
    /// Wavelength of the co-propagating classical channel; metadata only.
    pub classical_wavelength_nm: f64,
}

impl ScenarioConfig {
    /// Reference defaults for a mode: the source is calibrated to -3.5 dB
    /// of detected squeezing at 4 MHz and the fitted losses are applied
    /// where the mode needs them.
    pub fn default_for(mode: Mode) -> Self {
        let mut opo = OpoParams::default();
        opo.pump_parameter =
            crate::spectrum::calibrate_pump(-3.5, opo.eta_total, opo.cavity_hwhm, 4e6)
                .expect("default calibration is feasible");
        let channel = ChannelParams {
            fiber_length_km: if mode == Mode::Llo10km { 10.0 } else { 0.0 },
            ..ChannelParams::default()
        };
        let calibration = match mode {
            Mode::TloScan => Calibration {
                receiver_insertion_db: 0.0,
                coexistence_extra_db: 0.0,
            },
            Mode::LloB2b => Calibration {
                receiver_insertion_db: RECEIVER_INSERTION_DB_FIT,
                coexistence_extra_db: 0.0,
            },
            Mode::Llo10km => Calibration {
                receiver_insertion_db: RECEIVER_INSERTION_DB_FIT,
                coexistence_extra_db: COEXISTENCE_EXTRA_DB_FIT,
            },
        };
        Self {
            opo,
            channel,
            lock: LockParams::default(),
            mode,
            duration: 0.5,
            seed: 1,
            sample_rate: 20e6,
            band: AnalysisBand {
                center: 4e6,
                rbw: 200e3,
            },
            calibration,
            pin_sigma: None,
            theta_bar: 0.0,
            electronic_clearance_db: 20.0,
            classical_wavelength_nm: 1330.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.opo.validate()?;
        self.channel.validate()?;
        self.lock.validate()?;
        if !(self.duration > 0.0) {
            return Err(Error::ParamDomain {
                name: "duration",
                value: self.duration,
                constraint: "> 0",
            });
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::ParamDomain {
                name: "sample_rate",
                value: self.sample_rate,
                constraint: "> 0",
            });
        }
        if !(self.band.center > 0.0 && self.band.center < self.sample_rate / 2.0) {
            return Err(Error::ParamDomain {
                name: "band.center",
                value: self.band.center,
                constraint: "inside (0, sample_rate/2)",
            });
        }
        if !(self.band.rbw > 0.0) {
            return Err(Error::ParamDomain {
                name: "band.rbw",
                value: self.band.rbw,
                constraint: "> 0",
            });
        }
        if let Some(s) = self.pin_sigma {
            if !(s >= 0.0) {
                return Err(Error::ParamDomain {
                    name: "pin_sigma",
                    value: s,
                    constraint: ">= 0",
                });
            }
        }
        for (name, v) in [
            ("receiver_insertion_db", self.calibration.receiver_insertion_db),
            ("coexistence_extra_db", self.calibration.coexistence_extra_db),
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
}

/// Effect a budget stage has on the quadratures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageEffect {
    Transmittance(f64),
    ExcessNoise(f64),
    PhaseNoise { sigma: f64, theta_bar: f64 },
}

impl StageEffect {
    pub fn describe(&self) -> String {
        match self {
            StageEffect::Transmittance(t) => format!("eta={:.6}", t),
            StageEffect::ExcessNoise(n) => format!("n_x={:.6}", n),
            StageEffect::PhaseNoise { sigma, theta_bar } => {
                format!("sigma={:.6} rad, theta_bar={:.6} rad", sigma, theta_bar)
            }
        }
    }
}

/// One row of the noise budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetStage {
    pub name: String,
    pub effect: StageEffect,
    pub squeezing_db_after: f64,
    pub antisqueezing_db_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStatus {
    Ok,
    LockNotAcquired,
}

/// Per-configuration summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub scenario: String,
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
    pub residual_phase_sigma_rad: f64,
    pub budget: Vec<BudgetStage>,
    pub status: ReportStatus,
    pub classical_wavelength_nm: f64,
}

impl ScenarioReport {
    pub fn lock_acquired(&self) -> bool {
        self.status == ReportStatus::Ok
    }

    /// Structured text rendering (the body of `report.txt`).
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario: {}\n", self.scenario));
        out.push_str(&format!(
            "classical_wavelength_nm: {}\n",
            self.classical_wavelength_nm
        ));
        out.push_str(&format!(
            "status: {}\n",
            match self.status {
                ReportStatus::Ok => "ok",
                ReportStatus::LockNotAcquired => "warning: lock not acquired",
            }
        ));
        out.push_str(&format!(
            "residual_phase_sigma_rad: {:.6}\n",
            self.residual_phase_sigma_rad
        ));
        out.push_str(&format!("squeezing_db: {:.3}\n", self.squeezing_db));
        out.push_str(&format!("antisqueezing_db: {:.3}\n", self.antisqueezing_db));
        out.push_str("budget:\n");
        for s in &self.budget {
            out.push_str(&format!(
                "  {:<28} {:<40} sq={:+.3} dB  antisq={:+.3} dB\n",
                s.name,
                s.effect.describe(),
                s.squeezing_db_after,
                s.antisqueezing_db_after
            ));
        }
        out
    }

    /// Budget table as CSV.
    pub fn budget_csv(&self) -> String {
        let mut out = String::from("stage,effect,squeezing_db_after,antisqueezing_db_after\n");
        for s in &self.budget {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                s.name,
                s.effect.describe().replace(',', ";"),
                s.squeezing_db_after,
                s.antisqueezing_db_after
            ));
        }
        out
    }
}

/// Band-averaged source quadratures: mean of V-/V+ over the analysis band.
fn band_quadratures(opo: &OpoParams, band: &AnalysisBand) -> Result<(f64, f64)> {
    let n = 65;
    let lo = (band.center - band.rbw / 2.0).max(band.rbw * 1e-3);
    let hi = band.center + band.rbw / 2.0;
    let freqs: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let spec = opo_spectrum(opo, &freqs)?;
    let vm = spec.v_minus.iter().sum::<f64>() / n as f64;
    let vp = spec.v_plus.iter().sum::<f64>() / n as f64;
    Ok((vm, vp))
}

fn chain_transmittances(cfg: &ScenarioConfig) -> Result<Vec<(String, f64)>> {
    let mut stages = Vec::new();
    if cfg.mode != Mode::TloScan {
        stages.push(("channel".to_string(), transmittance_of(&cfg.channel)?));
        stages.push((
            "receiver_insertion (fitted)".to_string(),
            undb(-cfg.calibration.receiver_insertion_db),
        ));
        if cfg.mode == Mode::Llo10km {
            stages.push((
                "coexistence_extra (fitted)".to_string(),
                undb(-cfg.calibration.coexistence_extra_db),
            ));
        }
    }
    Ok(stages)
}

/// Closed-form budget: every stage with the squeezing level after it.
fn build_budget(cfg: &ScenarioConfig, sigma: f64) -> Result<Vec<BudgetStage>> {
    let (mut vm, mut vp) = band_quadratures(&cfg.opo, &cfg.band)?;
    let mut budget = vec![BudgetStage {
        name: "source_detected".to_string(),
        effect: StageEffect::Transmittance(cfg.opo.eta_total),
        squeezing_db_after: db(vm),
        antisqueezing_db_after: db(vp),
    }];
    for (name, t) in chain_transmittances(cfg)? {
        vm = t * vm + (1.0 - t);
        vp = t * vp + (1.0 - t);
        budget.push(BudgetStage {
            name,
            effect: StageEffect::Transmittance(t),
            squeezing_db_after: db(vm),
            antisqueezing_db_after: db(vp),
        });
    }
    if cfg.mode != Mode::TloScan {
        let n_x = cfg.channel.excess_noise;
        vm += n_x;
        vp += n_x;
        budget.push(BudgetStage {
            name: "excess_noise".to_string(),
            effect: StageEffect::ExcessNoise(n_x),
            squeezing_db_after: db(vm),
            antisqueezing_db_after: db(vp),
        });
        let model = PhaseNoiseModel::new(cfg.theta_bar, sigma)?;
        let anti_model = PhaseNoiseModel::new(cfg.theta_bar + FRAC_PI_2, sigma)?;
        let v_meas = phase_noise_average(vm, vp, &model)?;
        let v_anti = phase_noise_average(vm, vp, &anti_model)?;
        budget.push(BudgetStage {
            name: "residual_phase_noise".to_string(),
            effect: StageEffect::PhaseNoise {
                sigma,
                theta_bar: cfg.theta_bar,
            },
            squeezing_db_after: db(v_meas),
            antisqueezing_db_after: db(v_anti),
        });
    }
    Ok(budget)
}

fn sigma_for(cfg: &ScenarioConfig, lock: Option<&LockResult>) -> f64 {
    match (cfg.pin_sigma, lock) {
        (Some(s), _) => s,
        (None, Some(l)) => l.residual_sigma,
        (None, None) => 0.0,
    }
}

/// Closed-form report: the same pipeline as [`run_llo`] without any
/// time-series synthesis. The residual sigma comes from the lock loop
/// unless pinned.
pub fn noise_budget_report(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let lock = if cfg.mode != Mode::TloScan && cfg.pin_sigma.is_none() {
        Some(run_lock(&cfg.lock, cfg.duration, subseed(cfg.seed, 1))?)
    } else {
        None
    };
    let sigma = if cfg.mode == Mode::TloScan {
        0.0
    } else {
        sigma_for(cfg, lock.as_ref())
    };
    let budget = build_budget(cfg, sigma)?;
    let last = budget.last().expect("budget never empty");
    Ok(ScenarioReport {
        scenario: cfg.mode.label().to_string(),
        squeezing_db: last.squeezing_db_after,
        antisqueezing_db: last.antisqueezing_db_after,
        residual_phase_sigma_rad: sigma,
        budget,
        status: match &lock {
            Some(l) if !l.acquired => ReportStatus::LockNotAcquired,
            _ => ReportStatus::Ok,
        },
        classical_wavelength_nm: cfg.classical_wavelength_nm,
    })
}

/// Synthesis grid covering (0, sample_rate/2].
fn synthesis_grid(sample_rate: f64) -> Vec<f64> {
    let n = 1024;
    (1..=n)
        .map(|i| i as f64 * sample_rate / 2.0 / n as f64)
        .collect()
}

/// Spectrum arriving at the detector for an LLO mode.
fn detected_spectrum(cfg: &ScenarioConfig) -> Result<QuadratureSpectrum> {
    let mut spec = opo_spectrum(&cfg.opo, &synthesis_grid(cfg.sample_rate))?;
    for (_, t) in chain_transmittances(cfg)? {
        if t < 1.0 {
            spec = apply_loss(&spec, t)?;
        }
    }
    add_excess_noise(&spec, cfg.channel.excess_noise)
}

/// Output of a locally-locked-oscillator run.
#[derive(Debug, Clone)]
pub struct LloRun {
    pub report: ScenarioReport,
    /// Shot-noise-normalized PSD of the squeezed-quadrature record.
    pub psd: PsdEstimate,
    /// Histogram of the lock phase-error trace.
    pub histogram: PhaseHistogram,
    pub lock: LockResult,
}

/// Run an LLO scenario end to end: lock simulation, trace synthesis, Welch
/// analysis, and the closed-form budget.
pub fn run_llo(cfg: &ScenarioConfig) -> Result<LloRun> {
    cfg.validate()?;
    if cfg.mode == Mode::TloScan {
        return Err(Error::ModeMismatch {
            expected: "llo_b2b or llo_10km",
            got: "tlo_scan",
        });
    }
    let n = (cfg.duration * cfg.sample_rate).round() as usize;
    if n < DEFAULT_SEGMENT_LEN {
        return Err(Error::Config(format!(
            "duration gives {n} samples; the analysis needs at least {DEFAULT_SEGMENT_LEN}"
        )));
    }

    let lock = run_lock(&cfg.lock, cfg.duration, subseed(cfg.seed, 1))?;
    let sigma = sigma_for(cfg, Some(&lock));
    let status = if lock.acquired {
        ReportStatus::Ok
    } else {
        ReportStatus::LockNotAcquired
    };

    let theta = lo_phase_path(cfg, &lock, sigma, n);
    let spec = detected_spectrum(cfg)?;

    let signal = synthesize_trace(
        &spec,
        &LoPhase::Path(theta.clone()),
        cfg.sample_rate,
        n,
        cfg.electronic_clearance_db,
        subseed(cfg.seed, 2),
    )?;
    let anti_theta: Vec<f64> = theta.iter().map(|t| t + FRAC_PI_2).collect();
    let anti = synthesize_trace(
        &spec,
        &LoPhase::Path(anti_theta),
        cfg.sample_rate,
        n,
        cfg.electronic_clearance_db,
        subseed(cfg.seed, 3),
    )?;
    let vacuum = synthesize_vacuum(cfg, n)?;

    let psd_sig = welch_psd(&signal, DEFAULT_SEGMENT_LEN, DEFAULT_OVERLAP, Window::Hann)?;
    let psd_anti = welch_psd(&anti, DEFAULT_SEGMENT_LEN, DEFAULT_OVERLAP, Window::Hann)?;
    let psd_vac = welch_psd(&vacuum, DEFAULT_SEGMENT_LEN, DEFAULT_OVERLAP, Window::Hann)?;
    let norm_sig = normalize_to_shot(&psd_sig, &psd_vac)?;
    let norm_anti = normalize_to_shot(&psd_anti, &psd_vac)?;

    let squeezing_db = band_noise_power(&norm_sig, cfg.band.center, cfg.band.rbw)?;
    let antisqueezing_db = band_noise_power(&norm_anti, cfg.band.center, cfg.band.rbw)?;

    let trace = &lock.phase_error_trace;
    let histogram = phase_histogram_fit(&trace[trace.len() / 5..], None)?;

    let budget = build_budget(cfg, sigma)?;
    let report = ScenarioReport {
        scenario: cfg.mode.label().to_string(),
        squeezing_db,
        antisqueezing_db,
        residual_phase_sigma_rad: sigma,
        budget,
        status,
        classical_wavelength_nm: cfg.classical_wavelength_nm,
    };

    Ok(LloRun {
        report,
        psd: norm_sig,
        histogram,
        lock,
    })
}

/// Local-oscillator phase path at the homodyne rate: theta_bar plus either
/// the resampled lock error trace or, when sigma is pinned, a stationary
/// AR(1) process with the pinned deviation and a 50 us correlation time.
fn lo_phase_path(cfg: &ScenarioConfig, lock: &LockResult, sigma: f64, n: usize) -> Vec<f64> {
    if cfg.pin_sigma.is_some() {
        let tau = 50e-6;
        let rho = (-1.0 / (cfg.sample_rate * tau)).exp();
        let gain = sigma * (1.0 - rho * rho).sqrt();
        let mut rng = stream_rng(cfg.seed, 40);
        let w = normal_vec(&mut rng, n);
        let mut theta = Vec::with_capacity(n);
        let mut state = sigma * w[0];
        theta.push(cfg.theta_bar + state);
        for &wk in &w[1..] {
            state = rho * state + gain * wk;
            theta.push(cfg.theta_bar + state);
        }
        theta
    } else {
        let trace = &lock.phase_error_trace;
        let ratio = cfg.lock.loop_rate / cfg.sample_rate;
        (0..n)
            .map(|k| {
                let pos = k as f64 * ratio;
                let i = (pos as usize).min(trace.len() - 1);
                let j = (i + 1).min(trace.len() - 1);
                let t = pos - i as f64;
                cfg.theta_bar + trace[i] * (1.0 - t) + trace[j] * t
            })
            .collect()
    }
}

fn synthesize_vacuum(cfg: &ScenarioConfig, n: usize) -> Result<HomodyneRecord> {
    let vac = QuadratureSpectrum::vacuum(synthesis_grid(cfg.sample_rate))?;
    synthesize_trace(
        &vac,
        &LoPhase::Constant(0.0),
        cfg.sample_rate,
        n,
        cfg.electronic_clearance_db,
        subseed(cfg.seed, 4),
    )
}

/// One point of the scanned-phase envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePoint {
    pub time_s: f64,
    pub lo_phase_rad: f64,
    pub band_db: f64,
}

/// Output of the shared-laser reference run.
#[derive(Debug, Clone)]
pub struct TloRun {
    pub report: ScenarioReport,
    /// Normalized PSD of the most-squeezed scan block.
    pub psd: PsdEstimate,
    /// Band power versus time while the analysis phase sweeps.
    pub envelope: Vec<EnvelopePoint>,
}

const TLO_BLOCKS: usize = 32;
const TLO_SEGMENT_LEN: usize = 1 << 13;

/// Shared-laser reference: no lock-loop phase noise, the analysis phase is
/// swept linearly over a full turn, and the reported squeezing is the
/// minimum band power over the sweep.
pub fn run_tlo_reference(cfg: &ScenarioConfig) -> Result<TloRun> {
    cfg.validate()?;
    if cfg.mode != Mode::TloScan {
        return Err(Error::ModeMismatch {
            expected: "tlo_scan",
            got: cfg.mode.label(),
        });
    }
    let n = (cfg.duration * cfg.sample_rate).round() as usize;
    let block_len = n / TLO_BLOCKS;
    if block_len < 4 * TLO_SEGMENT_LEN {
        return Err(Error::Config(format!(
            "duration gives {n} samples; the scan needs at least {}",
            4 * TLO_SEGMENT_LEN * TLO_BLOCKS
        )));
    }

    let spec = opo_spectrum(&cfg.opo, &synthesis_grid(cfg.sample_rate))?;
    // start half a block early so block centres land on theta = 0 and pi,
    // where the band power reaches the quadrature extremes
    let theta0 = -PI / TLO_BLOCKS as f64;
    let ramp: Vec<f64> = (0..n)
        .map(|k| theta0 + 2.0 * PI * k as f64 / (n - 1) as f64)
        .collect();
    let signal = synthesize_trace(
        &spec,
        &LoPhase::Path(ramp.clone()),
        cfg.sample_rate,
        n,
        cfg.electronic_clearance_db,
        subseed(cfg.seed, 2),
    )?;
    let vacuum = synthesize_vacuum(cfg, n)?;
    let psd_vac = welch_psd(&vacuum, TLO_SEGMENT_LEN, DEFAULT_OVERLAP, Window::Hann)?;

    let mut envelope = Vec::with_capacity(TLO_BLOCKS);
    let mut best: Option<(f64, PsdEstimate)> = None;
    for b in 0..TLO_BLOCKS {
        let lo = b * block_len;
        let block = HomodyneRecord {
            samples: signal.samples[lo..lo + block_len].to_vec(),
            sample_rate: cfg.sample_rate,
            lo_phase: LoPhase::Constant(0.0),
            label: format!("tlo_block_{b}"),
        };
        let psd = welch_psd(&block, TLO_SEGMENT_LEN, DEFAULT_OVERLAP, Window::Hann)?;
        let norm = normalize_to_shot(&psd, &psd_vac)?;
        let band_db = band_noise_power(&norm, cfg.band.center, cfg.band.rbw)?;
        let mid = lo + block_len / 2;
        envelope.push(EnvelopePoint {
            time_s: mid as f64 / cfg.sample_rate,
            lo_phase_rad: ramp[mid],
            band_db,
        });
        if best.as_ref().is_none_or(|(b_db, _)| band_db < *b_db) {
            best = Some((band_db, norm));
        }
    }

    let squeezing_db = envelope
        .iter()
        .map(|p| p.band_db)
        .fold(f64::INFINITY, f64::min);
    let antisqueezing_db = envelope
        .iter()
        .map(|p| p.band_db)
        .fold(f64::NEG_INFINITY, f64::max);

    let budget = build_budget(cfg, 0.0)?;
    let report = ScenarioReport {
        scenario: cfg.mode.label().to_string(),
        squeezing_db,
        antisqueezing_db,
        residual_phase_sigma_rad: 0.0,
        budget,
        status: ReportStatus::Ok,
        classical_wavelength_nm: cfg.classical_wavelength_nm,
    };

    Ok(TloRun {
        report,
        psd: best.expect("at least one block").1,
        envelope,
    })
}

/// Known part of the budget when fitting an unknown insertion loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetKnown {
    /// Detected source quadratures at the analysis band.
    pub v_minus: f64,
    pub v_plus: f64,
    /// Product of the transmittances of all known stages.
    pub known_transmittance: f64,
    pub excess_noise: f64,
    pub phase: PhaseNoiseModel,
}

impl BudgetKnown {
    fn measured_db(&self, extra_loss_db: f64) -> f64 {
        let t = self.known_transmittance * undb(-extra_loss_db);
        let vm = t * self.v_minus + (1.0 - t) + self.excess_noise;
        let vp = t * self.v_plus + (1.0 - t) + self.excess_noise;
        db(phase_noise_average(vm, vp, &self.phase).expect("valid budget"))
    }
}

/// Fit the unknown insertion loss (dB) that makes the closed-form budget
/// reproduce `measured_db`, by bisection; the reproduction is within
/// 0.01 dB or an infeasibility error names the reachable bound.
pub fn fit_insertion_loss(measured_db: f64, known: &BudgetKnown) -> Result<f64> {
    let best = known.measured_db(0.0);
    if (measured_db - best).abs() < 1e-9 {
        return Ok(0.0);
    }
    if measured_db < best {
        return Err(Error::Infeasible {
            what: "insertion-loss fit",
            target: measured_db,
            bound: best,
            unit: "dB",
        });
    }
    let worst = known.measured_db(200.0);
    if measured_db >= worst {
        return Err(Error::Infeasible {
            what: "insertion-loss fit",
            target: measured_db,
            bound: worst,
            unit: "dB",
        });
    }
    let mut lo = 0.0;
    let mut hi = 200.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if known.measured_db(mid) < measured_db {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let fitted = 0.5 * (lo + hi);
    let residual = (known.measured_db(fitted) - measured_db).abs();
    if residual > 0.01 {
        return Err(Error::Config(format!(
            "insertion-loss fit did not converge: residual {residual} dB"
        )));
    }
    Ok(fitted)
}

/// Convenience: detected source quadratures plus the phase model for a
/// config, as [`fit_insertion_loss`] expects them.
pub fn budget_known_for(cfg: &ScenarioConfig, sigma: f64) -> Result<BudgetKnown> {
    let (vm, vp) = band_quadratures(&cfg.opo, &cfg.band)?;
    let mut known_t = 1.0;
    for (_, t) in chain_transmittances(cfg)? {
        known_t *= t;
    }
    Ok(BudgetKnown {
        v_minus: vm,
        v_plus: vp,
        known_transmittance: known_t,
        excess_noise: cfg.channel.excess_noise,
        phase: PhaseNoiseModel::new(cfg.theta_bar, sigma)?,
    })
}

/// One point of a fiber-length sweep (closed-form path).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub fiber_length_km: f64,
    pub transmittance: f64,
    pub sigma_rad: f64,
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
}

/// Closed-form budget sweep over fiber length. Points are independent and
/// run in parallel when the `parallel` feature is enabled; each point uses
/// a seed derived from its index.
pub fn sweep_fiber_length(base: &ScenarioConfig, lengths: &[f64]) -> Result<Vec<SweepPoint>> {
    let eval = |(i, &length): (usize, &f64)| -> Result<SweepPoint> {
        let mut cfg = base.clone();
        cfg.channel.fiber_length_km = length;
        cfg.seed = subseed(base.seed, 1000 + i as u64);
        let report = noise_budget_report(&cfg)?;
        Ok(SweepPoint {
            fiber_length_km: length,
            transmittance: transmittance_of(&cfg.channel)?,
            sigma_rad: report.residual_phase_sigma_rad,
            squeezing_db: report.squeezing_db,
            antisqueezing_db: report.antisqueezing_db,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        lengths.par_iter().enumerate().map(eval).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        lengths.iter().enumerate().map(eval).collect()
    }
}
