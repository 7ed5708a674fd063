//! Discrete-time simulation of the heterodyne optical phase-locked loop.
//!
//! The loop runs at `loop_rate` on the demodulated beat phase. Each update:
//!
//! 1. The plant phase advances by the phase diffusion of both lasers
//!    (independent Wiener walks, Lorentzian linewidths) plus a deterministic
//!    ramp when the receiver demodulation clock is offset from the source
//!    clock.
//! 2. The beat phase is detected modulo 2*pi with an additive Gaussian
//!    detector noise floor set by the pilot carrier-to-noise ratio.
//! 3. A PI controller splits the correction over two actuators: the
//!    proportional branch drives an electro-optic phase modulator, the
//!    integral branch drives the laser piezo (a frequency actuator modelled
//!    as a one-pole low pass) whose phase contribution is the integral of
//!    its frequency. Both branches clamp to their ranges and the integrator
//!    halts while its actuator is saturated.
//!
//! The EOM drive is an accumulating DAC register with a slow AC-coupling
//! leak: each update adds the new proportional command and the register
//! bleeds toward zero over [`LockParams::eom_ac_coupling_s`]. The register,
//! not the raw command, is what the modulator range clamps. This is the
//! usual digital realization of a fast phase branch; a memoryless `kp *
//! error` drive would leave the error suppressed by only `1 + kp` across
//! the whole band and cannot reach the residuals these lasers allow. The
//! leak hands the accumulated DC to the piezo branch, which also absorbs
//! any demodulation-clock frequency offset; with `ki = 0` a frequency
//! offset exhausts the EOM range and the loop loses lock, which is the
//! expected type-1 behaviour.
//!
//! Loop gains are not first-principles quantities here; they are derived
//! from a target unity-gain bandwidth via [`LockParams::with_unity_gain`],
//! and the defaults reproduce a residual phase jitter of a few hundredths of
//! a radian with 100 Hz-class lasers.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::stats::{mean, std_dev, wrap_phase};

use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// Configuration of the lock loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockParams {
    /// Controller update rate in Hz.
    pub loop_rate: f64,
    /// Proportional gain, rad of EOM drive per rad of error.
    pub kp: f64,
    /// Integral gain, Hz of piezo drive per rad of error per update.
    pub ki: f64,
    /// Source laser linewidth in Hz.
    pub linewidth_source: f64,
    /// Receiver (local-oscillator) laser linewidth in Hz.
    pub linewidth_llo: f64,
    /// Relative frequency error of the receiver demodulation clock in ppm;
    /// zero when the optical clock link is active.
    pub clock_offset_ppm: f64,
    /// Demodulation frequency in Hz (the pilot offset).
    pub demod_freq: f64,
    /// Detector phase noise, rad rms per update.
    pub detector_phase_noise_floor: f64,
    /// Piezo actuator bandwidth in Hz (one-pole low pass).
    pub piezo_bandwidth: f64,
    /// Piezo frequency range in Hz (symmetric clamp).
    pub piezo_range: f64,
    /// EOM phase range in rad (symmetric clamp).
    pub eom_range: f64,
    /// Lead applied to the frequency branch, in updates: the piezo command
    /// is `integrator + ki * freq_lead_updates * error`. The frequency
    /// branch integrates twice to phase (frequency command, then the laser),
    /// so without this zero the actuator crossover is undamped.
    pub freq_lead_updates: f64,
    /// AC-coupling time constant of the EOM drive register, seconds.
    pub eom_ac_coupling_s: f64,
    /// Initial phase error in rad.
    pub initial_phase_offset: f64,
    /// Initial frequency error of the LLO in Hz.
    pub initial_freq_offset: f64,
}

impl Default for LockParams {
    fn default() -> Self {
        Self::with_unity_gain(200e3)
    }
}

impl LockParams {
    /// Derive gains from a target unity-gain bandwidth `f_ug`. The
    /// proportional gain maps the closed one-pole response onto `f_ug`; the
    /// piezo branch takes the spectrum below `f_x = f_ug / 500` off the
    /// EOM register (which must stay well inside its range), with its lead
    /// zero one octave above `f_x` to damp the handoff.
    pub fn with_unity_gain(f_ug: f64) -> Self {
        Self::with_unity_gain_at(f_ug, 1e6)
    }

    /// [`LockParams::with_unity_gain`] for a non-default update rate.
    pub fn with_unity_gain_at(f_ug: f64, loop_rate: f64) -> Self {
        let kp = 1.0 - (-2.0 * PI * f_ug / loop_rate).exp();
        let f_x = f_ug / 500.0;
        let f_zero = 2.0 * f_x;
        let freq_lead_updates = loop_rate / (2.0 * PI * f_zero);
        let ki = kp * f_x;
        Self {
            loop_rate,
            kp,
            ki,
            linewidth_source: 100.0,
            linewidth_llo: 100.0,
            clock_offset_ppm: 0.0,
            demod_freq: 40e6,
            detector_phase_noise_floor: 10f64.powf(-35.0 / 20.0),
            piezo_bandwidth: 20e3,
            piezo_range: 2e6,
            eom_range: PI,
            freq_lead_updates,
            eom_ac_coupling_s: 0.02,
            initial_phase_offset: 0.0,
            initial_freq_offset: 0.0,
        }
    }

    /// Detector noise floor implied by a pilot carrier-to-noise ratio in dB,
    /// measured in the demodulation bandwidth: `10^(-cnr/20)` rad rms.
    pub fn floor_from_cnr(cnr_db: f64) -> f64 {
        10f64.powf(-cnr_db / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v, constraint) in [
            ("loop_rate", self.loop_rate, "> 0"),
            ("piezo_bandwidth", self.piezo_bandwidth, "> 0"),
            ("piezo_range", self.piezo_range, "> 0"),
            ("eom_range", self.eom_range, "> 0"),
            ("eom_ac_coupling_s", self.eom_ac_coupling_s, "> 0"),
        ] {
            if !(v > 0.0) {
                return Err(Error::ParamDomain {
                    name,
                    value: v,
                    constraint,
                });
            }
        }
        for (name, v) in [
            ("kp", self.kp),
            ("ki", self.ki),
            ("linewidth_source", self.linewidth_source),
            ("linewidth_llo", self.linewidth_llo),
            ("detector_phase_noise_floor", self.detector_phase_noise_floor),
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

/// Outcome of a lock run.
#[derive(Debug, Clone, PartialEq)]
pub struct LockResult {
    /// Measured phase error per update, rad.
    pub phase_error_trace: Vec<f64>,
    /// Standard deviation of the error over the final 80 % of the trace.
    pub residual_sigma: f64,
    /// True when the mean |error| over the final 10 % is below 0.1 rad.
    pub acquired: bool,
    /// First time the error settles below 0.1 rad for good, seconds.
    pub acquisition_time: Option<f64>,
}

impl LockResult {
    /// Two-column text dump (time_s, phase_error_rad), one sample per line.
    pub fn trace_text(&self, loop_rate: f64) -> String {
        let mut out = String::with_capacity(self.phase_error_trace.len() * 24);
        for (i, e) in self.phase_error_trace.iter().enumerate() {
            out.push_str(&format!("{:.9} {:.9}\n", i as f64 / loop_rate, e));
        }
        out
    }
}

/// Wiener phase walk for a Lorentzian line: the trajectory starts at zero
/// and each increment is Gaussian with variance `2 pi linewidth / sample_rate`.
pub fn laser_phase_walk(linewidth: f64, sample_rate: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(sample_rate > 0.0) {
        return Err(Error::ParamDomain {
            name: "sample_rate",
            value: sample_rate,
            constraint: "> 0",
        });
    }
    if !(linewidth >= 0.0) {
        return Err(Error::ParamDomain {
            name: "linewidth",
            value: linewidth,
            constraint: ">= 0",
        });
    }
    if n == 0 {
        return Err(Error::Config("phase walk needs n >= 1".into()));
    }
    let step = (2.0 * PI * linewidth / sample_rate).sqrt();
    let mut rng = stream_rng(seed, 0);
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    out.push(0.0);
    for _ in 1..n {
        let w: f64 = StandardNormal.sample(&mut rng);
        phase += step * w;
        out.push(phase);
    }
    Ok(out)
}

/// I/Q demodulation of a real passband series: mix with cos/-sin at
/// `f_demod` and low-pass both rails with a two-stage one-pole filter.
///
/// A unit tone at `f_demod` with phase phi settles to (cos(phi)/2,
/// sin(phi)/2), so `atan2(Q, I)` recovers phi.
pub fn iq_demodulate(
    samples: &[f64],
    f_demod: f64,
    sample_rate: f64,
    lpf_cutoff: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(f_demod > 0.0 && f_demod < sample_rate / 2.0) {
        return Err(Error::Config(format!(
            "demodulation frequency {f_demod} Hz must lie below Nyquist ({} Hz)",
            sample_rate / 2.0
        )));
    }
    if !(lpf_cutoff > 0.0 && lpf_cutoff < f_demod) {
        return Err(Error::Config(format!(
            "low-pass cutoff {lpf_cutoff} Hz must lie below the demodulation frequency"
        )));
    }
    let alpha = 1.0 - (-2.0 * PI * lpf_cutoff / sample_rate).exp();
    let w = 2.0 * PI * f_demod / sample_rate;
    let mut i_out = Vec::with_capacity(samples.len());
    let mut q_out = Vec::with_capacity(samples.len());
    // two cascaded one-pole stages per rail
    let mut st = [0.0f64; 4];
    for (k, &s) in samples.iter().enumerate() {
        let ph = w * k as f64;
        let mi = s * ph.cos();
        let mq = -s * ph.sin();
        st[0] += alpha * (mi - st[0]);
        st[1] += alpha * (st[0] - st[1]);
        st[2] += alpha * (mq - st[2]);
        st[3] += alpha * (st[2] - st[3]);
        i_out.push(st[1]);
        q_out.push(st[3]);
    }
    Ok((i_out, q_out))
}

/// Number of samples after which the demodulation low pass has settled.
pub fn demod_settling(sample_rate: f64, lpf_cutoff: f64) -> usize {
    (8.0 * sample_rate / (2.0 * PI * lpf_cutoff)).ceil() as usize
}

/// Four-quadrant phase of an I/Q pair, in (-pi, pi].
pub fn phase_detect(i: f64, q: f64) -> Result<f64> {
    if i == 0.0 && q == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    let theta = q.atan2(i);
    Ok(if theta <= -PI { PI } else { theta })
}

/// Actuation command produced by one PI update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiCommand {
    /// Frequency branch (piezo) in Hz.
    pub frequency_hz: f64,
    /// Phase branch (EOM) in rad.
    pub phase_rad: f64,
    /// True when either branch hit its clamp this update.
    pub saturated: bool,
}

/// PI controller state: the frequency-branch integrator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiState {
    pub integrator_hz: f64,
}

/// One PI update. The phase branch is `kp * error` clamped to the EOM
/// range; the frequency branch accumulates `ki * error` with anti-windup
/// (the integrator holds while clamped) plus the lead term that damps the
/// piezo/EOM crossover.
pub fn pi_step(state: &mut PiState, error: f64, params: &LockParams) -> PiCommand {
    let mut saturated = false;

    let raw_phase = params.kp * error;
    let phase_rad = raw_phase.clamp(-params.eom_range, params.eom_range);
    if phase_rad != raw_phase {
        saturated = true;
    }

    let candidate = state.integrator_hz + params.ki * error;
    if candidate.abs() > params.piezo_range {
        saturated = true;
        state.integrator_hz = candidate.clamp(-params.piezo_range, params.piezo_range);
    } else {
        state.integrator_hz = candidate;
    }

    let raw_freq = state.integrator_hz + params.ki * params.freq_lead_updates * error;
    let frequency_hz = raw_freq.clamp(-params.piezo_range, params.piezo_range);
    if frequency_hz != raw_freq {
        saturated = true;
    }

    PiCommand {
        frequency_hz,
        phase_rad,
        saturated,
    }
}

/// A phase step injected into the plant at a given time, used to exercise
/// cycle slips and re-acquisition.
#[derive(Debug, Clone, Copy)]
pub struct Disturbance {
    pub time_s: f64,
    pub phase_jump_rad: f64,
}

/// Run the closed loop for `duration` seconds. Deterministic per seed.
pub fn run_lock(params: &LockParams, duration: f64, seed: u64) -> Result<LockResult> {
    run_lock_disturbed(params, duration, seed, &[])
}

/// [`run_lock`] with phase-step disturbances injected into the plant.
pub fn run_lock_disturbed(
    params: &LockParams,
    duration: f64,
    seed: u64,
    disturbances: &[Disturbance],
) -> Result<LockResult> {
    params.validate()?;
    let n = (duration * params.loop_rate).round() as usize;
    if n < 10 {
        return Err(Error::Config(format!(
            "lock run needs duration * loop_rate >= 10, got {n}"
        )));
    }
    let dt = 1.0 / params.loop_rate;
    let step_src = (2.0 * PI * params.linewidth_source / params.loop_rate).sqrt();
    let step_llo = (2.0 * PI * params.linewidth_llo / params.loop_rate).sqrt();
    let clock_ramp = 2.0 * PI * params.clock_offset_ppm * 1e-6 * params.demod_freq * dt;
    let alpha_pz = 1.0 - (-2.0 * PI * params.piezo_bandwidth / params.loop_rate).exp();
    let eom_leak = (-dt / params.eom_ac_coupling_s).exp();

    let mut rng_src = stream_rng(seed, 0);
    let mut rng_llo = stream_rng(seed, 1);
    let mut rng_det = stream_rng(seed, 2);

    let mut plant = params.initial_phase_offset;
    let freq_err = params.initial_freq_offset; // uncorrected LLO frequency error, Hz
    let mut eom_phase = 0.0;
    let mut piezo_freq = 0.0;
    let mut piezo_phase = 0.0;
    let mut pi = PiState::default();
    let mut next_disturbance = 0usize;

    let mut trace = Vec::with_capacity(n);
    for k in 0..n {
        while next_disturbance < disturbances.len()
            && disturbances[next_disturbance].time_s <= k as f64 * dt
        {
            plant += disturbances[next_disturbance].phase_jump_rad;
            next_disturbance += 1;
        }

        let w_src: f64 = StandardNormal.sample(&mut rng_src);
        let w_llo: f64 = StandardNormal.sample(&mut rng_llo);
        plant += step_src * w_src - step_llo * w_llo + clock_ramp
            + 2.0 * PI * freq_err * dt;

        let e_true = wrap_phase(plant - eom_phase - piezo_phase);
        let noise: f64 = StandardNormal.sample(&mut rng_det);
        let e_meas = wrap_phase(e_true + params.detector_phase_noise_floor * noise);
        trace.push(e_meas);

        let cmd = pi_step(&mut pi, e_meas, params);
        eom_phase = (eom_leak * eom_phase + cmd.phase_rad)
            .clamp(-params.eom_range, params.eom_range);
        piezo_freq += alpha_pz * (cmd.frequency_hz - piezo_freq);
        piezo_phase += 2.0 * PI * piezo_freq * dt;
    }

    let tail80 = &trace[n / 5..];
    let residual_sigma = std_dev(tail80);
    let tail10 = &trace[n - n / 10..];
    let acquired = mean(tail10).abs() < 0.1;

    let acquisition_time = settle_time(&trace, 0.1, params.loop_rate);

    Ok(LockResult {
        phase_error_trace: trace,
        residual_sigma,
        acquired,
        acquisition_time,
    })
}

/// First time from which the windowed mean |error| stays below `threshold`
/// (window of 1/20 of the trace, at least 100 samples), matching the
/// semantics of the `acquired` flag.
fn settle_time(trace: &[f64], threshold: f64, loop_rate: f64) -> Option<f64> {
    let n = trace.len();
    let window = (n / 20).max(100).min(n);
    let mut acc: f64 = trace[..window].iter().sum();
    if (acc / window as f64).abs() < threshold {
        return Some(0.0);
    }
    for k in window..n {
        acc += trace[k] - trace[k - window];
        if (acc / window as f64).abs() < threshold {
            return Some((k + 1 - window) as f64 / loop_rate);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::linear_slope;

    fn quiet(params: &mut LockParams) {
        params.linewidth_source = 0.0;
        params.linewidth_llo = 0.0;
        params.detector_phase_noise_floor = 0.0;
    }

    #[test]
    fn zero_linewidth_walk_is_constant() {
        let w = laser_phase_walk(0.0, 1e6, 1000, 1).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn walk_increment_std_matches_linewidth() {
        // 100 Hz at 1 MHz: per-sample increment std = sqrt(2 pi 1e-4) = 0.02507
        let w = laser_phase_walk(100.0, 1e6, 1_000_000, 2).unwrap();
        let diffs: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).collect();
        let s = std_dev(&diffs);
        assert!(
            (s - 0.02507).abs() / 0.02507 < 0.01,
            "increment std {s}, want 0.02507"
        );
        assert_eq!(w[0], 0.0, "trajectory starts at zero");
    }

    #[test]
    fn walk_ensemble_variance_grows_linearly() {
        // var(phi(t)) = 2 pi linewidth t, checked over an ensemble of seeds
        let (lw, fs, n) = (100.0, 1e6, 2000usize);
        let t = (n - 1) as f64 / fs;
        let want = 2.0 * PI * lw * t;
        let finals: Vec<f64> = (0..1000)
            .map(|s| *laser_phase_walk(lw, fs, n, 1000 + s).unwrap().last().unwrap())
            .collect();
        let var = finals.iter().map(|x| x * x).sum::<f64>() / finals.len() as f64;
        assert!(
            (var - want).abs() / want < 0.05,
            "ensemble variance {var}, want {want}"
        );
    }

    #[test]
    fn walk_is_deterministic_per_seed() {
        let a = laser_phase_walk(50.0, 1e6, 512, 9).unwrap();
        let b = laser_phase_walk(50.0, 1e6, 512, 9).unwrap();
        assert_eq!(a, b);
    }

    fn tone(f: f64, fs: f64, phase: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| (2.0 * PI * f * k as f64 / fs + phase).cos())
            .collect()
    }

    #[test]
    fn iq_demod_recovers_tone_phase() {
        let (fs, f) = (200e6, 40e6);
        let x = tone(f, fs, 0.0, 50_000);
        let (i, q) = iq_demodulate(&x, f, fs, 1e6).unwrap();
        let settle = demod_settling(fs, 1e6);
        let (il, ql) = (i[i.len() - 1], q[q.len() - 1]);
        assert!((il - 0.5).abs() < 2e-3, "I settled to {il}");
        assert!(ql.abs() < 2e-3, "Q settled to {ql}");
        for k in (settle..x.len()).step_by(1000) {
            let ph = phase_detect(i[k], q[k]).unwrap();
            assert!(ph.abs() < 1e-3, "phase at {k}: {ph}");
        }
        // non-zero phase
        let x = tone(f, fs, 0.7, 50_000);
        let (i, q) = iq_demodulate(&x, f, fs, 1e6).unwrap();
        let ph = phase_detect(i[i.len() - 1], q[q.len() - 1]).unwrap();
        assert!((ph - 0.7).abs() < 1e-3, "phase {ph}, want 0.7");
    }

    #[test]
    fn iq_demod_frequency_offset_ramps_phase() {
        let (fs, f, df) = (200e6, 40e6, 5e3);
        let x = tone(f + df, fs, 0.0, 400_000);
        let (i, q) = iq_demodulate(&x, f, fs, 1e6).unwrap();
        let settle = demod_settling(fs, 1e6);
        let mut ph: Vec<f64> = (settle..x.len())
            .map(|k| phase_detect(i[k], q[k]).unwrap())
            .collect();
        crate::stats::unwrap_phase(&mut ph);
        let slope = linear_slope(&ph, 1.0 / fs);
        let want = 2.0 * PI * df;
        assert!(
            (slope - want).abs() / want < 1e-2,
            "slope {slope} rad/s, want {want}"
        );
    }

    #[test]
    fn iq_demod_phase_noise_matches_cnr() {
        use rand_distr::Distribution;
        // CNR defined against the noise power inside the (one-sided)
        // equivalent noise bandwidth of the demod low pass; the small-angle
        // phase jitter is then 10^(-CNR/20).
        let (fs, f, fc) = (200e6, 40e6, 2e6);
        let n = 600_000usize;
        let cnr_db = 40.0;

        // equivalent noise bandwidth of the two-stage one-pole filter,
        // measured from its white-noise variance gain
        let alpha = 1.0 - (-2.0 * PI * fc / fs).exp();
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        let mut imp = 0.0;
        let mut power = 0.0;
        for k in 0..200_000 {
            let x = if k == 0 { 1.0 } else { 0.0 };
            g1 += alpha * (x - g1);
            g2 += alpha * (g1 - g2);
            imp += g2;
            power += g2 * g2;
        }
        let b_n = power / (imp * imp) * fs / 2.0; // one-sided ENBW in Hz

        // white noise with density N0 such that P_carrier / (N0 b_n) = CNR
        let p_carrier = 0.5;
        let n0 = p_carrier / (10f64.powf(cnr_db / 10.0) * b_n);
        let sigma_w = (n0 * fs / 2.0).sqrt();

        let mut rng = crate::rng::stream_rng(5, 0);
        let x: Vec<f64> = (0..n)
            .map(|k| {
                let t = 2.0 * PI * f * k as f64 / fs;
                let w: f64 = StandardNormal.sample(&mut rng);
                t.cos() + sigma_w * w
            })
            .collect();
        let (i, q) = iq_demodulate(&x, f, fs, fc).unwrap();
        let settle = demod_settling(fs, fc);
        let ph: Vec<f64> = (settle..n).map(|k| q[k].atan2(i[k])).collect();
        let s = std_dev(&ph);
        let want = 10f64.powf(-cnr_db / 20.0);
        assert!(
            (s - want).abs() / want < 0.2,
            "phase std {s}, want {want} +- 20%"
        );
    }

    #[test]
    fn phase_detect_quadrants() {
        assert_eq!(phase_detect(1.0, 0.0).unwrap(), 0.0);
        assert!((phase_detect(0.0, 1.0).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((phase_detect(-0.5, -0.5).unwrap() + 3.0 * PI / 4.0).abs() < 1e-15);
        assert_eq!(phase_detect(0.0, 0.0), Err(Error::UndefinedPhase));
    }

    #[test]
    fn pi_step_examples() {
        let params = LockParams {
            kp: 2.0,
            ki: 0.0,
            ..LockParams::default()
        };
        let mut st = PiState::default();
        let cmd = pi_step(&mut st, 0.3, &params);
        assert_eq!(cmd.phase_rad, 0.6);
        assert_eq!(cmd.frequency_hz, 0.0);
        assert!(!cmd.saturated);

        // discrete integrator: n steps of constant error
        let params = LockParams {
            kp: 0.0,
            ki: 2.5,
            ..LockParams::default()
        };
        let mut st = PiState::default();
        for _ in 0..7 {
            pi_step(&mut st, 0.1, &params);
        }
        assert!((st.integrator_hz - 7.0 * 2.5 * 0.1).abs() < 1e-12);

        // clamp and saturation flag
        let params = LockParams {
            kp: 10.0,
            ki: 0.0,
            eom_range: 1.0,
            ..LockParams::default()
        };
        let mut st = PiState::default();
        let cmd = pi_step(&mut st, 0.5, &params);
        assert_eq!(cmd.phase_rad, 1.0);
        assert!(cmd.saturated);
    }

    #[test]
    fn integrator_halts_while_clamped() {
        let params = LockParams {
            kp: 0.0,
            ki: 1.0,
            piezo_range: 2.0,
            freq_lead_updates: 0.0,
            ..LockParams::default()
        };
        let mut st = PiState::default();
        for _ in 0..10 {
            pi_step(&mut st, 1.0, &params);
        }
        assert_eq!(st.integrator_hz, 2.0, "integrator must hold at the clamp");
        // errors of the opposite sign unwind immediately
        let cmd = pi_step(&mut st, -1.0, &params);
        assert_eq!(cmd.frequency_hz, 1.0);
        assert!(!cmd.saturated);
    }

    #[test]
    fn noiseless_loop_converges_from_offset() {
        let mut params = LockParams::default();
        quiet(&mut params);
        params.initial_phase_offset = 0.5;
        let res = run_lock(&params, 0.05, 1).unwrap();
        let tail = &res.phase_error_trace[res.phase_error_trace.len() - 100..];
        assert!(
            tail.iter().all(|e| e.abs() < 1e-3),
            "terminal error {:?}",
            &tail[..3]
        );
        assert!(res.acquired);
        assert!(res.acquisition_time.is_some());
        assert_eq!(res.phase_error_trace.len(), 50_000);
    }

    #[test]
    fn residual_sigma_matches_loop_theory() {
        // 100 + 100 Hz lasers, 200 kHz unity gain: residual must stay below
        // 0.05 rad and near the first-order estimate pi*linewidth/(2 f_ug).
        let params = LockParams::default();
        let res = run_lock(&params, 0.5, 42).unwrap();
        assert!(res.acquired, "loop must acquire");
        assert!(
            res.residual_sigma <= 0.05,
            "residual sigma {} rad",
            res.residual_sigma
        );
        let analytic = (PI * 200.0 / (2.0 * 200e3)).sqrt();
        let ratio = res.residual_sigma / analytic;
        assert!(
            (0.5..2.0).contains(&ratio),
            "residual {} vs analytic {} (ratio {ratio})",
            res.residual_sigma,
            analytic
        );
    }

    #[test]
    fn clock_offset_needs_the_integrator() {
        // 1 ppm of 40 MHz = 40 Hz of demod offset. Without the frequency
        // branch the EOM alone cannot track the ramp.
        let mut params = LockParams::default();
        quiet(&mut params);
        params.clock_offset_ppm = 1.0;
        params.ki = 0.0;
        // short enough that the ramping error has not wrapped yet
        let res = run_lock(&params, 0.02, 3).unwrap();
        assert!(!res.acquired, "type-1 loop must not hold a frequency offset");
        let end = *res.phase_error_trace.last().unwrap();
        assert!(end.abs() > 1.0, "error should keep ramping, got {end}");

        let mut params = LockParams::default();
        quiet(&mut params);
        params.clock_offset_ppm = 1.0;
        let res = run_lock(&params, 0.1, 3).unwrap();
        assert!(res.acquired, "integrator must absorb the clock offset");
        assert!(res.residual_sigma < 0.01, "sigma {}", res.residual_sigma);
    }

    #[test]
    fn determinism_bit_identical() {
        let params = LockParams::default();
        let a = run_lock(&params, 0.05, 7).unwrap();
        let b = run_lock(&params, 0.05, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn higher_bandwidth_reduces_linewidth_residual() {
        // gain ladder in the low-gain regime; doubling bandwidth must help
        let mut last = f64::INFINITY;
        for f_ug in [25e3, 50e3, 100e3] {
            let mut params = LockParams::with_unity_gain(f_ug);
            params.detector_phase_noise_floor = 0.0;
            let res = run_lock(&params, 0.5, 11).unwrap();
            assert!(
                res.residual_sigma < last,
                "sigma did not drop at f_ug {f_ug}: {} !< {last}",
                res.residual_sigma
            );
            last = res.residual_sigma;
        }
    }

    #[test]
    fn anti_windup_recovery_is_bounded() {
        // force the piezo clamp with a large initial frequency error, then
        // compare the recovery against the same loop with a wide range
        let mut saturated = LockParams::default();
        quiet(&mut saturated);
        saturated.initial_freq_offset = 30e3;
        saturated.ki *= 50.0; // aggressive integrator to provoke windup
        saturated.piezo_range = 35e3;
        let mut free = saturated;
        free.piezo_range = 10e6;

        let res_sat = run_lock(&saturated, 0.1, 13).unwrap();
        let res_free = run_lock(&free, 0.1, 13).unwrap();
        assert!(res_sat.acquired, "saturated loop should still acquire");

        // overshoot after the first zero crossing must stay within twice the
        // unsaturated peak
        let overshoot = |trace: &[f64]| {
            let first_cross = trace.iter().position(|e| e.abs() < 0.01).unwrap_or(0);
            trace[first_cross..]
                .iter()
                .fold(0.0f64, |m, e| m.max(e.abs()))
        };
        let os_sat = overshoot(&res_sat.phase_error_trace);
        let os_free = overshoot(&res_free.phase_error_trace);
        assert!(
            os_sat <= 2.0 * os_free.max(1e-3),
            "anti-windup overshoot {os_sat} vs unsaturated {os_free}"
        );
    }

    #[test]
    fn cycle_slip_reacquires() {
        let mut params = LockParams::default();
        quiet(&mut params);
        let slip = Disturbance {
            time_s: 0.02,
            phase_jump_rad: 1.9 * PI,
        };
        let res = run_lock_disturbed(&params, 0.06, 1, &[slip]).unwrap();
        assert!(res.acquired, "loop must re-acquire after a near-2pi slip");
        let tail = &res.phase_error_trace[res.phase_error_trace.len() - 100..];
        assert!(tail.iter().all(|e| e.abs() < 1e-3));
        // an exact 2 pi slip is invisible to the wrapped detector
        let slip2 = Disturbance {
            time_s: 0.02,
            phase_jump_rad: 2.0 * PI,
        };
        let res2 = run_lock_disturbed(&params, 0.06, 1, &[slip2]).unwrap();
        let worst = res2.phase_error_trace[20_500..]
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(worst < 1e-6, "2 pi slip must be invisible, worst {worst}");
    }

    #[test]
    fn trace_is_wrapped() {
        let params = LockParams {
            initial_phase_offset: 3.0,
            clock_offset_ppm: 5.0,
            ki: 0.0, // let it ramp and wrap
            ..LockParams::default()
        };
        let res = run_lock(&params, 0.05, 21).unwrap();
        for &e in &res.phase_error_trace {
            assert!(e > -PI - 1e-12 && e <= PI + 1e-12, "unwrapped sample {e}");
        }
    }

    #[test]
    fn short_runs_are_rejected() {
        assert!(run_lock(&LockParams::default(), 1e-6, 0).is_err());
    }
}
