//! Balanced-homodyne trace synthesis and the analysis chain that turns a
//! recorded quadrature series into shot-noise-normalized spectra, band
//! powers, and pilot phase statistics.
//!
//! Synthesis draws two independent Gaussian processes shaped to the
//! squeezed and anti-squeezed variance spectra (FIR shaping of white noise)
//! and projects them onto the instantaneous local-oscillator phase:
//!
//! ```text
//! x(t) = cos(theta(t)) xm(t) + sin(theta(t)) xp(t) + e(t)
//! ```
//!
//! where `e` is white electronic noise a configurable clearance below shot
//! noise. The analysis side is a conventional Welch averaged periodogram;
//! everything is normalized so that vacuum = 1 (0 dB).

use crate::error::{Error, Result};
use crate::fir;
use crate::rng::{normal_vec, stream_rng};
use crate::spectrum::{db, QuadratureSpectrum};
use crate::stats::{chi2_sf, mean, normal_cdf, std_dev, unwrap_phase};
use rustfft::{num_complex::Complex, FftPlanner};

/// Default FIR shaping-filter length for synthesis.
pub const DEFAULT_SHAPING_TAPS: usize = 257;
/// Default Welch segment length.
pub const DEFAULT_SEGMENT_LEN: usize = 1 << 14;
/// Default Welch overlap fraction.
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Local-oscillator phase over a record: fixed or per-sample.
#[derive(Debug, Clone, PartialEq)]
pub enum LoPhase {
    Constant(f64),
    Path(Vec<f64>),
}

impl LoPhase {
    fn at(&self, k: usize) -> f64 {
        match self {
            LoPhase::Constant(t) => *t,
            LoPhase::Path(p) => p[k],
        }
    }
}

/// A sampled quadrature time series in shot-noise units.
#[derive(Debug, Clone, PartialEq)]
pub struct HomodyneRecord {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub lo_phase: LoPhase,
    pub label: String,
}

/// One-sided power spectral density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    /// Bin frequencies in Hz, DC through Nyquist.
    pub freqs: Vec<f64>,
    /// Power per bin. Absolute estimates carry units of 1/Hz; after
    /// [`normalize_to_shot`] the values are linear relative to vacuum.
    pub power: Vec<f64>,
    /// Equivalent noise bandwidth of one bin, Hz.
    pub resolution_bandwidth: f64,
}

impl PsdEstimate {
    /// CSV export: `freq_hz,power_rel_linear,power_rel_db` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.freqs.len() * 40 + 40);
        out.push_str("freq_hz,power_rel_linear,power_rel_db\n");
        for (f, p) in self.freqs.iter().zip(&self.power) {
            let db_val = if *p > 0.0 { 10.0 * p.log10() } else { f64::NEG_INFINITY };
            out.push_str(&format!("{:.6},{:.9e},{:.6}\n", f, p, db_val));
        }
        out
    }
}

/// Window shape for the Welch estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    fn build(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => fir::hann(n),
        }
    }
}

/// Synthesize a homodyne record consistent with `spec` under the given LO
/// phase, with white electronic noise `clearance_db` below shot noise.
/// Uses the default shaping-filter length.
pub fn synthesize_trace(
    spec: &QuadratureSpectrum,
    lo_phase: &LoPhase,
    sample_rate: f64,
    n: usize,
    electronic_clearance_db: f64,
    seed: u64,
) -> Result<HomodyneRecord> {
    synthesize_trace_with(
        spec,
        lo_phase,
        sample_rate,
        n,
        electronic_clearance_db,
        seed,
        DEFAULT_SHAPING_TAPS,
    )
}

/// [`synthesize_trace`] with an explicit shaping-filter length (odd).
pub fn synthesize_trace_with(
    spec: &QuadratureSpectrum,
    lo_phase: &LoPhase,
    sample_rate: f64,
    n: usize,
    electronic_clearance_db: f64,
    seed: u64,
    taps: usize,
) -> Result<HomodyneRecord> {
    let nyquist = sample_rate / 2.0;
    let covered = *spec.freqs.last().expect("validated spectrum");
    if covered < nyquist * (1.0 - 1e-9) {
        return Err(Error::SpectrumCoverage {
            needed: nyquist,
            covered,
        });
    }
    if n < taps {
        return Err(Error::BadSegmentation(format!(
            "record length {n} shorter than the {taps}-tap shaping filter"
        )));
    }
    if let LoPhase::Path(p) = lo_phase {
        if p.len() != n {
            return Err(Error::Config(format!(
                "LO phase path has {} samples, record needs {n}",
                p.len()
            )));
        }
    }

    // amplitude shaping: |H(f)| = sqrt(V(f))
    let h_minus = fir::design_magnitude_fir(|f| spec.v_minus_at(f).sqrt(), taps, sample_rate);
    let h_plus = fir::design_magnitude_fir(|f| spec.v_plus_at(f).sqrt(), taps, sample_rate);

    // pad by taps-1 so the valid-mode convolution yields exactly n samples
    let n_white = n + taps - 1;
    let white_m = normal_vec(&mut stream_rng(seed, 0), n_white);
    let white_p = normal_vec(&mut stream_rng(seed, 1), n_white);
    let xm = fir::filter_auto(&white_m, &h_minus);
    let xp = fir::filter_auto(&white_p, &h_plus);

    let e_amp = 10f64.powf(-electronic_clearance_db / 20.0);
    let elec = normal_vec(&mut stream_rng(seed, 2), n);

    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = lo_phase.at(k);
        samples.push(t.cos() * xm[k] + t.sin() * xp[k] + e_amp * elec[k]);
    }

    Ok(HomodyneRecord {
        samples,
        sample_rate,
        lo_phase: lo_phase.clone(),
        label: String::new(),
    })
}

/// Welch averaged periodogram, one-sided. Dispatches to the parallel
/// segment loop when the `parallel` feature is enabled.
pub fn welch_psd(
    record: &HomodyneRecord,
    segment_len: usize,
    overlap_fraction: f64,
    window: Window,
) -> Result<PsdEstimate> {
    welch_impl(record, segment_len, overlap_fraction, window, cfg!(feature = "parallel"))
}

/// Single-threaded Welch estimate; same chunking and summation order as the
/// parallel path, so results are identical. Useful inside outer parallel
/// loops and for benchmarking.
pub fn welch_psd_serial(
    record: &HomodyneRecord,
    segment_len: usize,
    overlap_fraction: f64,
    window: Window,
) -> Result<PsdEstimate> {
    welch_impl(record, segment_len, overlap_fraction, window, false)
}

// Segments are grouped into fixed-size chunks; each chunk accumulates its
// periodograms sequentially and the per-chunk partials are summed in index
// order. The float summation order is therefore independent of thread count.
const SEGMENTS_PER_CHUNK: usize = 16;

fn welch_impl(
    record: &HomodyneRecord,
    segment_len: usize,
    overlap_fraction: f64,
    window: Window,
    parallel: bool,
) -> Result<PsdEstimate> {
    let n = record.samples.len();
    let fs = record.sample_rate;
    if segment_len < 8 || !segment_len.is_multiple_of(2) {
        return Err(Error::BadSegmentation(format!(
            "segment length {segment_len} must be even and >= 8"
        )));
    }
    if segment_len > n {
        return Err(Error::BadSegmentation(format!(
            "segment length {segment_len} exceeds record length {n}"
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::BadSegmentation(format!(
            "overlap fraction {overlap_fraction} must be in [0, 1)"
        )));
    }
    let hop = ((segment_len as f64) * (1.0 - overlap_fraction)).round() as usize;
    if hop == 0 {
        return Err(Error::BadSegmentation(
            "overlap leaves an empty hop".to_string(),
        ));
    }
    let n_segments = (n - segment_len) / hop + 1;

    let w = window.build(segment_len);
    let window_power: f64 = w.iter().map(|x| x * x).sum();
    let window_sum: f64 = w.iter().sum();

    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let n_bins = segment_len / 2 + 1;

    let accumulate_chunk = |chunk_idx: usize| -> Vec<f64> {
        let mut acc = vec![0.0f64; n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
        let start_seg = chunk_idx * SEGMENTS_PER_CHUNK;
        let end_seg = (start_seg + SEGMENTS_PER_CHUNK).min(n_segments);
        for seg in start_seg..end_seg {
            let off = seg * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(record.samples[off + i] * w[i], 0.0);
            }
            fft.process(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                *a += buf[k].norm_sqr();
            }
        }
        acc
    };

    let n_chunks = n_segments.div_ceil(SEGMENTS_PER_CHUNK);
    let partials: Vec<Vec<f64>> = if parallel {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n_chunks).into_par_iter().map(accumulate_chunk).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_chunks).map(accumulate_chunk).collect()
        }
    } else {
        (0..n_chunks).map(accumulate_chunk).collect()
    };

    let mut power = vec![0.0f64; n_bins];
    for part in &partials {
        for (p, a) in power.iter_mut().zip(part) {
            *p += a;
        }
    }

    // one-sided density: 1/(fs * sum w^2) per segment, doubled except at DC
    // and Nyquist
    let scale = 1.0 / (fs * window_power * n_segments as f64);
    for (k, p) in power.iter_mut().enumerate() {
        let fold = if k == 0 || k == n_bins - 1 { 1.0 } else { 2.0 };
        *p *= scale * fold;
    }

    let freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * fs / segment_len as f64).collect();
    let enbw = fs * window_power / (window_sum * window_sum);

    Ok(PsdEstimate {
        freqs,
        power,
        resolution_bandwidth: enbw,
    })
}

/// Divide a signal PSD by the vacuum calibration PSD bin per bin.
pub fn normalize_to_shot(signal: &PsdEstimate, vacuum: &PsdEstimate) -> Result<PsdEstimate> {
    if signal.freqs != vacuum.freqs {
        return Err(Error::GridMismatch);
    }
    let power = signal
        .power
        .iter()
        .zip(&vacuum.power)
        .map(|(s, v)| s / v)
        .collect();
    Ok(PsdEstimate {
        freqs: signal.freqs.clone(),
        power,
        resolution_bandwidth: signal.resolution_bandwidth,
    })
}

/// Mean relative power over `[f_center - rbw/2, f_center + rbw/2]`, in dB.
pub fn band_noise_power(psd: &PsdEstimate, f_center: f64, rbw: f64) -> Result<f64> {
    let lo = f_center - rbw / 2.0;
    let hi = f_center + rbw / 2.0;
    if lo < psd.freqs[0] || hi > *psd.freqs.last().unwrap() {
        return Err(Error::BandOutsideGrid { lo, hi });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (f, p) in psd.freqs.iter().zip(&psd.power) {
        if *f >= lo && *f <= hi {
            acc += p;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::BandOutsideGrid { lo, hi });
    }
    Ok(db(acc / count as f64))
}

/// Demodulate the pilot tone out of a raw beat record and return its
/// unwrapped phase trajectory. The low-pass settling transient is trimmed.
pub fn pilot_phase_profile(
    beat: &[f64],
    f_pilot: f64,
    sample_rate: f64,
    lpf_cutoff: f64,
) -> Result<Vec<f64>> {
    let (i, q) = crate::lockloop::iq_demodulate(beat, f_pilot, sample_rate, lpf_cutoff)?;
    let settle = crate::lockloop::demod_settling(sample_rate, lpf_cutoff);
    if settle >= beat.len() {
        return Err(Error::Config(format!(
            "record too short: {} samples, demodulation needs {settle} to settle",
            beat.len()
        )));
    }
    let mut phase: Vec<f64> = i[settle..]
        .iter()
        .zip(&q[settle..])
        .map(|(&ii, &qq)| qq.atan2(ii))
        .collect();
    unwrap_phase(&mut phase);
    Ok(phase)
}

/// Histogram of a phase trajectory with a Gaussian moment fit and a
/// chi-square goodness-of-fit statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHistogram {
    /// Bin edges, length `counts.len() + 1`, symmetric about the mean.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub fit_mean: f64,
    pub fit_sigma: f64,
    /// Chi-square statistic against the fitted Gaussian; `None` when the
    /// input is degenerate or leaves no degrees of freedom.
    pub goodness: Option<GoodnessOfFit>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodnessOfFit {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl PhaseHistogram {
    /// CSV export: `bin_center_rad,count` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.counts.len() * 24 + 24);
        out.push_str("bin_center_rad,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let center = 0.5 * (self.bin_edges[i] + self.bin_edges[i + 1]);
            out.push_str(&format!("{:.9},{}\n", center, c));
        }
        out
    }
}

/// Histogram a phase trajectory over a range symmetric about its mean and
/// fit a Gaussian by moments. `bin_count: None` applies the
/// Freedman-Diaconis rule.
pub fn phase_histogram_fit(phase: &[f64], bin_count: Option<usize>) -> Result<PhaseHistogram> {
    if phase.len() < 100 {
        return Err(Error::Config(format!(
            "histogram fit needs at least 100 samples, got {}",
            phase.len()
        )));
    }
    let n = phase.len();
    let m = mean(phase);
    let sigma = std_dev(phase);

    let spread = phase.iter().fold(0.0f64, |acc, &x| acc.max((x - m).abs()));
    if spread < 1e-12 {
        // degenerate: constant input
        return Ok(PhaseHistogram {
            bin_edges: vec![m - 0.5, m + 0.5],
            counts: vec![n as u64],
            fit_mean: m,
            fit_sigma: 0.0,
            goodness: None,
        });
    }

    let bins = match bin_count {
        Some(b) if b >= 2 => b,
        Some(b) => {
            return Err(Error::Config(format!("bin count {b} must be >= 2")));
        }
        None => freedman_diaconis_bins(phase, spread),
    };

    let half = spread * (1.0 + 1e-9);
    let lo = m - half;
    let width = 2.0 * half / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in phase {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<u64>(), n as u64);
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();

    let goodness = gaussian_gof(&bin_edges, &counts, m, sigma, n);

    Ok(PhaseHistogram {
        bin_edges,
        counts,
        fit_mean: m,
        fit_sigma: sigma,
        goodness,
    })
}

fn freedman_diaconis_bins(phase: &[f64], spread: f64) -> usize {
    let mut sorted = phase.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    if iqr <= 0.0 {
        return 64;
    }
    let width = 2.0 * iqr / (phase.len() as f64).cbrt();
    ((2.0 * spread / width).ceil() as usize).clamp(8, 512)
}

/// Pearson chi-square test of the fitted Gaussian. Bins with expected count
/// below 5 are merged inward from the tails; dof = bins - 3 (mean, sigma,
/// and normalization are taken from the data).
fn gaussian_gof(
    edges: &[f64],
    counts: &[u64],
    mu: f64,
    sigma: f64,
    n: usize,
) -> Option<GoodnessOfFit> {
    if sigma <= 0.0 {
        return None;
    }
    let expected: Vec<f64> = (0..counts.len())
        .map(|i| {
            let a = normal_cdf((edges[i] - mu) / sigma);
            let b = normal_cdf((edges[i + 1] - mu) / sigma);
            (b - a) * n as f64
        })
        .collect();

    // merge low-expectation bins from both tails toward the centre
    let mut obs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mut exp = expected;
    loop {
        if exp.len() <= 4 {
            break;
        }
        if exp[0] < 5.0 {
            let (o, e) = (obs.remove(0), exp.remove(0));
            obs[0] += o;
            exp[0] += e;
            continue;
        }
        let last = exp.len() - 1;
        if exp[last] < 5.0 {
            let (o, e) = (obs.remove(last), exp.remove(last));
            *obs.last_mut().unwrap() += o;
            *exp.last_mut().unwrap() += e;
            continue;
        }
        break;
    }
    if exp.len() < 4 {
        return None;
    }
    let chi2: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(o, e)| (o - e) * (o - e) / e.max(1e-12))
        .sum();
    let dof = exp.len() - 3;
    Some(GoodnessOfFit {
        chi2,
        dof,
        p_value: chi2_sf(chi2, dof),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::undb;
    use std::f64::consts::PI;

    fn dense_grid(fs: f64) -> Vec<f64> {
        (1..=512).map(|i| i as f64 * fs / 2.0 / 512.0).collect()
    }

    /// Rescale an absolute PSD (1/Hz) to shot-noise units: vacuum has a
    /// one-sided density of 2/fs, so the factor is fs/2.
    fn shot_normalized(psd: &PsdEstimate, fs: f64) -> PsdEstimate {
        PsdEstimate {
            freqs: psd.freqs.clone(),
            power: psd.power.iter().map(|p| p * fs / 2.0).collect(),
            resolution_bandwidth: psd.resolution_bandwidth,
        }
    }

    fn white_record(n: usize, fs: f64, seed: u64, scale: f64) -> HomodyneRecord {
        let mut samples = normal_vec(&mut stream_rng(seed, 0), n);
        for s in &mut samples {
            *s *= scale;
        }
        HomodyneRecord {
            samples,
            sample_rate: fs,
            lo_phase: LoPhase::Constant(0.0),
            label: "white".into(),
        }
    }

    #[test]
    fn welch_white_noise_is_flat_and_parseval_holds() {
        let fs = 20e6;
        let rec = white_record(1 << 20, fs, 1, 1.0);
        let psd = welch_psd(&rec, 1 << 12, 0.5, Window::Hann).unwrap();
        // one-sided density of unit-variance white noise is 2/fs
        let m = mean(&psd.power);
        assert!(
            (m * fs / 2.0 - 1.0).abs() < 0.01,
            "Parseval: mean power * fs/2 = {}",
            m * fs / 2.0
        );
        let var = rec.samples.iter().map(|x| x * x).sum::<f64>() / rec.samples.len() as f64;
        assert!((m * fs / 2.0 - var).abs() / var < 0.01);
    }

    #[test]
    fn welch_locates_a_tone() {
        let fs = 1e6;
        let f0 = 123_456.0;
        let n = 1 << 16;
        let samples: Vec<f64> = (0..n).map(|k| (2.0 * PI * f0 * k as f64 / fs).sin()).collect();
        let rec = HomodyneRecord {
            samples,
            sample_rate: fs,
            lo_phase: LoPhase::Constant(0.0),
            label: String::new(),
        };
        let psd = welch_psd(&rec, 1 << 12, 0.5, Window::Hann).unwrap();
        let peak = psd
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(
            (psd.freqs[peak] - f0).abs() < fs / 4096.0 * 1.5,
            "peak at {} Hz, want {f0}",
            psd.freqs[peak]
        );
    }

    #[test]
    fn welch_matches_ar1_analytic_response() {
        // x[k] = a x[k-1] + w[k]: PSD = (2/fs) / |1 - a e^{-j 2 pi f / fs}|^2
        let fs = 1e6;
        let a = 0.9;
        let mut rng = stream_rng(4, 0);
        let w = normal_vec(&mut rng, 1 << 21);
        let mut x = vec![0.0; w.len()];
        for k in 1..w.len() {
            x[k] = a * x[k - 1] + w[k];
        }
        let rec = HomodyneRecord {
            samples: x,
            sample_rate: fs,
            lo_phase: LoPhase::Constant(0.0),
            label: String::new(),
        };
        let psd = welch_psd(&rec, 1 << 12, 0.5, Window::Hann).unwrap();
        // compare band-averaged estimates against the analytic curve
        for center in [0.05, 0.1, 0.2, 0.35] {
            let f0 = center * fs;
            let lo = f0 - 0.01 * fs;
            let hi = f0 + 0.01 * fs;
            let mut got = 0.0;
            let mut want = 0.0;
            let mut cnt = 0;
            for (f, p) in psd.freqs.iter().zip(&psd.power) {
                if *f >= lo && *f <= hi {
                    got += p;
                    let om = 2.0 * PI * f / fs;
                    let denom = (1.0 - a * om.cos()).powi(2) + (a * om.sin()).powi(2);
                    want += 2.0 / fs / denom;
                    cnt += 1;
                }
            }
            got /= cnt as f64;
            want /= cnt as f64;
            let err_db = (10.0 * (got / want).log10()).abs();
            assert!(err_db < 0.2, "AR(1) PSD at {f0} Hz: {err_db} dB off");
        }
    }

    #[test]
    fn welch_rejects_bad_segmentation() {
        let rec = white_record(1024, 1e6, 0, 1.0);
        assert!(welch_psd(&rec, 2048, 0.5, Window::Hann).is_err());
        assert!(welch_psd(&rec, 512, 1.0, Window::Hann).is_err());
        assert!(welch_psd(&rec, 7, 0.5, Window::Hann).is_err());
    }

    #[test]
    fn serial_and_dispatch_paths_agree_bitwise() {
        let rec = white_record(1 << 17, 5e6, 9, 1.0);
        let a = welch_psd(&rec, 1 << 12, 0.5, Window::Hann).unwrap();
        let b = welch_psd_serial(&rec, 1 << 12, 0.5, Window::Hann).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthesized_vacuum_is_flat_at_shot_noise() {
        let fs = 20e6;
        let spec = QuadratureSpectrum::vacuum(dense_grid(fs)).unwrap();
        let rec = synthesize_trace(&spec, &LoPhase::Constant(1.234), fs, 1 << 21, 80.0, 5).unwrap();
        let psd = shot_normalized(
            &welch_psd(&rec, DEFAULT_SEGMENT_LEN, DEFAULT_OVERLAP, Window::Hann).unwrap(),
            fs,
        );
        // check in 100 kHz sub-bands over 0.5..9 MHz
        let mut f = 0.5e6;
        while f < 9e6 {
            let p = band_noise_power(&psd, f, 100e3).unwrap();
            assert!(p.abs() < 0.1, "vacuum PSD at {f} Hz: {p} dB");
            f += 0.5e6;
        }
    }

    #[test]
    fn synthesis_matches_projected_spectrum() {
        // squeezed input at theta = 0 reproduces V- in-band
        let fs = 20e6;
        let freqs = dense_grid(fs);
        let n = freqs.len();
        let spec =
            QuadratureSpectrum::new(freqs, vec![undb(-3.5); n], vec![undb(4.5); n]).unwrap();
        let rec = synthesize_trace(&spec, &LoPhase::Constant(0.0), fs, 1 << 21, 80.0, 6).unwrap();
        let psd = shot_normalized(
            &welch_psd(&rec, DEFAULT_SEGMENT_LEN, DEFAULT_OVERLAP, Window::Hann).unwrap(),
            fs,
        );
        let p = band_noise_power(&psd, 4e6, 200e3).unwrap();
        assert!((p + 3.5).abs() < 0.2, "band power {p} dB, want -3.5");

        // theta = pi/2 reproduces V+
        let rec = synthesize_trace(&spec, &LoPhase::Constant(PI / 2.0), fs, 1 << 21, 80.0, 6).unwrap();
        let psd = shot_normalized(
            &welch_psd(&rec, DEFAULT_SEGMENT_LEN, DEFAULT_OVERLAP, Window::Hann).unwrap(),
            fs,
        );
        let p = band_noise_power(&psd, 4e6, 200e3).unwrap();
        assert!((p - 4.5).abs() < 0.2, "band power {p} dB, want +4.5");
    }

    #[test]
    fn scanned_phase_envelope_oscillates_between_quadratures() {
        let fs = 20e6;
        let freqs = dense_grid(fs);
        let n_grid = freqs.len();
        let spec =
            QuadratureSpectrum::new(freqs, vec![undb(-3.0); n_grid], vec![undb(4.0); n_grid])
                .unwrap();
        let n = 1 << 22;
        let ramp: Vec<f64> = (0..n).map(|k| PI * k as f64 / (n - 1) as f64).collect();
        let rec = synthesize_trace(&spec, &LoPhase::Path(ramp), fs, n, 80.0, 7).unwrap();

        // block-wise band power envelope
        let blocks = 16;
        let block_len = n / blocks;
        let mut powers = Vec::new();
        for b in 0..blocks {
            let sub = HomodyneRecord {
                samples: rec.samples[b * block_len..(b + 1) * block_len].to_vec(),
                sample_rate: fs,
                lo_phase: LoPhase::Constant(0.0),
                label: String::new(),
            };
            let psd = shot_normalized(&welch_psd(&sub, 1 << 12, 0.5, Window::Hann).unwrap(), fs);
            powers.push(band_noise_power(&psd, 4e6, 200e3).unwrap());
        }
        let min = powers.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = powers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((min + 3.0).abs() < 0.3, "envelope min {min} dB, want -3.0");
        assert!((max - 4.0).abs() < 0.3, "envelope max {max} dB, want +4.0");
    }

    #[test]
    fn synthesis_is_deterministic_and_validates_inputs() {
        let fs = 10e6;
        let spec = QuadratureSpectrum::vacuum(dense_grid(fs)).unwrap();
        let a = synthesize_trace(&spec, &LoPhase::Constant(0.0), fs, 4096, 20.0, 3).unwrap();
        let b = synthesize_trace(&spec, &LoPhase::Constant(0.0), fs, 4096, 20.0, 3).unwrap();
        assert_eq!(a, b);

        // spectrum not covering Nyquist
        let short = QuadratureSpectrum::vacuum(vec![1e6, 2e6]).unwrap();
        assert!(matches!(
            synthesize_trace(&short, &LoPhase::Constant(0.0), fs, 4096, 20.0, 3),
            Err(Error::SpectrumCoverage { .. })
        ));
        // record shorter than the filter
        assert!(synthesize_trace(&spec, &LoPhase::Constant(0.0), fs, 100, 20.0, 3).is_err());
        // LO path length mismatch
        assert!(synthesize_trace(&spec, &LoPhase::Path(vec![0.0; 5]), fs, 4096, 20.0, 3).is_err());
    }

    #[test]
    fn normalization_examples() {
        let fs = 20e6;
        let rec = white_record(1 << 18, fs, 10, 1.0);
        let psd = welch_psd(&rec, 1 << 12, 0.5, Window::Hann).unwrap();
        let unity = normalize_to_shot(&psd, &psd).unwrap();
        for p in &unity.power {
            assert!((p - 1.0).abs() < 1e-12);
        }

        // constructed ratio: signal = 0.4467 * vacuum-shaped
        let sig = white_record(1 << 18, fs, 11, undb(-3.5).sqrt());
        let vac = white_record(1 << 18, fs, 12, 1.0);
        let ps = welch_psd(&sig, 1 << 12, 0.5, Window::Hann).unwrap();
        let pv = welch_psd(&vac, 1 << 12, 0.5, Window::Hann).unwrap();
        let rel = normalize_to_shot(&ps, &pv).unwrap();
        let band = band_noise_power(&rel, 5e6, 2e6).unwrap();
        assert!((band + 3.5).abs() < 0.1, "ratio {band} dB");

        // electronic-noise-only record against vacuum: the clearance line
        let dark = white_record(1 << 18, fs, 13, undb(-20.0).sqrt());
        let pd = welch_psd(&dark, 1 << 12, 0.5, Window::Hann).unwrap();
        let rel = normalize_to_shot(&pd, &pv).unwrap();
        let band = band_noise_power(&rel, 5e6, 2e6).unwrap();
        assert!((band + 20.0).abs() < 0.2, "clearance line {band} dB");

        // grid mismatch
        let other = welch_psd(&vac, 1 << 11, 0.5, Window::Hann).unwrap();
        assert_eq!(normalize_to_shot(&ps, &other), Err(Error::GridMismatch));
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let fs = 20e6;
        let sig = white_record(1 << 16, fs, 14, 0.7);
        let vac = white_record(1 << 16, fs, 15, 1.0);
        let scale = |r: &HomodyneRecord, g: f64| HomodyneRecord {
            samples: r.samples.iter().map(|x| x * g).collect(),
            ..r.clone()
        };
        let rel_a = normalize_to_shot(
            &welch_psd(&sig, 1 << 12, 0.5, Window::Hann).unwrap(),
            &welch_psd(&vac, 1 << 12, 0.5, Window::Hann).unwrap(),
        )
        .unwrap();
        let rel_b = normalize_to_shot(
            &welch_psd(&scale(&sig, 3.7), 1 << 12, 0.5, Window::Hann).unwrap(),
            &welch_psd(&scale(&vac, 3.7), 1 << 12, 0.5, Window::Hann).unwrap(),
        )
        .unwrap();
        for (a, b) in rel_a.power.iter().zip(&rel_b.power) {
            assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn band_power_of_flat_psd_is_zero_db() {
        let psd = PsdEstimate {
            freqs: (0..100).map(|i| i as f64 * 1e4).collect(),
            power: vec![1.0; 100],
            resolution_bandwidth: 1e4,
        };
        assert_eq!(band_noise_power(&psd, 5e5, 1e5).unwrap(), 0.0);
        assert!(matches!(
            band_noise_power(&psd, 2e6, 1e5),
            Err(Error::BandOutsideGrid { .. })
        ));
    }

    fn pilot_beat(fs: f64, f_pilot: f64, n: usize, phase: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..n)
            .map(|k| (2.0 * PI * f_pilot * k as f64 / fs + phase(k)).cos())
            .collect()
    }

    #[test]
    fn pilot_profile_recovers_constant_phase() {
        let (fs, fp) = (200e6, 40e6);
        let beat = pilot_beat(fs, fp, 200_000, |_| 0.3);
        let prof = pilot_phase_profile(&beat, fp, fs, 1e6).unwrap();
        for &p in prof.iter().step_by(997) {
            assert!((p - 0.3).abs() < 1e-3, "pilot phase {p}, want 0.3");
        }
    }

    #[test]
    fn pilot_profile_recovers_injected_jitter_sigma() {
        // slowly varying Gaussian jitter (AR(1) well inside the LPF band),
        // recovered through the demodulator and the histogram fit
        let (fs, fp) = (200e6, 40e6);
        for (i, sigma) in [0.01, 0.039, 0.1, 0.3].into_iter().enumerate() {
            let rho: f64 = (-1.0f64 / 2000.0).exp();
            let mut rng = stream_rng(8 + i as u64, 0);
            let innovations = normal_vec(&mut rng, 2_000_000);
            let mut theta = vec![0.0f64; innovations.len()];
            for k in 1..theta.len() {
                theta[k] = rho * theta[k - 1] + sigma * (1.0 - rho * rho).sqrt() * innovations[k];
            }
            let beat = pilot_beat(fs, fp, theta.len(), |k| theta[k]);
            let prof = pilot_phase_profile(&beat, fp, fs, 2e6).unwrap();
            let s = std_dev(&prof);
            assert!(
                (s - sigma).abs() / sigma < 0.05,
                "recovered jitter {s}, injected {sigma}"
            );
            let fit = phase_histogram_fit(&prof, None).unwrap().fit_sigma;
            assert!(
                (fit - sigma).abs() / sigma < 0.05,
                "histogram fit {fit}, injected {sigma}"
            );
        }
    }

    #[test]
    fn pilot_profile_unwraps_a_ramp() {
        let (fs, fp) = (200e6, 40e6);
        let df = 2e3; // pilot offset by 2 kHz: phase ramps through many turns
        let beat = pilot_beat(fs, fp, 400_000, |k| 2.0 * PI * df * k as f64 / fs);
        let prof = pilot_phase_profile(&beat, fp, fs, 1e6).unwrap();
        for w in prof.windows(2) {
            assert!(
                (w[1] - w[0]).abs() < 0.1,
                "discontinuity {} in unwrapped ramp",
                w[1] - w[0]
            );
        }
        let slope = crate::stats::linear_slope(&prof, 1.0 / fs);
        assert!((slope - 2.0 * PI * df).abs() / (2.0 * PI * df) < 0.01);
    }

    #[test]
    fn histogram_fit_degenerate_and_gaussian() {
        let constant = vec![0.25; 500];
        let h = phase_histogram_fit(&constant, None).unwrap();
        assert_eq!(h.fit_sigma, 0.0);
        assert!(h.goodness.is_none());
        assert_eq!(h.counts.iter().sum::<u64>(), 500);

        let mut rng = stream_rng(16, 0);
        let sigma = 0.039;
        let sample: Vec<f64> = normal_vec(&mut rng, 1_000_000)
            .into_iter()
            .map(|x| x * sigma)
            .collect();
        let h = phase_histogram_fit(&sample, None).unwrap();
        assert!(
            (h.fit_sigma - sigma).abs() / sigma < 0.01,
            "fit sigma {} vs {}",
            h.fit_sigma,
            sigma
        );
        assert_eq!(h.counts.iter().sum::<u64>(), 1_000_000);
        let gof = h.goodness.expect("gof defined");
        assert!(
            gof.p_value > 0.01,
            "Gaussian data rejected: chi2 {} dof {} p {}",
            gof.chi2,
            gof.dof,
            gof.p_value
        );
    }

    #[test]
    fn histogram_gof_rejects_uniform_input() {
        let n = 100_000;
        let sample: Vec<f64> = (0..n)
            .map(|k| -PI + 2.0 * PI * (k as f64 + 0.5) / n as f64)
            .collect();
        let h = phase_histogram_fit(&sample, Some(64)).unwrap();
        let gof = h.goodness.expect("gof defined");
        assert!(
            gof.p_value < 0.01,
            "uniform input not rejected: p {}",
            gof.p_value
        );
    }

    #[test]
    fn histogram_needs_enough_samples() {
        assert!(phase_histogram_fit(&[0.0; 50], None).is_err());
    }

    #[test]
    fn csv_exports_have_headers_and_rows() {
        let psd = PsdEstimate {
            freqs: vec![0.0, 1.0],
            power: vec![1.0, 0.5],
            resolution_bandwidth: 1.0,
        };
        let csv = psd.to_csv();
        assert!(csv.starts_with("freq_hz,power_rel_linear,power_rel_db\n"));
        assert_eq!(csv.lines().count(), 3);

        let h = phase_histogram_fit(&vec![0.25; 500], None).unwrap();
        let csv = h.to_csv();
        assert!(csv.starts_with("bin_center_rad,count\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
