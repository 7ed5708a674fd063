//! Linear-phase FIR design and application.
//!
//! Shaping filters are designed by frequency sampling: the target magnitude
//! response is sampled on a dense grid, inverse-transformed to a symmetric
//! impulse response, and truncated with a Hann window. Filtering is a plain
//! inner product per output sample in "valid" mode, so the output carries no
//! warm-up transient; callers pad the input by `taps - 1` samples instead.

use rustfft::{num_complex::Complex, FftPlanner};

/// Symmetric Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * x).cos()
        })
        .collect()
}

/// Design a linear-phase FIR whose magnitude response approximates
/// `magnitude(f)` over [0, sample_rate/2]. `taps` must be odd.
pub fn design_magnitude_fir<F>(magnitude: F, taps: usize, sample_rate: f64) -> Vec<f64>
where
    F: Fn(f64) -> f64,
{
    assert!(taps >= 3 && taps % 2 == 1, "taps must be odd and >= 3");
    let m = (8 * taps).next_power_of_two().max(4096);
    let half = m / 2;

    // Hermitian-symmetric magnitude samples -> real, even impulse response.
    let mut spec = vec![Complex::new(0.0, 0.0); m];
    for k in 0..=half {
        let f = k as f64 * sample_rate / m as f64;
        let g = magnitude(f);
        spec[k] = Complex::new(g, 0.0);
        if k > 0 && k < half {
            spec[m - k] = Complex::new(g, 0.0);
        }
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut spec);

    // Centre the response and apply the window. spec[(i - c) mod m].re is
    // even around i = c, so the result is exactly symmetric.
    let c = (taps - 1) / 2;
    let w = hann(taps);
    (0..taps)
        .map(|i| {
            let idx = (i + m - c) % m;
            spec[idx].re / m as f64 * w[i]
        })
        .collect()
}

/// Apply `taps` to `x` in valid mode: output length `x.len() - taps.len() + 1`.
///
/// The kernels designed here are symmetric, so the inner-product orientation
/// is immaterial.
pub fn filter(x: &[f64], taps: &[f64]) -> Vec<f64> {
    assert!(x.len() >= taps.len(), "input shorter than filter");
    let n_out = x.len() - taps.len() + 1;
    let mut y = vec![0.0; n_out];
    filter_into(x, taps, &mut y, 0);
    y
}

/// Parallel variant of [`filter`]. Output samples are independent, so the
/// work splits over fixed-size chunks; results are bit-identical to the
/// sequential path for any thread count.
#[cfg(feature = "parallel")]
pub fn filter_par(x: &[f64], taps: &[f64]) -> Vec<f64> {
    use rayon::prelude::*;
    assert!(x.len() >= taps.len(), "input shorter than filter");
    let n_out = x.len() - taps.len() + 1;
    let mut y = vec![0.0; n_out];
    const CHUNK: usize = 1 << 15;
    y.par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(ci, out)| filter_into(x, taps, out, ci * CHUNK));
    y
}

/// Dispatch to the parallel path when it is compiled in and the input is
/// large enough to amortize the fork.
pub(crate) fn filter_auto(x: &[f64], taps: &[f64]) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        if x.len() >= (1 << 16) {
            return filter_par(x, taps);
        }
    }
    filter(x, taps)
}

fn filter_into(x: &[f64], taps: &[f64], out: &mut [f64], offset: usize) {
    let l = taps.len();
    for (i, o) in out.iter_mut().enumerate() {
        let base = offset + i;
        let mut acc = 0.0;
        for (j, &h) in taps.iter().enumerate() {
            acc += h * x[base + l - 1 - j];
        }
        *o = acc;
    }
}
