use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

/// Half-width in taps at 250 Hz (501 taps); scaled linearly with the
/// sampling rate.
const HALF_TAPS_AT_250: f64 = 250.0;

pub fn bandpass_taps(fs: f64) -> usize {
    let half = ((HALF_TAPS_AT_250 * fs / 250.0).round() as usize).max(1);
    2 * half + 1
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hamming-windowed low-pass with unit DC gain.
fn lowpass(cutoff: f64, fs: f64, taps: usize) -> Vec<f64> {
    let mid = (taps - 1) as f64 / 2.0;
    let fc = cutoff / fs;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (taps - 1) as f64).cos();
            2.0 * fc * sinc(2.0 * fc * (i as f64 - mid)) * w
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Linear-phase band-pass taps: difference of two unit-gain low-passes,
/// so the DC gain is zero.
pub fn fir_design(lo: f64, hi: f64, fs: f64, taps: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::validation(format!(
            "band {lo}..{hi} Hz must satisfy 0 < lo < hi < fs/2 = {}",
            fs / 2.0
        )));
    }
    if taps.is_multiple_of(2) {
        return Err(Error::validation("tap count must be odd"));
    }
    let high = lowpass(hi, fs, taps);
    let low = lowpass(lo, fs, taps);
    Ok(high.iter().zip(&low).map(|(a, b)| a - b).collect())
}

/// Mirror index into `0..n` (edge sample not repeated).
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Zero-phase band-pass: the symmetric FIR is centred on each output
/// sample so there is no group delay. Edges are mirror-padded.
pub fn bandpass(w: &Waveform, lo: f64, hi: f64) -> Result<Waveform> {
    let taps = bandpass_taps(w.fs());
    let h = fir_design(lo, hi, w.fs(), taps)?;
    let x = w.samples();
    let n = x.len();
    let half = (taps / 2) as isize;
    let out = (0..n as isize)
        .map(|i| {
            h.iter()
                .enumerate()
                .map(|(k, c)| c * x[reflect(i + half - k as isize, n)])
                .sum()
        })
        .collect();
    Ok(w.with_samples(out))
}
