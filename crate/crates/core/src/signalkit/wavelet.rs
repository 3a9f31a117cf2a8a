use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

/// Centre frequency of the mother wavelet in rad/s.
pub const MORLET_OMEGA0: f64 = 6.0;

/// Kernel support in units of the scale.
const SUPPORT: f64 = 4.0;

/// Sampled complex Morlet wavelet for pseudo-frequency `freq`, as
/// `(re, im)` pairs centred on the middle tap, scaled to unit energy.
pub fn morlet_kernel(freq: f64, fs: f64) -> Vec<(f64, f64)> {
    let scale = MORLET_OMEGA0 / (2.0 * PI * freq);
    let half = (SUPPORT * scale * fs).ceil() as isize;
    let norm = PI.powf(-0.25);
    let mut k: Vec<(f64, f64)> = (-half..=half)
        .map(|i| {
            let t = i as f64 / fs / scale;
            let env = norm * (-0.5 * t * t).exp();
            (
                env * (MORLET_OMEGA0 * t).cos(),
                env * (MORLET_OMEGA0 * t).sin(),
            )
        })
        .collect();
    let energy: f64 = k.iter().map(|(r, i)| r * r + i * i).sum::<f64>().sqrt();
    k.iter_mut().for_each(|(r, i)| {
        *r /= energy;
        *i /= energy;
    });
    k
}

/// Magnitude of the continuous wavelet transform, one row per frequency,
/// same length as the input (zero padding at the ends).
pub fn morlet_cwt(w: &Waveform, freqs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let nyq = w.fs() / 2.0;
    if let Some(f) = freqs.iter().find(|&&f| !(f > 0.0 && f < nyq)) {
        return Err(Error::validation(format!(
            "frequency {f} Hz outside (0, {nyq})"
        )));
    }
    let x = w.samples();
    let n = x.len() as isize;
    Ok(freqs
        .iter()
        .map(|&f| {
            let k = morlet_kernel(f, w.fs());
            let half = (k.len() / 2) as isize;
            (0..n)
                .map(|b| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, (kr, ki)) in k.iter().enumerate() {
                        let idx = b + j as isize - half;
                        if idx >= 0 && idx < n {
                            let v = x[idx as usize];
                            // correlation with the conjugate wavelet
                            re += v * kr;
                            im -= v * ki;
                        }
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        })
        .collect())
}
