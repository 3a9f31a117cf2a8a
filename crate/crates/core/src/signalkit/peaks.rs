use super::{median, morlet_cwt, Modality, Waveform};
use crate::error::{Error, Result};

/// Pseudo-frequency band whose wavelet magnitudes are summed for QRS detection.
pub const ECG_BAND_HZ: [f64; 7] = [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0];

/// Standard deviation (s) of the Gaussian smoother applied to respiration
/// before the peak search.
pub const RESP_SMOOTHING_S: f64 = 0.15;

fn gaussian_smooth(x: &[f64], sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (j, k) in kernel.iter().enumerate() {
                let idx = i + j as isize - half;
                if idx >= 0 && idx < n {
                    acc += k * x[idx as usize];
                    wsum += k;
                }
            }
            acc / wsum
        })
        .collect()
}

/// Strict-left local maxima above `threshold`, thinned so that no two kept
/// peaks are closer than `min_gap` samples (largest first, ties to the
/// earlier sample).
fn pick_peaks(env: &[f64], threshold: f64, min_gap: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (1..env.len().saturating_sub(1))
        .filter(|&i| env[i] > threshold && env[i] > env[i - 1] && env[i] >= env[i + 1])
        .collect();
    cand.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cand {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Event times in seconds, ascending.
///
/// ECG (expects a band-passed trace): wavelet magnitudes summed over
/// [`ECG_BAND_HZ`], peaks above `median + 3·MAD`, 200 ms refractory.
/// Respiration: the smoothed trace, peaks above `mean + 0.5·std`, 500 ms
/// refractory.
pub fn detect_peaks(w: &Waveform, modality: Modality) -> Result<Vec<f64>> {
    let (env, threshold) = match modality {
        Modality::Ecg => {
            let mean = w.samples().iter().sum::<f64>() / w.len() as f64;
            let centred = w.with_samples(w.samples().iter().map(|v| v - mean).collect());
            let rows = morlet_cwt(&centred, &ECG_BAND_HZ)?;
            let mut env = vec![0.0; w.len()];
            for row in &rows {
                for (e, v) in env.iter_mut().zip(row) {
                    *e += v;
                }
            }
            let mut sorted = env.clone();
            let med = median(&mut sorted);
            let mut dev: Vec<f64> = env.iter().map(|v| (v - med).abs()).collect();
            let mad = median(&mut dev);
            (env, med + 3.0 * mad)
        }
        Modality::Respiration => {
            let env = gaussian_smooth(w.samples(), RESP_SMOOTHING_S * w.fs());
            let n = env.len() as f64;
            let mean = env.iter().sum::<f64>() / n;
            let sd = (env.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            (env, mean + 0.5 * sd)
        }
    };
    let (lo, hi) = env
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi - lo <= 1e-9 * hi.abs().max(1.0) {
        return Err(Error::Flagged(format!("flat {modality} trace")));
    }
    let gap = (modality.refractory() * w.fs()).round() as usize;
    let times: Vec<f64> = pick_peaks(&env, threshold, gap)
        .into_iter()
        .map(|i| i as f64 / w.fs())
        .collect();
    if times.len() < 2 {
        return Err(Error::Flagged(format!(
            "{} {} events detected",
            times.len(),
            modality
        )));
    }
    Ok(times)
}
