//! Seeded stand-ins for clinical recordings.
//!
//! ECG: Gaussian-derivative QRS complexes at a baseline RR interval, with a
//! centred deceleration for the event classes. Respiration: raised-cosine
//! breaths with a centred breathing pause for the event classes. Each
//! generated segment is run through the same detection and labeling as
//! imported data, and regenerated from the next sub-seed if the label does
//! not come back as requested.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    bandpass, detect_peaks, normalize, LabeledSegment, Modality, Severity, Source, Waveform,
};
use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const MAX_ATTEMPTS: u32 = 10;

const NOISE_SD: f64 = 0.05;
/// Width of the QRS template (s).
const QRS_SIGMA: f64 = 0.012;
/// Keep generated events this far from the window edges (s).
const ECG_EDGE: f64 = 0.2;

/// Band-pass (ECG only), normalize, detect and label a raw trace.
pub fn prepare(modality: Modality, raw: &Waveform) -> Result<(Waveform, Vec<f64>, Severity)> {
    let clean = match modality {
        Modality::Ecg => normalize(&bandpass(raw, 3.0, 45.0)?),
        Modality::Respiration => normalize(raw),
    };
    let times = detect_peaks(&clean, modality)?;
    let label = modality.label(&times)?;
    Ok((clean, times, label))
}

/// Intervals walking outward from an event, each slightly jittered.
fn outward_intervals(rng: &mut ChaCha8Rng, ramp: &[f64], base: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| {
            let nominal = ramp.get(i).copied().unwrap_or(base);
            nominal * rng.random_range(0.98..1.02)
        })
        .collect()
}

fn ecg_beat_times(class: Severity, rng: &mut ChaCha8Rng, duration: f64) -> Vec<f64> {
    let base = rng.random_range(0.45..0.55);
    let centre = duration / 2.0;
    let (first_left, first_right, ramp) = match class {
        Severity::Normal => {
            let t = centre + rng.random_range(-base / 2.0..base / 2.0);
            (t, t, Vec::new())
        }
        Severity::Mild | Severity::ModerateSevere => {
            let rate = if class == Severity::Mild {
                100.0 - rng.random_range(0.0..20.0)
            } else {
                rng.random_range(40.0..=80.0)
            };
            let long = 60.0 / rate;
            let step = (long - base) / 3.0;
            // nearest-to-event first; capped so the event stays the slowest beat
            let ramp = vec![
                (base + 2.0 * step).min(0.97 * long),
                (base + step).min(0.97 * long),
            ];
            (centre - long / 2.0, centre + long / 2.0, ramp)
        }
    };
    let n = (duration / 0.4) as usize;
    let mut times = vec![first_left];
    if first_right != first_left {
        times.push(first_right);
    }
    let mut t = first_right;
    for rr in outward_intervals(rng, &ramp, base, n) {
        t += rr;
        times.push(t);
    }
    let mut t = first_left;
    for rr in outward_intervals(rng, &ramp, base, n) {
        t -= rr;
        times.push(t);
    }
    times.retain(|&t| (ECG_EDGE..=duration - ECG_EDGE).contains(&t));
    times.sort_by(f64::total_cmp);
    times
}

fn synth_ecg(class: Severity, rng: &mut ChaCha8Rng, fs: f64) -> Result<(Waveform, Vec<f64>)> {
    let duration = Modality::Ecg.segment_seconds();
    let n = (duration * fs).round() as usize;
    let beats = ecg_beat_times(class, rng, duration);
    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let mut x: Vec<f64> = (0..n).map(|_| noise.sample(rng)).collect();
    let peak_norm = 0.5f64.exp();
    let reach = (5.0 * QRS_SIGMA * fs).ceil() as isize;
    for &b in &beats {
        let c = (b * fs).round() as isize;
        for i in (c - reach).max(0)..(c + reach + 1).min(n as isize) {
            let u = -(i as f64 / fs - b) / QRS_SIGMA;
            x[i as usize] += peak_norm * u * (-0.5 * u * u).exp();
        }
    }
    Ok((Waveform::new(x, fs)?, beats))
}

fn breath_peak_times(class: Severity, rng: &mut ChaCha8Rng, duration: f64) -> Vec<(f64, f64, f64)> {
    let period = rng.random_range(1.0..3.0);
    let draw = |rng: &mut ChaCha8Rng| {
        (
            period * rng.random_range(0.95..1.05),
            rng.random_range(0.9..1.1),
        )
    };
    let centre = duration / 2.0;
    let first = draw(rng);
    let second = draw(rng);
    let (left, right) = match class {
        Severity::Normal => {
            let t = centre + rng.random_range(0.0..period);
            (
                (t, first.0, first.1),
                (t + (first.0 + second.0) / 2.0, second.0, second.1),
            )
        }
        Severity::Mild | Severity::ModerateSevere => {
            let gap = if class == Severity::Mild {
                rng.random_range(4.0..=6.0)
            } else {
                rng.random_range(6.5..=12.0)
            };
            (
                (centre - gap / 2.0, first.0, first.1),
                (centre + gap / 2.0, second.0, second.1),
            )
        }
    };
    let mut peaks = vec![left, right];
    let mut cur = right;
    while cur.0 < duration {
        let (p, a) = draw(rng);
        cur = (cur.0 + (cur.1 + p) / 2.0, p, a);
        peaks.push(cur);
    }
    let mut cur = left;
    while cur.0 > 0.0 {
        let (p, a) = draw(rng);
        cur = (cur.0 - (cur.1 + p) / 2.0, p, a);
        peaks.push(cur);
    }
    peaks.retain(|&(t, p, _)| t - p / 2.0 >= 0.0 && t + p / 2.0 <= duration);
    peaks.sort_by(|a, b| a.0.total_cmp(&b.0));
    peaks
}

fn synth_resp(class: Severity, rng: &mut ChaCha8Rng, fs: f64) -> Result<(Waveform, Vec<f64>)> {
    let duration = Modality::Respiration.segment_seconds();
    let n = (duration * fs).round() as usize;
    let peaks = breath_peak_times(class, rng, duration);
    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let mut x: Vec<f64> = (0..n).map(|_| noise.sample(rng)).collect();
    for &(t, period, amp) in &peaks {
        let start = t - period / 2.0;
        let i0 = (start * fs).ceil().max(0.0) as usize;
        let i1 = (((start + period) * fs).floor() as usize).min(n - 1);
        for (i, v) in x.iter_mut().enumerate().take(i1 + 1).skip(i0) {
            let phase = (i as f64 / fs - start) / period;
            *v += amp * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * phase).cos());
        }
    }
    Ok((Waveform::new(x, fs)?, peaks.iter().map(|p| p.0).collect()))
}

/// Draws one raw trace of a class plus the event times it placed.
type Synth = fn(Severity, &mut ChaCha8Rng, f64) -> Result<(Waveform, Vec<f64>)>;

fn generate_with(
    modality: Modality,
    class: Severity,
    seed: u64,
    fs: f64,
    synth: Synth,
) -> Result<LabeledSegment> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(seed, attempt as u64);
        let (raw, truth) = synth(class, &mut rng, fs)?;
        match prepare(modality, &raw) {
            Ok((clean, times, label)) if label == class => {
                return Ok(LabeledSegment {
                    modality,
                    waveform: clean,
                    label,
                    event_times: times,
                    source: Source::Synthetic {
                        seed,
                        attempts: attempt + 1,
                        truth_times: truth,
                    },
                });
            }
            Ok((_, _, label)) => last = Some(format!("labeled {label}")),
            Err(e) => last = Some(e.to_string()),
        }
    }
    Err(Error::validation(format!(
        "{modality} {class} segment with seed {seed} did not round-trip in {MAX_ATTEMPTS} attempts ({})",
        last.unwrap_or_default()
    )))
}

/// 15 s ECG segment of the requested class.
pub fn gen_ecg(class: Severity, seed: u64, fs: f64) -> Result<LabeledSegment> {
    generate_with(Modality::Ecg, class, seed, fs, synth_ecg)
}

/// 60 s respiration segment of the requested class.
pub fn gen_resp(class: Severity, seed: u64, fs: f64) -> Result<LabeledSegment> {
    generate_with(Modality::Respiration, class, seed, fs, synth_resp)
}

pub fn generate(modality: Modality, class: Severity, seed: u64) -> Result<LabeledSegment> {
    match modality {
        Modality::Ecg => gen_ecg(class, seed, modality.default_fs()),
        Modality::Respiration => gen_resp(class, seed, modality.default_fs()),
    }
}
