//! Waveform preprocessing, event detection, severity labeling,
//! rasterization and seeded synthetic ECG / respiration segments.

mod dataset;
mod filter;
mod io;
mod peaks;
mod raster;
mod synth;
mod wavelet;

pub use dataset::{build_dataset, segment_recordings, Dataset, DatasetSpec, ManifestRow};
pub use filter::{bandpass, bandpass_taps, fir_design};
pub use io::{import_csv, parse_csv, read_pgm, write_pgm};
pub use peaks::{detect_peaks, ECG_BAND_HZ, RESP_SMOOTHING_S};
pub use raster::{rasterize, value_row, ImageExample, DEFAULT_H, DEFAULT_W};
pub use synth::{gen_ecg, gen_resp, generate, prepare, MAX_ATTEMPTS};
pub use wavelet::{morlet_cwt, morlet_kernel, MORLET_OMEGA0};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled signal with its rate in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    fs: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::validation(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        if samples.len() < 2 {
            return Err(Error::validation("a waveform needs at least two samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "waveform" });
        }
        Ok(Waveform { samples, fs })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Waveform {
        Waveform {
            samples,
            fs: self.fs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ecg,
    Respiration,
}

impl Modality {
    /// Segment length in seconds.
    pub fn segment_seconds(self) -> f64 {
        match self {
            Modality::Ecg => 15.0,
            Modality::Respiration => 60.0,
        }
    }

    pub fn default_fs(self) -> f64 {
        match self {
            Modality::Ecg => 250.0,
            Modality::Respiration => 50.0,
        }
    }

    /// Minimum spacing between detected events, seconds.
    pub fn refractory(self) -> f64 {
        match self {
            Modality::Ecg => 0.2,
            Modality::Respiration => 0.5,
        }
    }

    pub fn label(self, event_times: &[f64]) -> Result<Severity> {
        match self {
            Modality::Ecg => label_bradycardia(event_times),
            Modality::Respiration => label_apnea(event_times),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Ecg => "ecg",
            Modality::Respiration => "respiration",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecg" => Ok(Modality::Ecg),
            "respiration" | "resp" => Ok(Modality::Respiration),
            other => Err(Error::validation(format!("unknown modality {other:?}"))),
        }
    }
}

/// Three-level severity shared by both tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Normal,
    Mild,
    ModerateSevere,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Normal, Severity::Mild, Severity::ModerateSevere];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Severity::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::validation(format!("class index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Severity::Normal => "normal",
            Severity::Mild => "mild",
            Severity::ModerateSevere => "moderate_severe",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Severity::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown class {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Synthetic {
        seed: u64,
        /// Generation attempts used before the label round-tripped.
        attempts: u32,
        /// Event times the generator placed.
        truth_times: Vec<f64>,
    },
    Imported,
}

/// A processed window: the waveform that gets rasterized, its severity and
/// the detected event times.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSegment {
    pub modality: Modality,
    pub waveform: Waveform,
    pub label: Severity,
    pub event_times: Vec<f64>,
    pub source: Source,
}

/// Zero mean, unit (population) variance. Constant input maps to zeros.
pub fn normalize(w: &Waveform) -> Waveform {
    let n = w.len() as f64;
    let mean = w.samples.iter().sum::<f64>() / n;
    let var = w
        .samples
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    if var < 1e-12 {
        return w.with_samples(vec![0.0; w.len()]);
    }
    let sd = var.sqrt();
    w.with_samples(w.samples.iter().map(|v| (v - mean) / sd).collect())
}

/// Divides by the median absolute height at the detected events.
pub fn scale_to_median_peak(w: &Waveform, event_times: &[f64]) -> Result<Waveform> {
    let mut heights: Vec<f64> = event_times
        .iter()
        .map(|&t| {
            let i = ((t * w.fs).round() as usize).min(w.len() - 1);
            w.samples[i].abs()
        })
        .collect();
    if heights.is_empty() {
        return Err(Error::Flagged("no events to scale by".into()));
    }
    let med = median(&mut heights);
    if med <= 0.0 {
        return Err(Error::Flagged("median event height is zero".into()));
    }
    Ok(w.with_samples(w.samples.iter().map(|v| v / med).collect()))
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn intervals(event_times: &[f64]) -> Result<Vec<f64>> {
    if event_times.len() < 2 {
        return Err(Error::Flagged(format!(
            "{} events, need at least 2",
            event_times.len()
        )));
    }
    Ok(event_times.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Severity for a heart rate in beats per minute.
pub fn classify_heart_rate(bpm: f64) -> Severity {
    if bpm > 100.0 {
        Severity::Normal
    } else if bpm > 80.0 {
        Severity::Mild
    } else {
        Severity::ModerateSevere
    }
}

/// Severity for the longest inter-breath interval in seconds.
pub fn classify_breath_gap(ibi: f64) -> Severity {
    if ibi < 4.0 {
        Severity::Normal
    } else if ibi <= 6.0 {
        Severity::Mild
    } else {
        Severity::ModerateSevere
    }
}

/// Slowest instantaneous rate over the segment decides the class.
pub fn label_bradycardia(event_times: &[f64]) -> Result<Severity> {
    let slowest = intervals(event_times)?
        .into_iter()
        .map(|rr| 60.0 / rr)
        .fold(f64::INFINITY, f64::min);
    Ok(classify_heart_rate(slowest))
}

/// Longest inter-breath interval decides the class.
pub fn label_apnea(event_times: &[f64]) -> Result<Severity> {
    let longest = intervals(event_times)?.into_iter().fold(0.0, f64::max);
    Ok(classify_breath_gap(longest))
}
