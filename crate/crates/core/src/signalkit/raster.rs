use super::{Severity, Waveform};

pub const DEFAULT_H: usize = 32;
pub const DEFAULT_W: usize = 64;

/// Amplitude (in standard deviations) mapped to the top row.
const CLIP: f64 = 3.0;

/// A rendered segment, row-major `h×w`, pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageExample {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f64>,
    pub label: Option<Severity>,
}

impl ImageExample {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.w + col]
    }

    /// The image flipped upside down.
    pub fn flipped(&self) -> ImageExample {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for r in (0..self.h).rev() {
            pixels.extend_from_slice(&self.pixels[r * self.w..(r + 1) * self.w]);
        }
        ImageExample {
            pixels,
            ..self.clone()
        }
    }
}

/// Row of amplitude `v`: `+3` is row 0, `−3` the last row, `0` row `h/2`.
pub fn value_row(v: f64, h: usize) -> usize {
    let v = v.clamp(-CLIP, CLIP);
    (((CLIP - v) / (2.0 * CLIP) * h as f64).floor() as usize).min(h - 1)
}

/// Draws a normalized waveform the way a monitor strip shows it.
///
/// Samples are split into `w` equal time bins. Each column lights the
/// vertical span from the lowest to the highest sample in its bin, extended
/// to the first sample of the next bin so that consecutive strokes join.
pub fn rasterize(wave: &Waveform, h: usize, w: usize) -> ImageExample {
    let x = wave.samples();
    let n = x.len();
    let mut pixels = vec![0.0; h * w];
    for col in 0..w {
        let start = col * n / w;
        let end = ((col + 1) * n / w).max(start + 1).min(n);
        let stop = (end + 1).min(n);
        let (mut top, mut bottom) = (h - 1, 0);
        for &v in &x[start..stop] {
            let r = value_row(v, h);
            top = top.min(r);
            bottom = bottom.max(r);
        }
        for r in top..=bottom {
            pixels[r * w + col] = 1.0;
        }
    }
    ImageExample {
        h,
        w,
        pixels,
        label: None,
    }
}
