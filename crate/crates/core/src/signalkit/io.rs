use std::fs;
use std::io::Write;
use std::path::Path;

use super::{median, ImageExample, Waveform};
use crate::error::{Error, Result};

/// Allowed deviation of any sampling interval from the median interval.
const DT_TOLERANCE: f64 = 0.01;

/// Reads a `time,value` CSV. A non-numeric first line is taken as a header;
/// blank lines separate recordings.
pub fn import_csv(path: &Path) -> Result<Vec<Waveform>> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, &path.display().to_string())
}

pub fn parse_csv(text: &str, path: &str) -> Result<Vec<Waveform>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut groups: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new()];
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            if !groups.last().is_some_and(Vec::is_empty) {
                groups.push(Vec::new());
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(err(
                line_no,
                format!("expected 2 columns, found {}", fields.len()),
            ));
        }
        let parsed = (fields[0].parse::<f64>(), fields[1].parse::<f64>());
        match parsed {
            (Ok(t), Ok(v)) if t.is_finite() && v.is_finite() => {
                groups.last_mut().expect("non-empty").push((line_no, t, v))
            }
            (Ok(_), Ok(_)) => return Err(err(line_no, "non-finite value".into())),
            _ if i == 0 => continue,
            _ => return Err(err(line_no, format!("non-numeric row {line:?}"))),
        }
    }
    groups.retain(|g| !g.is_empty());
    if groups.is_empty() {
        return Err(err(0, "no samples".into()));
    }
    groups
        .into_iter()
        .map(|g| {
            if g.len() < 2 {
                return Err(err(g[0].0, "a recording needs at least two samples".into()));
            }
            let mut dts = Vec::with_capacity(g.len() - 1);
            for w in g.windows(2) {
                let dt = w[1].1 - w[0].1;
                if dt <= 0.0 {
                    return Err(err(
                        w[1].0,
                        format!("time not increasing ({} after {})", w[1].1, w[0].1),
                    ));
                }
                dts.push(dt);
            }
            let med = median(&mut dts.clone());
            for (w, dt) in g.windows(2).zip(&dts) {
                if (dt - med).abs() > DT_TOLERANCE * med {
                    return Err(err(
                        w[1].0,
                        format!("irregular sampling: interval {dt} vs median {med}"),
                    ));
                }
            }
            Waveform::new(g.iter().map(|s| s.2).collect(), 1.0 / med)
        })
        .collect()
}

/// Binary greyscale PGM, maxval 255.
pub fn write_pgm(path: &Path, img: &ImageExample) -> Result<()> {
    let mut out = Vec::with_capacity(img.pixels.len() + 20);
    write!(out, "P5\n{} {}\n255\n", img.w, img.h)?;
    out.extend(
        img.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<ImageExample> {
    let bytes = fs::read(path)?;
    let err = |msg: &str| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: msg.to_string(),
    };
    // header: magic, width, height, maxval, each separated by whitespace
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(err("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 || w == 0 || h == 0 {
        return Err(err("unsupported PGM dimensions or maxval"));
    }
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != w * h {
        return Err(err("pixel data length does not match header"));
    }
    Ok(ImageExample {
        h,
        w,
        pixels: data.iter().map(|&b| b as f64 / maxval as f64).collect(),
        label: None,
    })
}
