use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    generate, prepare, rasterize, read_pgm, write_pgm, ImageExample, LabeledSegment, Modality,
    Severity, Source, Waveform, DEFAULT_H, DEFAULT_W,
};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::rng::mix;

const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "id,modality,class,seed,flagged";

/// What to synthesize: segments per class (normal, mild, moderate_severe).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub modality: Modality,
    pub counts: [usize; 3],
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            modality: Modality::Ecg,
            counts: [200, 200, 200],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub modality: Modality,
    pub class: Option<Severity>,
    pub seed: Option<u64>,
    pub flagged: bool,
}

/// Rasterized examples ready for training. Flagged segments stay in the
/// manifest but carry no image.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub modality: Modality,
    pub h: usize,
    pub w: usize,
    /// `n×(h·w)`, one image per row.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub manifest: Vec<ManifestRow>,
}

fn segment_id(modality: Modality, i: usize) -> String {
    format!("{modality}_{i:05}")
}

/// Generates the segments of `spec`. Segment `i` (counting across classes in
/// order) uses sub-seed `mix(spec.seed, i)`. Returns warnings for classes
/// with a zero count.
pub fn build_dataset(spec: &DatasetSpec) -> Result<(Dataset, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut segments = Vec::new();
    let mut i = 0;
    for class in Severity::ALL {
        let count = spec.counts[class.index()];
        if count == 0 {
            warnings.push(format!("class {class} has no segments and will be absent"));
        }
        for _ in 0..count {
            let seed = mix(spec.seed, i as u64);
            segments.push((
                segment_id(spec.modality, i),
                Ok(generate(spec.modality, class, seed)?),
            ));
            i += 1;
        }
    }
    if segments.is_empty() {
        return Err(Error::validation("dataset spec requests no segments"));
    }
    Ok((
        Dataset::from_segments(spec.modality, segments, DEFAULT_H, DEFAULT_W)?,
        warnings,
    ))
}

/// Cuts imported recordings into consecutive windows of the modality's
/// segment length and labels each window. Windows that cannot be labeled
/// come back flagged (`Err`) instead of failing the whole import.
pub fn segment_recordings(
    modality: Modality,
    recordings: &[Waveform],
) -> Vec<std::result::Result<LabeledSegment, String>> {
    let mut out = Vec::new();
    for rec in recordings {
        let len = (modality.segment_seconds() * rec.fs()).round() as usize;
        for chunk in rec.samples().chunks_exact(len.max(2)) {
            let window = rec.with_samples(chunk.to_vec());
            out.push(match prepare(modality, &window) {
                Ok((waveform, event_times, label)) => Ok(LabeledSegment {
                    modality,
                    waveform,
                    label,
                    event_times,
                    source: Source::Imported,
                }),
                Err(e) => Err(e.to_string()),
            });
        }
    }
    out
}

impl Dataset {
    /// `segments` pairs an id with either a labeled segment or the reason it
    /// was flagged.
    pub fn from_segments(
        modality: Modality,
        segments: Vec<(String, std::result::Result<LabeledSegment, String>)>,
        h: usize,
        w: usize,
    ) -> Result<Dataset> {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        let mut manifest = Vec::new();
        for (id, seg) in segments {
            match seg {
                Ok(seg) => {
                    if seg.modality != modality {
                        return Err(Error::validation(format!(
                            "segment {id} is {} in a {modality} dataset",
                            seg.modality
                        )));
                    }
                    pixels.extend(rasterize(&seg.waveform, h, w).pixels);
                    labels.push(seg.label.index());
                    let seed = match seg.source {
                        Source::Synthetic { seed, .. } => Some(seed),
                        Source::Imported => None,
                    };
                    manifest.push(ManifestRow {
                        id: id.clone(),
                        modality,
                        class: Some(seg.label),
                        seed,
                        flagged: false,
                    });
                    ids.push(id);
                }
                Err(_) => manifest.push(ManifestRow {
                    id,
                    modality,
                    class: None,
                    seed: None,
                    flagged: true,
                }),
            }
        }
        if labels.is_empty() {
            return Err(Error::validation("dataset has no usable segments"));
        }
        Ok(Dataset {
            modality,
            h,
            w,
            images: Tensor::matrix(labels.len(), h * w, pixels)?,
            labels,
            ids,
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn image(&self, i: usize) -> ImageExample {
        ImageExample {
            h: self.h,
            w: self.w,
            pixels: self.images.row(i).to_vec(),
            label: Severity::from_index(self.labels[i]).ok(),
        }
    }

    /// Examples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let images = self.images.select_rows(idx)?;
        let keep: Vec<&String> = idx.iter().map(|&i| &self.ids[i]).collect();
        Ok(Dataset {
            modality: self.modality,
            h: self.h,
            w: self.w,
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: keep.iter().map(|s| s.to_string()).collect(),
            manifest: self
                .manifest
                .iter()
                .filter(|r| keep.contains(&&r.id))
                .cloned()
                .collect(),
        })
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    fn manifest_csv(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for r in &self.manifest {
            let class = r.class.map(|c| c.name()).unwrap_or("");
            let seed = r.seed.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.id, r.modality, class, seed, r.flagged
            );
        }
        s
    }

    /// Writes `<id>.pgm` per usable segment plus `manifest.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for i in 0..self.len() {
            write_pgm(&dir.join(format!("{}.pgm", self.ids[i])), &self.image(i))?;
        }
        fs::write(dir.join(MANIFEST), self.manifest_csv())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)?;
        let err = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => return Err(err(1, format!("expected header {MANIFEST_HEADER:?}"))),
        }
        let mut modality = None;
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err(i + 1, format!("expected 5 fields, found {}", f.len())));
            }
            let m: Modality = f[1].parse().map_err(|e: Error| err(i + 1, e.to_string()))?;
            if modality.is_some_and(|x| x != m) {
                return Err(err(i + 1, "mixed modalities".into()));
            }
            modality = Some(m);
            let flagged: bool = f[4]
                .parse()
                .map_err(|_| err(i + 1, format!("bad flag {:?}", f[4])))?;
            let class = match f[2] {
                "" if flagged => None,
                c => Some(
                    c.parse::<Severity>()
                        .map_err(|e| err(i + 1, e.to_string()))?,
                ),
            };
            let seed = match f[3] {
                "" => None,
                s => Some(
                    s.parse()
                        .map_err(|_| err(i + 1, format!("bad seed {s:?}")))?,
                ),
            };
            rows.push(ManifestRow {
                id: f[0].to_string(),
                modality: m,
                class,
                seed,
                flagged,
            });
        }
        let modality = modality.ok_or_else(|| err(1, "empty manifest".into()))?;
        let mut pixels = Vec::new();
        let (mut labels, mut ids) = (Vec::new(), Vec::new());
        let mut shape = None;
        for r in rows.iter().filter(|r| !r.flagged) {
            let img = read_pgm(&dir.join(format!("{}.pgm", r.id)))?;
            if shape.is_some_and(|s| s != (img.h, img.w)) {
                return Err(Error::validation(format!(
                    "image {} has a different size",
                    r.id
                )));
            }
            shape = Some((img.h, img.w));
            pixels.extend(img.pixels);
            labels.push(r.class.expect("unflagged rows have a class").index());
            ids.push(r.id.clone());
        }
        let (h, w) = shape.ok_or_else(|| Error::validation("dataset has no usable segments"))?;
        Ok(Dataset {
            modality,
            h,
            w,
            images: Tensor::matrix(labels.len(), h * w, pixels)?,
            labels,
            ids,
            manifest: rows,
        })
    }

    /// SHA-256 over the manifest and the image bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.manifest_csv().as_bytes());
        for v in self.images.data() {
            hasher.update([(v.clamp(0.0, 1.0) * 255.0).round() as u8]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(counts: [usize; 3]) -> DatasetSpec {
        DatasetSpec {
            modality: Modality::Respiration,
            counts,
            seed: 5,
        }
    }

    #[test]
    fn build_save_load_round_trip() {
        let (ds, warnings) = build_dataset(&spec([2, 2, 1])).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.labels, vec![0, 0, 1, 1, 2]);
        assert_eq!(ds.images.shape(), &[5, DEFAULT_H * DEFAULT_W]);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.images, ds.images);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.content_hash(), ds.content_hash());
    }

    #[test]
    fn zero_count_class_warns() {
        let (ds, warnings) = build_dataset(&spec([1, 0, 1])).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(ds.class_counts(), [1, 0, 1]);
    }

    #[test]
    fn flagged_rows_kept_in_manifest_only() {
        let seg = generate(Modality::Ecg, Severity::Normal, 1).unwrap();
        let items: Vec<(String, std::result::Result<LabeledSegment, String>)> =
            vec![("a".into(), Ok(seg)), ("b".into(), Err("flat".into()))];
        let ds = Dataset::from_segments(Modality::Ecg, items, 32, 64).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.manifest.len(), 2);
        assert!(ds.manifest[1].flagged);
    }

    #[test]
    fn imported_recording_is_windowed() {
        let seg = generate(Modality::Respiration, Severity::Mild, 3).unwrap();
        let mut long = seg.waveform.samples().to_vec();
        long.extend_from_slice(seg.waveform.samples());
        long.extend_from_slice(&[0.0; 100]);
        let rec = Waveform::new(long, 50.0).unwrap();
        let out = segment_recordings(Modality::Respiration, &[rec]);
        assert_eq!(out.len(), 2);
        for s in out {
            assert_eq!(s.unwrap().label, Severity::Mild);
        }
    }
}
