//! Adam training loop, per-epoch metrics, prototype snapshots,
//! checkpointing and the λ_pd sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diversity::{diversity_report, eval_predictions};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::objective::{loss_and_grad, total_loss, LossBreakdown, LossWeights};
use crate::protomodel::{argmax_rows, ModelConfig, PrototypeModel};
use crate::rng::{mix, rng_for};
use crate::signalkit::{write_pgm, Dataset, ImageExample, Modality, Severity};

/// Sub-seed stream indices under a run seed.
const STREAM_MODEL: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

const ADAM_MAGIC: &[u8; 4] = b"PDAD";

pub const METRICS_HEADER: &str =
    "epoch,e,r,r1,r2,pdl,total,train_accuracy,test_accuracy,psi_n,psi_c,recon_mse";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let n: usize = self.m.iter().map(Vec::len).sum();
        let mut buf = Vec::with_capacity(16 + 16 * n + 8 * self.m.len());
        buf.extend_from_slice(ADAM_MAGIC);
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.m.len() as u32).to_le_bytes());
        for (m, v) in self.m.iter().zip(&self.v) {
            buf.extend_from_slice(&(m.len() as u64).to_le_bytes());
            for x in m.iter().chain(v) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let bad =
            || Error::validation(format!("{} is not a valid optimizer state", path.display()));
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        if take(4)? != ADAM_MAGIC {
            return Err(bad());
        }
        let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let (mut ms, mut vs) = (Vec::new(), Vec::new());
        for _ in 0..count {
            let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let mut read = |n: usize| -> Result<Vec<f64>> {
                let raw = take(8 * n)?;
                Ok(raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            ms.push(read(len)?);
            vs.push(read(len)?);
        }
        if pos != bytes.len() {
            return Err(bad());
        }
        Ok(AdamState { step, m: ms, v: vs })
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::validation(format!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {i}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// The reconstruction term sums over pixels, so at unit weight it is a few
/// hundred times the cross-entropy and classification stalls.
pub const DEFAULT_LAMBDA_R: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Defaults to 100 for ECG and 125 for respiration.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub m: usize,
    pub q: usize,
    pub hidden: Vec<usize>,
    pub weights: LossWeights,
    pub lambda_pd_sweep: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Epochs whose decoded prototypes are written; the final epoch is
    /// always included.
    pub snapshot_epochs: Vec<usize>,
    /// Training fraction of the stratified split.
    pub split: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            batch_size: None,
            epochs: 100,
            m: 10,
            q: 64,
            hidden: vec![512, 256, 128],
            weights: LossWeights {
                lambda_r: DEFAULT_LAMBDA_R,
                ..LossWeights::default()
            },
            lambda_pd_sweep: vec![0.0, 500.0, 1000.0, 2000.0],
            seeds: vec![0, 1, 2, 3, 4],
            snapshot_epochs: vec![0, 20, 100],
            split: 0.8,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::config("split must lie strictly between 0 and 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch_size must be positive"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || a.eps.is_nan()
            || a.eps <= 0.0
        {
            return Err(Error::config(
                "adam betas must be in [0, 1) and eps positive",
            ));
        }
        self.weights.validate()
    }

    pub fn batch_size_for(&self, modality: Modality) -> usize {
        self.batch_size.unwrap_or(match modality {
            Modality::Ecg => 100,
            Modality::Respiration => 125,
        })
    }

    pub fn model_config(&self, p: usize, run_seed: u64) -> ModelConfig {
        ModelConfig {
            p,
            q: self.q,
            m: self.m,
            k: Severity::ALL.len(),
            hidden: self.hidden.clone(),
            seed: mix(run_seed, STREAM_MODEL),
        }
    }

    fn snapshots(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .snapshot_epochs
            .iter()
            .copied()
            .filter(|&e| e <= self.epochs)
            .chain([self.epochs])
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Stratified split: each class contributes `round(fraction · count)`
/// examples to the training side. Both index lists are ascending.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_for(seed, STREAM_SPLIT);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_train = (fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Metrics after an epoch; row 0 describes the initial model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Objective on the training set, averaged over its batches, with the
    /// parameters at the end of the epoch.
    pub train: LossBreakdown,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub psi_n: f64,
    pub psi_c: f64,
    /// Mean squared reconstruction error per pixel on the training set.
    pub recon_mse: f64,
}

impl EpochMetrics {
    fn csv_row(&self) -> String {
        let l = &self.train;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            l.e,
            l.r,
            l.r1,
            l.r2,
            l.pdl,
            l.total,
            self.train_accuracy,
            self.test_accuracy,
            self.psi_n,
            self.psi_c,
            self.recon_mse
        )
    }

    fn parse_row(line: &str) -> Option<EpochMetrics> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return None;
        }
        let v: Vec<f64> = f[1..]
            .iter()
            .map(|s| s.parse().ok())
            .collect::<Option<_>>()?;
        Some(EpochMetrics {
            epoch: f[0].parse().ok()?,
            train: LossBreakdown {
                e: v[0],
                r: v[1],
                r1: v[2],
                r2: v[3],
                pdl: v[4],
                total: v[5],
            },
            train_accuracy: v[6],
            test_accuracy: v[7],
            psi_n: v[8],
            psi_c: v[9],
            recon_mse: v[10],
        })
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::validation("metrics.csv has an unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            EpochMetrics::parse_row(l).ok_or_else(|| Error::Parse {
                path: "metrics.csv".into(),
                line: i + 2,
                msg: "malformed metrics row".into(),
            })
        })
        .collect()
}

/// Index of the first row with the highest test accuracy.
pub fn best_epoch(rows: &[EpochMetrics]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, acc)) if r.test_accuracy <= acc => best,
            _ => Some((i, r.test_accuracy)),
        })
        .map(|(i, _)| rows[i].epoch)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub modality: Modality,
    pub train_hash: String,
    pub test_hash: String,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs_completed: usize,
    pub best_epoch: Option<usize>,
    pub aborted: Option<String>,
    pub files: Vec<String>,
    /// Caller-supplied context such as the fully resolved CLI config.
    #[serde(default)]
    pub invocation: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub seed: u64,
    pub lambda_pd: f64,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
    /// Model after the last completed epoch.
    pub model: PrototypeModel,
    pub best_model: PrototypeModel,
    pub files: Vec<PathBuf>,
}

impl RunRecord {
    pub fn best(&self) -> Option<&EpochMetrics> {
        let e = self.best_epoch?;
        self.metrics.iter().find(|r| r.epoch == e)
    }
}

/// Where a run writes its artifacts, plus context recorded in its manifest.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
    pub invocation: serde_json::Value,
}

impl RunOutput {
    pub fn to(dir: impl Into<PathBuf>) -> Self {
        RunOutput {
            dir: Some(dir.into()),
            invocation: serde_json::Value::Null,
        }
    }
}

fn check_datasets(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.pixels() != test.pixels() || train.modality != test.modality {
        return Err(Error::validation(format!(
            "train ({} {}×{}) and test ({} {}×{}) sets do not match",
            train.modality, train.h, train.w, test.modality, test.h, test.w
        )));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::validation("train and test sets must be non-empty"));
    }
    Ok(())
}

fn batches(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

fn epoch_metrics(
    model: &PrototypeModel,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    let bs = cfg.batch_size_for(train.modality);
    let order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::new();
    for b in batches(train.len(), bs) {
        let x = train.images.select_rows(&order[b.clone()])?;
        losses.push(total_loss(model, &x, &train.labels[b], &cfg.weights)?);
    }
    let k = model.config.k;
    let z = model.encode(&train.images)?;
    let train_acc = eval_predictions(
        &argmax_rows(&model.logits_from_latent(&z)?),
        &train.labels,
        k,
    )?;
    let test_acc = eval_predictions(&model.predict(&test.images)?, &test.labels, k)?;
    let div = diversity_report(&model.prototypes, &z, &train.labels, k)?;
    let recon = model.decode(&z)?;
    let recon_mse = recon
        .data()
        .iter()
        .zip(train.images.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / recon.len() as f64;
    Ok(EpochMetrics {
        epoch,
        train: LossBreakdown::mean(&losses),
        train_accuracy: train_acc.accuracy,
        test_accuracy: test_acc.accuracy,
        psi_n: div.psi_n,
        psi_c: div.psi_c,
        recon_mse,
    })
}

fn run_epoch(
    model: &mut PrototypeModel,
    adam: &mut AdamState,
    train: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    epoch: usize,
) -> Result<()> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng_for(mix(seed, STREAM_SHUFFLE), epoch as u64));
    for (bi, b) in batches(train.len(), cfg.batch_size_for(train.modality))
        .into_iter()
        .enumerate()
    {
        let idx = &order[b];
        let x = train.images.select_rows(idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let context = |e: Error| Error::Numeric(format!("epoch {epoch}, batch {bi}: {e}"));
        let (loss, grads) = loss_and_grad(model, &x, &y, &cfg.weights).map_err(|e| {
            if e.is_numeric() {
                context(e)
            } else {
                e
            }
        })?;
        if !loss.total.is_finite() {
            return Err(context(Error::Numeric("loss is not finite".into())));
        }
        adam_step(
            &mut model.params_mut(),
            &grads,
            adam,
            cfg.learning_rate,
            &cfg.adam,
        )
        .map_err(context)?;
        model.check_finite().map_err(context)?;
    }
    Ok(())
}

struct Writer<'a> {
    out: &'a RunOutput,
    train: &'a Dataset,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn path(&mut self, name: &str) -> Option<PathBuf> {
        let p = self.out.dir.as_ref()?.join(name);
        if !self.files.contains(&p) {
            self.files.push(p.clone());
        }
        Some(p)
    }

    fn snapshot(&mut self, model: &PrototypeModel, epoch: usize) -> Result<()> {
        if self.out.dir.is_none() {
            return Ok(());
        }
        let decoded = model.decoded_prototypes()?;
        for j in 0..decoded.rows() {
            let img = ImageExample {
                h: self.train.h,
                w: self.train.w,
                pixels: decoded.row(j).to_vec(),
                label: None,
            };
            let p = self
                .path(&format!("proto_epoch{epoch}_p{j}.pgm"))
                .expect("dir set");
            write_pgm(&p, &img)?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, model: &PrototypeModel) -> Result<()> {
        match self.path(name) {
            Some(p) => model.save(&p),
            None => Ok(()),
        }
    }

    fn resume_point(&mut self, model: &PrototypeModel, adam: &AdamState) -> Result<()> {
        self.checkpoint("last.ckpt", model)?;
        match self.path("last.adam") {
            Some(p) => adam.save(&p),
            None => Ok(()),
        }
    }
}

struct RunState {
    model: PrototypeModel,
    adam: AdamState,
    metrics: Vec<EpochMetrics>,
}

fn drive(
    mut state: RunState,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    out: &RunOutput,
) -> Result<RunRecord> {
    if let Some(dir) = &out.dir {
        fs::create_dir_all(dir)?;
    }
    let mut w = Writer {
        out,
        train,
        files: Vec::new(),
    };
    let snapshots = cfg.snapshots();
    let mut best = best_epoch(&state.metrics);
    let mut best_model = state.model.clone();
    if state.metrics.is_empty() {
        let m0 = epoch_metrics(&state.model, train, test, cfg, 0)?;
        state.metrics.push(m0);
        best = Some(0);
        w.checkpoint("best.ckpt", &state.model)?;
        if snapshots.contains(&0) {
            w.snapshot(&state.model, 0)?;
        }
    } else if let Some(dir) = &out.dir {
        let p = dir.join("best.ckpt");
        if p.exists() {
            best_model = PrototypeModel::load(&p)?;
            w.path("best.ckpt");
        }
    }
    let start = state.metrics.last().map_or(0, |r| r.epoch);
    let mut aborted = None;
    for epoch in start + 1..=cfg.epochs {
        let before = (state.model.clone(), state.adam.clone());
        if let Err(e) = run_epoch(&mut state.model, &mut state.adam, train, cfg, seed, epoch) {
            if !e.is_numeric() {
                return Err(e);
            }
            (state.model, state.adam) = before;
            aborted = Some(match e {
                Error::Numeric(msg) => msg,
                other => other.to_string(),
            });
            break;
        }
        let row = epoch_metrics(&state.model, train, test, cfg, epoch)?;
        let best_acc = best
            .and_then(|b| state.metrics.iter().find(|r| r.epoch == b))
            .map_or(f64::NEG_INFINITY, |r| r.test_accuracy);
        state.metrics.push(row);
        if row.test_accuracy > best_acc {
            best = Some(epoch);
            best_model = state.model.clone();
            w.checkpoint("best.ckpt", &state.model)?;
        }
        if snapshots.contains(&epoch) {
            w.snapshot(&state.model, epoch)?;
            w.resume_point(&state.model, &state.adam)?;
        }
    }
    w.resume_point(&state.model, &state.adam)?;
    if aborted.is_none() {
        w.checkpoint("final.ckpt", &state.model)?;
    }
    let epochs_completed = state.metrics.last().map_or(0, |r| r.epoch);
    if let Some(p) = w.path("metrics.csv") {
        fs::write(p, metrics_csv(&state.metrics))?;
    }
    if let Some(p) = w.path("manifest.json") {
        let files = w
            .files
            .iter()
            .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: cfg.clone(),
            model: state.model.config.clone(),
            modality: train.modality,
            train_hash: train.content_hash(),
            test_hash: test.content_hash(),
            train_size: train.len(),
            test_size: test.len(),
            epochs_completed,
            best_epoch: best,
            aborted: aborted.clone(),
            files,
            invocation: out.invocation.clone(),
        };
        fs::write(p, serde_json::to_string_pretty(&manifest)? + "\n")?;
    }
    Ok(RunRecord {
        seed,
        lambda_pd: cfg.weights.lambda_pd,
        metrics: state.metrics,
        best_epoch: best,
        aborted,
        model: state.model,
        best_model,
        files: w.files,
    })
}

/// Trains a fresh model on `train`, evaluating on `test` after every epoch.
///
/// A numeric failure stops the run; the record then carries the reason and
/// the parameters from before the failing epoch.
pub fn train_split(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    out: &RunOutput,
) -> Result<RunRecord> {
    cfg.validate()?;
    check_datasets(train, test)?;
    let bs = cfg.batch_size_for(train.modality);
    if bs > train.len() {
        return Err(Error::config(format!(
            "batch size {bs} exceeds training set size {}",
            train.len()
        )));
    }
    let model = PrototypeModel::init(cfg.model_config(train.pixels(), seed))?;
    let adam = AdamState::new(&model.params());
    let state = RunState {
        model,
        adam,
        metrics: Vec::new(),
    };
    drive(state, train, test, cfg, seed, out)
}

/// Stratified split of `dataset` followed by [`train_split`].
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    out: &RunOutput,
) -> Result<RunRecord> {
    let (tr, te) = split_dataset(dataset, cfg.split, seed)?;
    train_split(&tr, &te, cfg, seed, out)
}

pub fn split_dataset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (tr, te) = stratified_split(&dataset.labels, fraction, seed);
    if tr.is_empty() || te.is_empty() {
        return Err(Error::validation("dataset too small to split"));
    }
    Ok((dataset.subset(&tr)?, dataset.subset(&te)?))
}

/// Continues a run from the `last.ckpt` / `last.adam` / `metrics.csv` in
/// `out.dir` up to `cfg.epochs`. Rows after the checkpoint's epoch are
/// recomputed.
pub fn resume(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    out: &RunOutput,
) -> Result<RunRecord> {
    cfg.validate()?;
    check_datasets(train, test)?;
    let dir = out
        .dir
        .as_ref()
        .ok_or_else(|| Error::config("resume needs an output directory"))?;
    let model = PrototypeModel::load(&dir.join("last.ckpt"))?;
    let adam = AdamState::load(&dir.join("last.adam"))?;
    let mut metrics = parse_metrics_csv(&fs::read_to_string(dir.join("metrics.csv"))?)?;
    let batches_per_epoch = batches(train.len(), cfg.batch_size_for(train.modality)).len() as u64;
    let done = (adam.step / batches_per_epoch.max(1)) as usize;
    if adam.step % batches_per_epoch.max(1) != 0 || metrics.iter().all(|r| r.epoch != done) {
        return Err(Error::validation(format!(
            "optimizer state ({} steps) does not line up with metrics.csv",
            adam.step
        )));
    }
    metrics.retain(|r| r.epoch <= done);
    if model.config != cfg.model_config(train.pixels(), seed) {
        return Err(Error::validation(
            "checkpoint was trained with a different model config or seed",
        ));
    }
    drive(
        RunState {
            model,
            adam,
            metrics,
        },
        train,
        test,
        cfg,
        seed,
        out,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda_pd: f64,
    pub runs: usize,
    pub completed: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub psi_n_mean: f64,
    pub psi_n_std: f64,
    pub psi_c_mean: f64,
    pub psi_c_std: f64,
}

impl SweepRow {
    pub fn complete(&self) -> bool {
        self.completed == self.runs
    }
}

/// Mean and sample standard deviation (0 for a single value, NaN for none).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates best-epoch accuracy and diversity over runs sharing a λ_pd.
/// Aborted runs count towards `runs` but not `completed`.
pub fn aggregate(lambda_pd: f64, records: &[RunRecord]) -> SweepRow {
    let done: Vec<&EpochMetrics> = records
        .iter()
        .filter(|r| r.aborted.is_none())
        .filter_map(RunRecord::best)
        .collect();
    let col =
        |f: fn(&EpochMetrics) -> f64| mean_std(&done.iter().map(|r| f(r)).collect::<Vec<_>>());
    let (accuracy_mean, accuracy_std) = col(|r| r.test_accuracy);
    let (psi_n_mean, psi_n_std) = col(|r| r.psi_n);
    let (psi_c_mean, psi_c_std) = col(|r| r.psi_c);
    SweepRow {
        lambda_pd,
        runs: records.len(),
        completed: done.len(),
        accuracy_mean,
        accuracy_std,
        psi_n_mean,
        psi_n_std,
        psi_c_mean,
        psi_c_std,
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "lambda_pd,accuracy_mean,accuracy_std,psi_n_mean,psi_n_std,psi_c_mean,psi_c_std,runs,completed,complete\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.lambda_pd,
            r.accuracy_mean,
            r.accuracy_std,
            r.psi_n_mean,
            r.psi_n_std,
            r.psi_c_mean,
            r.psi_c_std,
            r.runs,
            r.completed,
            r.complete()
        );
    }
    s
}

pub fn run_id(lambda_pd: f64, seed: u64) -> String {
    format!("lpd{lambda_pd}_seed{seed}")
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub records: Vec<Vec<RunRecord>>,
}

/// Every (λ_pd, seed) cell of the sweep on a fixed train/test pair. Run
/// artifacts go to `<out>/runs/<id>/` and the table to `<out>/table.csv`.
pub fn sweep(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<SweepResult> {
    if cfg.seeds.len() < 2 {
        return Err(Error::config("a sweep needs at least two seeds"));
    }
    if cfg.lambda_pd_sweep.is_empty() {
        return Err(Error::config("the lambda_pd sweep list is empty"));
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &lambda in &cfg.lambda_pd_sweep {
        let mut c = cfg.clone();
        c.weights.lambda_pd = lambda;
        let mut runs = Vec::new();
        for &seed in &cfg.seeds {
            let dest = match out {
                Some(o) => RunOutput::to(o.join("runs").join(run_id(lambda, seed))),
                None => RunOutput::default(),
            };
            runs.push(train_split(train, test, &c, seed, &dest)?);
        }
        rows.push(aggregate(lambda, &runs));
        records.push(runs);
    }
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join("table.csv"), sweep_csv(&rows))?;
    }
    Ok(SweepResult { rows, records })
}
