//! `protodiv` command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diversity::evaluate;
use crate::error::{Error, Result};
use crate::latentmap::{analyze, TsneConfig};
use crate::protomodel::PrototypeModel;
use crate::signalkit::{
    build_dataset, import_csv, segment_recordings, Dataset, DatasetSpec, DEFAULT_H, DEFAULT_W,
};
use crate::trainer::{resume, split_dataset, sweep, train_split, RunOutput, TrainConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything a command needs, read from `--config` and then overridden by
/// flags. The resolved value is written into every manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub latent: TsneConfig,
    /// Run seed for train, eval and export-latent.
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "protodiv",
    version,
    about = "Prototype classification of rasterized ECG and respiration segments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config; missing keys take their defaults, unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset seed for `gen`; run seed otherwise. For `sweep` the seed list
    /// becomes `seed, seed+1, ...` of the configured length.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write into an existing non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Diversity weight; for `sweep` this replaces the sweep list.
    #[arg(long = "lambda-pd", global = true)]
    pub lambda_pd: Option<f64>,
    /// Prototype count.
    #[arg(long, global = true)]
    pub prototypes: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize (or import) segments and write PGM images plus manifest.csv.
    Gen {
        /// `time,value` CSV recordings to segment instead of synthesizing.
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Continue the run already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train every (lambda_pd, seed) pair and write table.csv.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Accuracy and diversity of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Joint t-SNE of encoded data and prototypes, written to embedding.csv.
    ExportLatent {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; synthesized from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory; synthesized from the config when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Separate test set. Without it the data is split by `train.split`.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

/// Config file plus flag overrides.
pub fn resolve(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let c = &cli.common;
    if let Some(seed) = c.seed {
        match cli.command {
            Command::Gen { .. } => cfg.dataset.seed = seed,
            Command::Sweep { .. } => {
                let n = cfg.train.seeds.len() as u64;
                cfg.train.seeds = (seed..seed + n).collect();
            }
            _ => cfg.seed = seed,
        }
    }
    if let Some(l) = c.lambda_pd {
        cfg.train.weights.lambda_pd = l;
        cfg.train.lambda_pd_sweep = vec![l];
    }
    if let Some(m) = c.prototypes {
        cfg.train.m = m;
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if c.out.is_some() {
        cfg.out.clone_from(&c.out);
    }
    cfg.latent.seed = cfg.seed;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, returning the text it reports on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Gen { import } => cmd_gen(&cfg, import.as_deref(), cli.common.force),
        Command::Train { data, resume } => cmd_train(&cfg, data, *resume, cli.common.force),
        Command::Sweep { data } => cmd_sweep(&cfg, data, cli.common.force),
        Command::Eval { checkpoint, data } => cmd_eval(&cfg, checkpoint, data, cli.common.force),
        Command::ExportLatent { checkpoint, data } => {
            cmd_export_latent(&cfg, checkpoint, data.as_deref(), cli.common.force)
        }
    }
}

fn out_dir(cfg: &CliConfig) -> Result<&Path> {
    cfg.out.as_deref().ok_or_else(|| {
        Error::config("no output directory: pass --out or set \"out\" in the config")
    })
}

/// Creates `dir`, refusing a non-empty one unless `force`.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if !force && dir.is_dir() && fs::read_dir(dir)?.next().is_some() {
        return Err(Error::validation(format!(
            "output directory {} is not empty (use --force to write into it)",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn file_hash(path: &Path) -> Result<String> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn load_or_build(dir: Option<&Path>, spec: &DatasetSpec) -> Result<Dataset> {
    match dir {
        Some(d) => Dataset::load(d),
        None => Ok(build_dataset(spec)?.0),
    }
}

fn train_test(cfg: &CliConfig, data: &DataArgs) -> Result<(Dataset, Dataset)> {
    let all = load_or_build(data.data.as_deref(), &cfg.dataset)?;
    match &data.test {
        Some(t) => Ok((all, Dataset::load(t)?)),
        None => split_dataset(&all, cfg.train.split, cfg.seed),
    }
}

#[derive(Serialize)]
struct GenManifest<'a> {
    tool_version: &'static str,
    config: &'a CliConfig,
    import: Option<String>,
    import_hash: Option<String>,
    segments: usize,
    flagged: usize,
    class_counts: [usize; 3],
    content_hash: String,
    warnings: &'a [String],
}

pub fn cmd_gen(cfg: &CliConfig, import: Option<&Path>, force: bool) -> Result<String> {
    let dir = out_dir(cfg)?;
    let modality = cfg.dataset.modality;
    let (dataset, warnings) = match import {
        Some(path) => {
            let recordings = import_csv(path)?;
            let segments = segment_recordings(modality, &recordings)
                .into_iter()
                .enumerate()
                .map(|(i, s)| (format!("{modality}_{i:05}"), s))
                .collect();
            let d = Dataset::from_segments(modality, segments, DEFAULT_H, DEFAULT_W)?;
            let flagged = d.manifest.iter().filter(|r| r.flagged).count();
            let w = if flagged > 0 {
                vec![format!(
                    "{flagged} segments could not be labeled and were flagged"
                )]
            } else {
                Vec::new()
            };
            (d, w)
        }
        None => build_dataset(&cfg.dataset)?,
    };
    prepare_out(dir, force)?;
    dataset.save(dir)?;
    let manifest = GenManifest {
        tool_version: TOOL_VERSION,
        config: cfg,
        import: import.map(|p| p.display().to_string()),
        import_hash: import.map(file_hash).transpose()?,
        segments: dataset.len(),
        flagged: dataset.manifest.iter().filter(|r| r.flagged).count(),
        class_counts: dataset.class_counts(),
        content_hash: dataset.content_hash(),
        warnings: &warnings,
    };
    write_json(&dir.join("gen.json"), &manifest)?;
    let mut s = String::new();
    for w in &warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s, "wrote {} images to {}", dataset.len(), dir.display());
    Ok(s)
}

fn invocation(cfg: &CliConfig, command: &str) -> Result<serde_json::Value> {
    Ok(serde_json::json!({ "command": command, "config": serde_json::to_value(cfg)? }))
}

pub fn cmd_train(
    cfg: &CliConfig,
    data: &DataArgs,
    resume_run: bool,
    force: bool,
) -> Result<String> {
    let dir = out_dir(cfg)?;
    let (train, test) = train_test(cfg, data)?;
    let out = RunOutput {
        dir: Some(dir.to_path_buf()),
        invocation: invocation(cfg, "train")?,
    };
    let record = if resume_run {
        resume(&train, &test, &cfg.train, cfg.seed, &out)?
    } else {
        prepare_out(dir, force)?;
        train_split(&train, &test, &cfg.train, cfg.seed, &out)?
    };
    if let Some(reason) = record.aborted {
        return Err(Error::Numeric(format!(
            "training stopped after epoch {}: {reason}",
            record.metrics.last().map_or(0, |r| r.epoch)
        )));
    }
    let mut s = String::new();
    if let Some(b) = record.best() {
        let _ = writeln!(
            s,
            "best epoch {}: test accuracy {:.4}, psi_n {:.4}, psi_c {:.4}",
            b.epoch, b.test_accuracy, b.psi_n, b.psi_c
        );
    }
    let _ = writeln!(s, "artifacts in {}", dir.display());
    Ok(s)
}

pub fn cmd_sweep(cfg: &CliConfig, data: &DataArgs, force: bool) -> Result<String> {
    let dir = out_dir(cfg)?;
    let (train, test) = train_test(cfg, data)?;
    prepare_out(dir, force)?;
    let result = sweep(&train, &test, &cfg.train, Some(dir))?;
    write_json(
        &dir.join("sweep.json"),
        &serde_json::json!({
            "tool_version": TOOL_VERSION,
            "invocation": invocation(cfg, "sweep")?,
            "train_hash": train.content_hash(),
            "test_hash": test.content_hash(),
            "rows": result.rows,
        }),
    )?;
    let aborted: Vec<String> = result
        .records
        .iter()
        .flatten()
        .filter(|r| r.aborted.is_some())
        .map(|r| crate::trainer::run_id(r.lambda_pd, r.seed))
        .collect();
    if !aborted.is_empty() {
        return Err(Error::Numeric(format!(
            "runs stopped early: {}",
            aborted.join(", ")
        )));
    }
    let mut s = String::new();
    for r in &result.rows {
        let _ = writeln!(
            s,
            "lambda_pd {}: accuracy {:.4} ± {:.4}, psi_n {:.4} ± {:.4}",
            r.lambda_pd, r.accuracy_mean, r.accuracy_std, r.psi_n_mean, r.psi_n_std
        );
    }
    Ok(s)
}

fn load_checkpoint(path: &Path, dataset: &Dataset) -> Result<PrototypeModel> {
    let model = PrototypeModel::load(path)?;
    if model.config.p != dataset.pixels() {
        return Err(Error::Dimension {
            op: "checkpoint input size vs dataset image size",
            lhs: vec![model.config.p],
            rhs: vec![dataset.h, dataset.w],
        });
    }
    Ok(model)
}

pub fn cmd_eval(
    cfg: &CliConfig,
    checkpoint: &Path,
    data: &DataArgs,
    force: bool,
) -> Result<String> {
    let (train, test) = train_test(cfg, data)?;
    let model = load_checkpoint(checkpoint, &train)?;
    load_checkpoint(checkpoint, &test)?;
    let (eval, div) = evaluate(
        &model,
        &test.images,
        &test.labels,
        &train.images,
        &train.labels,
    )?;
    let report = serde_json::json!({
        "tool_version": TOOL_VERSION,
        "invocation": invocation(cfg, "eval")?,
        "checkpoint": checkpoint.display().to_string(),
        "checkpoint_hash": file_hash(checkpoint)?,
        "train_hash": train.content_hash(),
        "test_hash": test.content_hash(),
        "accuracy": eval.accuracy,
        "confusion": eval.confusion,
        "psi_n": div.psi_n,
        "psi_c": div.psi_c,
        "warnings": eval.warnings,
    });
    if let Some(dir) = &cfg.out {
        prepare_out(dir, force)?;
        write_json(&dir.join("eval.json"), &report)?;
    }
    Ok(format!(
        "accuracy {:.4}, psi_n {:.4}, psi_c {:.4}\n",
        eval.accuracy, div.psi_n, div.psi_c
    ))
}

pub fn cmd_export_latent(
    cfg: &CliConfig,
    checkpoint: &Path,
    data: Option<&Path>,
    force: bool,
) -> Result<String> {
    let dir = out_dir(cfg)?;
    let dataset = load_or_build(data, &cfg.dataset)?;
    let model = load_checkpoint(checkpoint, &dataset)?;
    let z = model.encode(&dataset.images)?;
    let analysis = analyze(
        &z,
        &model.prototypes,
        &dataset.ids,
        &dataset.labels,
        &cfg.latent,
    )?;
    prepare_out(dir, force)?;
    analysis.view.write_csv(&dir.join("embedding.csv"))?;
    let kl = &analysis.embedding.kl_trace;
    write_json(
        &dir.join("latent.json"),
        &serde_json::json!({
            "tool_version": TOOL_VERSION,
            "invocation": invocation(cfg, "export-latent")?,
            "checkpoint": checkpoint.display().to_string(),
            "checkpoint_hash": file_hash(checkpoint)?,
            "data_hash": dataset.content_hash(),
            "pca_dims": analysis.pca.components.rows(),
            "kl_initial": kl.first(),
            "kl_final": kl.last(),
            "warnings": analysis.warnings,
        }),
    )?;
    Ok(format!(
        "wrote {} rows to {}\n",
        analysis.view.rows.len(),
        dir.join("embedding.csv").display()
    ))
}
