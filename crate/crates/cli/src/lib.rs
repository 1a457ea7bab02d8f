//! Command implementations behind the `aio-stereo` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use aio_stereo::autograd::Graph;
use aio_stereo::checks::{gradcheck_suite, CheckResult};
use aio_stereo::data::pfm::write_pfm;
use aio_stereo::data::pgm::Gray8;
use aio_stereo::data::{build_dataset, DatasetManifest, Split};
use aio_stereo::metrics::{self, MetricsReport, CSV_HEADER};
use aio_stereo::model::forward;
use aio_stereo::params::Binder;
use aio_stereo::trainer::{self, Checkpoint};
use aio_stereo::{ftc, Ablation, RunConfig, StereoSample, Tensor};

pub const THREADS_ENV: &str = "AIO_STEREO_THREADS";

/// Exit status of a command that ran to completion but found a problem.
pub const EXIT_CHECK_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "aio-stereo", version, about = "Stereo matching with selective knowledge transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed (the data seed for `gen-data`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the ablation arm.
    #[arg(long)]
    pub ablation: Option<Ablation>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes the random-dot stereogram dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Regenerate even when both manifests already exist.
        #[arg(long)]
        force: bool,
    },
    /// Trains a model and writes the log and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overwrite an existing final checkpoint.
        #[arg(long)]
        force: bool,
    },
    /// Computes metrics of a checkpoint over a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to evaluate; the configured validation split by default.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory; `<output_dir>/eval` by default.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write normalised 8-bit disparity renders.
        #[arg(long)]
        render: bool,
    },
    /// Writes the per-teacher gate maps of one sample.
    ExportGates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Sample id, or its index within the manifest.
        #[arg(long, default_value = "0")]
        sample: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

/// A failure that maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || matches!(e.downcast_ref::<aio_stereo::Error>(), Some(aio_stereo::Error::Config(_) | aio_stereo::Error::Json(_)))
    });
    if usage {
        EXIT_USAGE
    } else {
        EXIT_CHECK_FAILURE
    }
}

/// Loads and validates the configuration, applying command-line overrides.
pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(a) = common.ablation {
        cfg.model.ablation = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Worker count: available parallelism capped by `AIO_STEREO_THREADS`.
pub fn worker_threads() -> Result<usize> {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
            if cap == 0 {
                bail!(UsageError(format!("{THREADS_ENV} must be at least 1")));
            }
            Ok(avail.min(cap))
        }
        Err(_) => Ok(avail),
    }
}

/// Runs one parsed command, writing human-readable progress to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match cli.command {
        Command::GenData { common, force } => {
            let mut cfg = match &common.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = common.seed {
                cfg.data.seed = seed;
            }
            cmd_gen_data(&cfg, force, out).map(|_| ())
        }
        Command::Train { common, force } => {
            let cfg = load_config(&common)?;
            cmd_train(&cfg, force, out).map(|_| ())
        }
        Command::Eval {
            common,
            checkpoint,
            manifest,
            out: dir,
            render,
        } => {
            let cfg = load_config(&common)?;
            let manifest = manifest.unwrap_or_else(|| cfg.data.dir.join(DatasetManifest::file_name(Split::Val)));
            let dir = dir.unwrap_or_else(|| cfg.output_dir.join("eval"));
            let given = common.config.is_some().then_some(&cfg);
            let summary = cmd_eval(given, &checkpoint, &manifest, &dir, render)?;
            writeln!(out, "{CSV_HEADER}")?;
            writeln!(out, "{}", summary.csv_row("all"))?;
            Ok(())
        }
        Command::ExportGates {
            common,
            checkpoint,
            manifest,
            sample,
            out: dir,
        } => {
            let cfg = load_config(&common)?;
            let manifest = manifest.unwrap_or_else(|| cfg.data.dir.join(DatasetManifest::file_name(Split::Val)));
            let dir = dir.unwrap_or_else(|| cfg.output_dir.join("gates"));
            let files = cmd_export_gates(&checkpoint, &manifest, &sample, &dir)?;
            for f in &files {
                writeln!(out, "{}", f.display())?;
            }
            if files.is_empty() {
                writeln!(out, "checkpoint has no gates (ablation without fusion); nothing written")?;
            }
            Ok(())
        }
        Command::Gradcheck { inject_fault } => {
            let results = cmd_gradcheck(inject_fault.as_deref())?;
            for r in &results {
                writeln!(out, "{}", r.summary())?;
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
            if failed.is_empty() {
                writeln!(out, "all {} checks passed", results.len())?;
                Ok(())
            } else {
                Err(anyhow!("gradient check failed for: {}", failed.join(", ")))
            }
        }
    }
}

/// Generates the dataset unless both manifests exist already (or `force`).
/// Returns whether anything was written.
pub fn cmd_gen_data(cfg: &RunConfig, force: bool, out: &mut dyn std::io::Write) -> Result<bool> {
    cfg.validate()?;
    let dir = &cfg.data.dir;
    let manifests = [Split::Train, Split::Val].map(|s| dir.join(DatasetManifest::file_name(s)));
    if !force && manifests.iter().all(|m| m.is_file()) {
        writeln!(out, "dataset already present: {} (use --force to regenerate)", manifests[0].display())?;
        return Ok(false);
    }
    let (train, val) = build_dataset(&cfg.data)?;
    writeln!(
        out,
        "wrote {} train + {} val samples\n{}\n{}",
        train.len(),
        val.len(),
        manifests[0].display(),
        manifests[1].display()
    )?;
    Ok(true)
}

/// Trains according to `cfg`, saving the resolved configuration next to
/// the outputs.
pub fn cmd_train(cfg: &RunConfig, force: bool, out: &mut dyn std::io::Write) -> Result<trainer::TrainOutcome> {
    let final_ckpt = cfg.output_dir.join(trainer::CHECKPOINT_FILE);
    if final_ckpt.exists() && !force {
        bail!(UsageError(format!(
            "{} already exists (use --force to overwrite)",
            final_ckpt.display()
        )));
    }
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    fs::write(cfg.output_dir.join("config.json"), cfg.to_json())?;
    let outcome = trainer::train(cfg, |r| {
        if let Some(e) = r.val_epe {
            let _ = writeln!(out, "step {:>5}  l_aio {:>10.5}  val_epe {e:.4}", r.step, r.l_aio);
            let _ = out.flush();
        }
    })?;
    writeln!(out, "checkpoint: {}", outcome.checkpoint_path.display())?;
    writeln!(out, "log: {}", outcome.log_path.display())?;
    Ok(outcome)
}

fn load_checkpoint(path: &Path, cfg: Option<&RunConfig>) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(cfg) = cfg {
        let want = cfg.model.hash();
        if want != ckpt.config_hash {
            bail!(
                "checkpoint {} was trained with model config {} but the given config hashes to {}; \
                 refusing to evaluate a mismatched pair",
                path.display(),
                &ckpt.config_hash[..12],
                &want[..12]
            );
        }
    }
    Ok(ckpt)
}

fn render(pred: &[f32], gt: &Tensor<f32>) -> Gray8 {
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let max = gt.data().iter().chain(pred).fold(0.0f32, |m, &v| m.max(v)).max(1e-6);
    let unit: Vec<f32> = pred.iter().map(|&v| v / max).collect();
    Gray8::from_unit(h, w, &unit)
}

/// Evaluates every sample of `manifest` in parallel and writes
/// `metrics.csv` (one row per image plus an `all` row) and a PFM per
/// prediction. Returns the aggregate report.
pub fn cmd_eval(
    cfg: Option<&RunConfig>,
    checkpoint: &Path,
    manifest: &Path,
    dir: &Path,
    with_render: bool,
) -> Result<MetricsReport> {
    let ckpt = load_checkpoint(checkpoint, cfg)?;
    let model = &ckpt.model;
    let m = DatasetManifest::load(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    if m.is_empty() {
        bail!(UsageError(format!("manifest {} is empty", manifest.display())));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(worker_threads()?).build()?;
    let iters = model.config.eval_iters;
    let results: Vec<(String, MetricsReport, Vec<f64>)> = pool.install(|| {
        (0..m.len())
            .into_par_iter()
            .map(|i| -> Result<_> {
                let s = m.load_sample(i)?;
                let pred = model.predict(&s, iters)?;
                let gt = s.gt()?;
                let pred_t = Tensor::new(gt.shape(), pred)?;
                let valid = s.valid_mask()?;
                let (err, gts) = metrics::pixel_errors(&pred_t, gt, &valid)?;
                let report = MetricsReport::from_errors(&err, &gts)?;
                write_pfm(dir.join(format!("{}_disp.pfm", s.id)), &pred_t)?;
                if with_render {
                    render(pred_t.data(), gt).write(dir.join(format!("{}_disp.pgm", s.id)))?;
                }
                Ok((s.id, report, err))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let reports: Vec<MetricsReport> = results.iter().map(|r| r.1.clone()).collect();
    let pooled: Vec<f64> = results.iter().flat_map(|r| r.2.iter().copied()).collect();
    let summary = metrics::aggregate(&reports, Some(&pooled))?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for (id, r, _) in &results {
        let _ = writeln!(csv, "{}", r.csv_row(id));
    }
    let _ = writeln!(csv, "{}", summary.csv_row("all"));
    fs::write(dir.join("metrics.csv"), csv)?;
    Ok(summary)
}

fn pick_sample(m: &DatasetManifest, key: &str) -> Result<StereoSample> {
    if let Some(i) = m.items.iter().position(|it| it.id == key) {
        return Ok(m.load_sample(i)?);
    }
    match key.parse::<usize>() {
        Ok(i) if i < m.len() => Ok(m.load_sample(i)?),
        _ => bail!(UsageError(format!("no sample `{key}` in manifest"))),
    }
}

/// Writes `gates_block<i>_<teacher>.pgm` (weights scaled to `[0, 255]`)
/// and the raw weights as `.ftc` for every fused block.
pub fn cmd_export_gates(checkpoint: &Path, manifest: &Path, sample: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint(checkpoint, None)?;
    let m = DatasetManifest::load(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    let s = pick_sample(&m, sample)?;
    let cfg = &ckpt.model.config;
    let mut g = Graph::<f32>::new();
    let mut p = Binder::new(&ckpt.model.params);
    let fwd = forward(&mut g, &mut p, cfg, &s, None, 1)?;
    let mut files = Vec::new();
    for (j, block) in fwd.aux.blocks.iter().enumerate() {
        let Some(gates) = block.gates else { continue };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let shape = g.shape(gates).to_vec();
        let plane = shape[1] * shape[2];
        for (t, teacher) in cfg.teachers.iter().enumerate() {
            let w = &g.value(gates)[t * plane..(t + 1) * plane];
            let stem = format!("gates_block{}_{teacher}", j + 1);
            let pgm = dir.join(format!("{stem}.pgm"));
            Gray8::from_unit(shape[1], shape[2], w).write(&pgm)?;
            ftc::write(dir.join(format!("{stem}.ftc")), &Tensor::new(&shape[1..], w.to_vec())?)?;
            files.push(pgm);
        }
    }
    Ok(files)
}

pub fn cmd_gradcheck(fault: Option<&str>) -> Result<Vec<CheckResult>> {
    Ok(gradcheck_suite(fault)?)
}
