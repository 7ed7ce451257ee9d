//! Subcommand implementations behind the `dmgnn` binary.
//!
//! Every command is a plain function returning [`dmgnn_core::Result`], so
//! tests drive the same code paths as the binary. [`exit_code`] maps
//! errors onto process exit codes.

pub mod ablate;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dmgnn_core::data::{csv_io, load_dataset, BatchSampler, SynthDatasetSpec};
use dmgnn_core::eval::{bench::bench_inference, bench::BenchReport, evaluate, Horizons, DEFAULT_HORIZONS_MS};
use dmgnn_core::model::StepReport;
use dmgnn_core::tensor::Tensor;
use dmgnn_core::{Dataset, DatasetManifest, Dmgnn, Error, MaeTable, ModelConfig, Result, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Resolved config written next to the training outputs.
pub const CONFIG_FILE: &str = "config.toml";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const MAE_TEXT_FILE: &str = "mae.txt";
pub const MAE_CSV_FILE: &str = "mae.csv";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Validation(_) => EXIT_CONFIG,
        Error::Parse { .. } | Error::Io { .. } | Error::Load(_) | Error::Contract(_) => EXIT_DATA,
        Error::Training { .. } | Error::Dimension { .. } => EXIT_NUMERIC,
    }
}

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:06}.ckpt")
}

/// Loads `path` (defaults when absent), applies overrides and resolves.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, steps: Option<usize>) -> Result<ModelConfig> {
    let mut cfg = match path {
        Some(p) if !p.is_file() => {
            return Err(Error::config("config", format!("{} does not exist", p.display())));
        }
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(steps) = steps {
        cfg.train.steps = steps;
    }
    cfg.resolve()
}

/// Loads the manifest and its files and checks the joint count against
/// the skeleton.
pub fn load_checked(manifest: &Path, cfg: &ModelConfig) -> Result<Dataset> {
    let data = load_dataset(&DatasetManifest::load(manifest)?)?;
    check_joints(&data, cfg)?;
    Ok(data)
}

pub fn check_joints(data: &Dataset, cfg: &ModelConfig) -> Result<()> {
    let joints = cfg.skeleton().joints;
    if data.joints() != joints {
        return Err(Error::config(
            "skeleton.joints",
            format!("dataset has {} joints, skeleton has {joints}", data.joints()),
        ));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub struct TrainRun {
    pub model: Dmgnn,
    pub log: Vec<StepReport>,
    /// Periodic checkpoints followed by the final one.
    pub checkpoints: Vec<PathBuf>,
}

impl TrainRun {
    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Trains a fresh model on the training clips of `data`, writing the
/// resolved config, the loss log and checkpoints into `out`.
pub fn train_on(cfg: &ModelConfig, data: &Dataset, out: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    check_joints(data, cfg)?;
    let windows = data.train_windows(cfg.encoder.input_frames, cfg.decoder.horizon, cfg.train.window_stride)?;
    if windows.is_empty() {
        return Err(Error::Contract(format!(
            "no training clip is longer than {} frames",
            cfg.encoder.input_frames + cfg.decoder.horizon
        )));
    }
    let mut sampler = BatchSampler::new(windows.len(), cfg.train.batch_size, cfg.seed)?;
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_toml())?;

    let log_path = out.join(LOSS_LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let io_err = |e| Error::io(&log_path, e);
    writeln!(log_file, "step,loss,grad_norm,clip_scale").map_err(io_err)?;

    let mut trainer = Trainer::new(Dmgnn::new(cfg)?);
    log::info!(
        "training {} parameters on {} windows, batch {}",
        trainer.model.parameter_count(),
        windows.len(),
        sampler.batch_size()
    );
    let steps = cfg.train.steps;
    let every = cfg.train.checkpoint_every;
    let mut log = Vec::with_capacity(steps);
    let mut checkpoints = Vec::new();
    for _ in 0..steps {
        let batch = sampler.next_batch(&windows)?;
        let r = trainer.train_step(&batch)?;
        writeln!(log_file, "{},{},{},{}", r.step, r.loss, r.grad_norm, r.clip_scale).map_err(io_err)?;
        if r.step % (steps / 20).max(1) == 0 {
            log::info!("step {} loss {:.5} grad norm {:.3}", r.step, r.loss, r.grad_norm);
        }
        if every > 0 && r.step % every == 0 && r.step < steps {
            let path = out.join(checkpoint_name(r.step));
            trainer.model.save(&path, Some(&trainer.optimizer))?;
            checkpoints.push(path);
        }
        log.push(r);
    }
    log_file.flush().map_err(io_err)?;
    let path = out.join(FINAL_CHECKPOINT);
    trainer.model.save(&path, Some(&trainer.optimizer))?;
    checkpoints.push(path);
    Ok(TrainRun {
        model: trainer.model,
        log,
        checkpoints,
    })
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainRun> {
    let cfg = resolve_config(args.config.as_deref(), args.seed, args.steps)?;
    let data = load_checked(&args.manifest, &cfg)?;
    train_on(&cfg, &data, &args.out)
}

/// Parses a comma-separated list of horizons in milliseconds.
pub fn parse_horizons(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| Error::config("horizons", format!("`{s}` is not a positive number of milliseconds")))
        })
        .collect()
}

/// Model and ZeroV MAE on the test clips of `data`.
pub fn evaluate_on(model: &Dmgnn, data: &Dataset, horizons_ms: &[f64]) -> Result<MaeTable> {
    let interval = data.frame_interval_ms();
    let probe = Horizons::new(horizons_ms, interval, usize::MAX)?;
    let frames = probe.frames.iter().copied().max().unwrap_or(0).max(model.horizon());
    let horizons = Horizons::new(horizons_ms, interval, frames)?;
    let samples = data.test_windows(model.input_frames(), frames)?;
    if samples.is_empty() {
        return Err(Error::Contract(format!(
            "no test clip is longer than {} frames",
            model.input_frames() + frames
        )));
    }
    evaluate(model, &samples, &horizons, model.config.train.batch_size)
}

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    /// Defaults to 80, 160, 320 and 400 ms.
    pub horizons_ms: Option<Vec<f64>>,
    /// Directory for the text and CSV tables.
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MaeTable> {
    let (model, _) = Dmgnn::load(&args.checkpoint)?;
    let data = load_checked(&args.manifest, &model.config)?;
    let horizons = args.horizons_ms.clone().unwrap_or_else(|| DEFAULT_HORIZONS_MS.to_vec());
    let table = evaluate_on(&model, &data, &horizons)?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join(MAE_TEXT_FILE), &table.to_text())?;
        write_file(&out.join(MAE_CSV_FILE), &table.to_csv())?;
    }
    Ok(table)
}

#[derive(Clone, Debug, Default)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    /// Pose CSV with one row per frame and `3M` angle columns.
    pub input: PathBuf,
    pub out: PathBuf,
    /// Frames to predict; the model's horizon when absent.
    pub horizon: Option<usize>,
}

/// Predicts the frames following the last observed window of `input`.
pub fn cmd_predict(args: &PredictArgs) -> Result<Vec<f64>> {
    let (model, _) = Dmgnn::load(&args.checkpoint)?;
    let table = csv_io::read_table(&args.input)?;
    let width = 3 * model.joints();
    if table.columns != width {
        return Err(Error::Contract(format!(
            "{} has {} columns, the model expects {width}",
            args.input.display(),
            table.columns
        )));
    }
    let th = model.input_frames();
    let rows = table.rows();
    if rows < th {
        return Err(Error::Contract(format!(
            "{} has {rows} frames, the model observes {th}",
            args.input.display()
        )));
    }
    let input = Tensor::new(table.values[(rows - th) * width..].to_vec(), &[1, th, model.joints(), 3])?;
    let horizon = args.horizon.unwrap_or_else(|| model.horizon());
    if horizon == 0 {
        return Err(Error::config("horizon", "must be at least one frame"));
    }
    let pred = model.predict(&input, horizon)?.to_vec();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    csv_io::write_predictions(&args.out, &pred, horizon, width)?;
    Ok(pred)
}

#[derive(Clone, Debug, Default)]
pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Writes a synthetic dataset and returns its manifest path.
pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let mut spec = match &args.spec {
        Some(p) if !p.is_file() => {
            return Err(Error::config("spec", format!("{} does not exist", p.display())));
        }
        Some(p) => SynthDatasetSpec::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => SynthDatasetSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.generator.validate()?;
    create_dir(&args.out)?;
    spec.write(&args.out)
}

#[derive(Clone, Debug)]
pub struct BenchArgs {
    /// Trained weights; a freshly initialized model from `config` otherwise.
    pub checkpoint: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub batch: usize,
    /// Frames to predict; the model's horizon when absent.
    pub horizon: Option<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    pub out: Option<PathBuf>,
}

impl Default for BenchArgs {
    fn default() -> Self {
        BenchArgs {
            checkpoint: None,
            config: None,
            batch: 1,
            horizon: None,
            repetitions: 20,
            warmup: 3,
            out: None,
        }
    }
}

/// Smooth deterministic poses `[batch, frames, joints, 3]`.
pub fn bench_input(batch: usize, frames: usize, joints: usize) -> Result<Tensor> {
    let data = (0..batch * frames * joints * 3)
        .map(|i| {
            let (t, c) = ((i / (joints * 3)) % frames, i % (joints * 3));
            0.3 * (0.2 * t as f64 + 0.7 * c as f64).sin()
        })
        .collect();
    Tensor::new(data, &[batch, frames, joints, 3])
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    let model = match &args.checkpoint {
        Some(path) => Dmgnn::load(path)?.0,
        None => Dmgnn::new(&resolve_config(args.config.as_deref(), None, None)?)?,
    };
    if args.batch == 0 {
        return Err(Error::config("batch", "must be at least 1"));
    }
    let input = bench_input(args.batch, model.input_frames(), model.joints())?;
    let horizon = args.horizon.unwrap_or_else(|| model.horizon());
    let report = bench_inference(&model, &input, horizon, args.repetitions, args.warmup)?;
    if let Some(out) = &args.out {
        report.save(out)?;
    }
    Ok(report)
}
