use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dmgnn_cli::ablate::{cmd_ablate, AblateArgs};
use dmgnn_cli::{
    cmd_bench, cmd_eval, cmd_predict, cmd_synth, cmd_train, exit_code, parse_horizons, BenchArgs, EvalArgs,
    PredictArgs, SynthArgs, TrainArgs, EXIT_OK,
};
use dmgnn_core::Result;

const DEFAULTS: &str = "\
Model defaults: scales 1,2,3 with 4 MGCUs of 32/64/128/256 channels and
temporal strides 1,2,2,2, kernel 5, cross-scale fusion after MGCUs 1 and 2,
lambda 0.6, difference orders up to 2, 49 observed frames, 10 predicted
frames, dropout 0.1. Training: Adam with learning rate 1e-4, batch 32,
gradient-norm clipping at 0.5, ell-1 loss. Evaluation horizons 80, 160,
320 and 400 ms.

Every flag can also be set through the environment variable shown in its
help, all of which start with DMGNN_.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.";

#[derive(Parser)]
#[command(name = "dmgnn", version, about = "Skeleton motion prediction with dynamic multiscale graph networks")]
#[command(after_long_help = DEFAULTS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, the loss log and the resolved config.
    Train {
        /// Model config (TOML); built-in defaults when absent.
        #[arg(long, env = "DMGNN_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "DMGNN_MANIFEST")]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long, env = "DMGNN_OUT")]
        out: PathBuf,
        #[arg(long, env = "DMGNN_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "DMGNN_STEPS")]
        steps: Option<usize>,
    },
    /// Per-action and average MAE of a checkpoint next to the ZeroV baseline.
    Eval {
        #[arg(long, env = "DMGNN_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "DMGNN_MANIFEST")]
        manifest: PathBuf,
        /// Comma-separated horizons in ms.
        #[arg(long, env = "DMGNN_HORIZONS", default_value = "80,160,320,400")]
        horizons: String,
        /// Directory for mae.txt and mae.csv.
        #[arg(long, env = "DMGNN_OUT")]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one-factor variants of a base config.
    Ablate {
        /// Ablation matrix (TOML).
        #[arg(long, env = "DMGNN_MATRIX")]
        matrix: PathBuf,
        #[arg(long, env = "DMGNN_MANIFEST")]
        manifest: PathBuf,
        #[arg(long, env = "DMGNN_OUT")]
        out: PathBuf,
        /// Training steps for every variant.
        #[arg(long, env = "DMGNN_STEPS")]
        steps: Option<usize>,
    },
    /// Predict the frames following a pose CSV.
    Predict {
        #[arg(long, env = "DMGNN_CHECKPOINT")]
        checkpoint: PathBuf,
        /// Pose CSV; the last observed window is used.
        #[arg(long, env = "DMGNN_INPUT")]
        input: PathBuf,
        /// Prediction CSV.
        #[arg(long, env = "DMGNN_OUT")]
        out: PathBuf,
        /// Frames to predict; the model's horizon by default.
        #[arg(long, env = "DMGNN_HORIZON")]
        horizon: Option<usize>,
    },
    /// Write a synthetic periodic-motion dataset with its manifest.
    Synth {
        /// Dataset spec (TOML); built-in defaults when absent.
        #[arg(long, env = "DMGNN_SPEC")]
        spec: Option<PathBuf>,
        #[arg(long, env = "DMGNN_OUT")]
        out: PathBuf,
        #[arg(long, env = "DMGNN_SEED")]
        seed: Option<u64>,
    },
    /// Time single-threaded inference and write a JSON report.
    Bench {
        #[arg(long, env = "DMGNN_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        /// Model config used when no checkpoint is given.
        #[arg(long, env = "DMGNN_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "DMGNN_BATCH", default_value_t = 1)]
        batch: usize,
        #[arg(long, env = "DMGNN_HORIZON")]
        horizon: Option<usize>,
        #[arg(long, env = "DMGNN_REPETITIONS", default_value_t = 20)]
        repetitions: usize,
        #[arg(long, env = "DMGNN_WARMUP", default_value_t = 3)]
        warmup: usize,
        #[arg(long, env = "DMGNN_OUT")]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Train {
            config,
            manifest,
            out,
            seed,
            steps,
        } => {
            let run = cmd_train(&TrainArgs {
                config,
                manifest,
                out,
                seed,
                steps,
            })?;
            println!("final loss {}", run.final_loss());
            for path in &run.checkpoints {
                println!("wrote {}", path.display());
            }
        }
        Command::Eval {
            checkpoint,
            manifest,
            horizons,
            out,
        } => {
            let table = cmd_eval(&EvalArgs {
                checkpoint,
                manifest,
                horizons_ms: Some(parse_horizons(&horizons)?),
                out,
            })?;
            print!("{}", table.to_text());
        }
        Command::Ablate {
            matrix,
            manifest,
            out,
            steps,
        } => {
            let report = cmd_ablate(&AblateArgs {
                matrix,
                manifest,
                out,
                steps,
            })?;
            print!("{}", report.to_csv());
            for row in report.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("{} seed {}: {}", row.variant, row.seed, row.error.as_deref().unwrap_or(""));
            }
            return Ok(report.exit_code());
        }
        Command::Predict {
            checkpoint,
            input,
            out,
            horizon,
        } => {
            cmd_predict(&PredictArgs {
                checkpoint,
                input,
                out: out.clone(),
                horizon,
            })?;
            println!("wrote {}", out.display());
        }
        Command::Synth { spec, out, seed } => {
            let manifest = cmd_synth(&SynthArgs { spec, out, seed })?;
            println!("wrote {}", manifest.display());
        }
        Command::Bench {
            checkpoint,
            config,
            batch,
            horizon,
            repetitions,
            warmup,
            out,
        } => {
            let report = cmd_bench(&BenchArgs {
                checkpoint,
                config,
                batch,
                horizon,
                repetitions,
                warmup,
                out,
            })?;
            println!(
                "median {:.3} ms (decode {:.3} ms) over {} passes",
                report.median_ms, report.decode_median_ms, report.repetitions
            );
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
