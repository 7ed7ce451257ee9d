use std::path::{Path, PathBuf};
use std::process::Command;

use dmgnn_cli::ablate::{cmd_ablate, AblateArgs};
use dmgnn_cli::*;
use dmgnn_core::data::csv_io;
use dmgnn_core::eval::{bench::BenchReport, AVERAGE, MODEL_ROW, ZEROV_ROW};
use dmgnn_core::Error;

const TINY: &str = r#"
seed = 3
[encoder]
channels = [4, 6]
strides = [1, 2]
n_mgcu = 2
csfb_positions = [1]
input_frames = 10
csfb_hidden = 8
[decoder]
horizon = 4
hidden = 6
head_hidden = 8
[train]
steps = 4
batch_size = 4
checkpoint_every = 2
"#;

const SYNTH: &str = r#"
seed = 5
train_sequences = 4
test_sequences = 2
[generator]
frames = 24
"#;

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
    manifest: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let spec = dir.path().join("synth.toml");
    std::fs::write(&spec, SYNTH).unwrap();
    let manifest = cmd_synth(&SynthArgs {
        spec: Some(spec),
        out: dir.path().join("data"),
        seed: None,
    })
    .unwrap();
    Fixture { dir, config, manifest }
}

impl Fixture {
    fn train(&self, out: &str) -> (TrainRun, PathBuf) {
        let out = self.dir.path().join(out);
        let run = cmd_train(&TrainArgs {
            config: Some(self.config.clone()),
            manifest: self.manifest.clone(),
            out: out.clone(),
            seed: None,
            steps: None,
        })
        .unwrap();
        (run, out)
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn train_eval_predict_bench_pipeline() {
    let f = fixture();
    let (run, out) = f.train("run");
    assert_eq!(run.log.len(), 4);
    assert!(run.final_loss().is_finite());
    assert_eq!(run.checkpoints, vec![out.join(checkpoint_name(2)), out.join(FINAL_CHECKPOINT)]);
    let log = std::fs::read_to_string(out.join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.starts_with("step,loss,grad_norm,clip_scale\n"));
    assert!(out.join(CONFIG_FILE).is_file());

    let eval_dir = f.dir.path().join("eval");
    let table = cmd_eval(&EvalArgs {
        checkpoint: out.join(FINAL_CHECKPOINT),
        manifest: f.manifest.clone(),
        horizons_ms: Some(vec![80.0, 160.0]),
        out: Some(eval_dir.clone()),
    })
    .unwrap();
    assert_eq!(table.get(MODEL_ROW, AVERAGE).unwrap().len(), 2);
    assert!(table.get(ZEROV_ROW, AVERAGE).is_some());
    assert!(eval_dir.join(MAE_TEXT_FILE).is_file());
    let csv = std::fs::read_to_string(eval_dir.join(MAE_CSV_FILE)).unwrap();
    assert_eq!(dmgnn_core::MaeTable::from_csv(&csv).unwrap(), table);

    let pred_path = f.dir.path().join("pred.csv");
    let pred = cmd_predict(&PredictArgs {
        checkpoint: out.join(FINAL_CHECKPOINT),
        input: f.dir.path().join("data/test/seq_0000.csv"),
        out: pred_path.clone(),
        horizon: Some(6),
    })
    .unwrap();
    let (samples, frames, values) = csv_io::read_predictions(&pred_path).unwrap();
    assert_eq!((samples, frames), (1, 6));
    assert_eq!(values, pred);
    assert_eq!(values.len(), 6 * 60);

    let report_path = f.dir.path().join("bench.json");
    let report = cmd_bench(&BenchArgs {
        checkpoint: Some(out.join(FINAL_CHECKPOINT)),
        repetitions: 3,
        warmup: 1,
        out: Some(report_path.clone()),
        ..BenchArgs::default()
    })
    .unwrap();
    assert_eq!(report.total_ms.len(), 3);
    let saved = BenchReport::from_json(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn training_is_bitwise_reproducible_and_rerunnable_from_resolved_config() {
    let f = fixture();
    let (_, a) = f.train("a");
    let (_, b) = f.train("b");
    for name in [FINAL_CHECKPOINT, LOSS_LOG_FILE, CONFIG_FILE] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name}");
    }
    let c = f.dir.path().join("c");
    cmd_train(&TrainArgs {
        config: Some(a.join(CONFIG_FILE)),
        manifest: f.manifest.clone(),
        out: c.clone(),
        ..TrainArgs::default()
    })
    .unwrap();
    assert_eq!(read(&a.join(FINAL_CHECKPOINT)), read(&c.join(FINAL_CHECKPOINT)));
}

#[test]
fn a_different_seed_changes_the_run() {
    let f = fixture();
    let (_, a) = f.train("a");
    let b = f.dir.path().join("b");
    cmd_train(&TrainArgs {
        config: Some(f.config.clone()),
        manifest: f.manifest.clone(),
        out: b.clone(),
        seed: Some(4),
        steps: None,
    })
    .unwrap();
    assert_ne!(read(&a.join(LOSS_LOG_FILE)), read(&b.join(LOSS_LOG_FILE)));
}

#[test]
fn errors_map_to_exit_codes() {
    let f = fixture();
    let missing = cmd_train(&TrainArgs {
        config: Some(f.config.clone()),
        manifest: f.dir.path().join("nope.toml"),
        out: f.dir.path().join("x"),
        ..TrainArgs::default()
    })
    .err()
    .unwrap();
    assert_eq!(exit_code(&missing), EXIT_CONFIG);
    assert!(!f.dir.path().join("x").exists(), "failed before writing outputs");

    let bad = f.dir.path().join("bad.toml");
    std::fs::write(&bad, "[encoder]\nlambda = -1.0").unwrap();
    let err = resolve_config(Some(&bad), None, None).unwrap_err();
    assert!(matches!(&err, Error::Config { field, .. } if field == "encoder.lambda"), "{err}");

    let (_, out) = f.train("run");
    std::fs::write(f.dir.path().join("data/test/seq_0001.csv"), "a,b,c\n1,2,3\n4,5\n").unwrap();
    let err = cmd_eval(&EvalArgs {
        checkpoint: out.join(FINAL_CHECKPOINT),
        manifest: f.manifest.clone(),
        ..EvalArgs::default()
    })
    .unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    assert_eq!(exit_code(&err), EXIT_DATA);

    let bad_ckpt = f.dir.path().join("bad.ckpt");
    std::fs::write(&bad_ckpt, "not a checkpoint").unwrap();
    let err = cmd_bench(&BenchArgs {
        checkpoint: Some(bad_ckpt),
        ..BenchArgs::default()
    })
    .unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);
}

#[test]
fn invalid_ablation_variant_fails_alone() {
    let f = fixture();
    let matrix = f.dir.path().join("matrix.toml");
    std::fs::write(
        &matrix,
        "base_config = \"tiny.toml\"\ninclude_base = false\n[sweep]\ncsfb_positions = [[], [3]]\nlambda = [0.0]\n",
    )
    .unwrap();
    let out = f.dir.path().join("ablate");
    let report = cmd_ablate(&AblateArgs {
        matrix,
        manifest: f.manifest.clone(),
        out: out.clone(),
        steps: Some(2),
    })
    .unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["csfb_positions=none", "csfb_positions=3", "lambda=0"]);
    assert!(report.rows[0].error.is_none());
    assert_eq!(report.rows[1].exit_code, EXIT_CONFIG);
    assert!(report.rows[1].error.as_deref().unwrap().contains("csfb_positions"));
    assert!(report.rows[2].error.is_none());
    assert_eq!(report.rows[2].mae.len(), 4);
    assert_eq!(report.exit_code(), EXIT_CONFIG);
    assert!(out.join(dmgnn_cli::ablate::SUMMARY_FILE).is_file());
}

#[test]
fn binary_reads_environment_and_reports_exit_codes() {
    let f = fixture();
    let bin = env!("CARGO_BIN_EXE_dmgnn");
    let status = Command::new(bin)
        .args(["train", "--out"])
        .arg(f.dir.path().join("x"))
        .env("DMGNN_MANIFEST", f.dir.path().join("missing.toml"))
        .env("RUST_LOG", "off")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_CONFIG));

    let out = f.dir.path().join("env_run");
    let status = Command::new(bin)
        .arg("train")
        .env("DMGNN_CONFIG", &f.config)
        .env("DMGNN_MANIFEST", &f.manifest)
        .env("DMGNN_OUT", &out)
        .env("DMGNN_STEPS", "2")
        .env("RUST_LOG", "off")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    let log = std::fs::read_to_string(out.join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 3);

    let help = Command::new(bin).args(["train", "--help"]).output().unwrap();
    let text = String::from_utf8(help.stdout).unwrap();
    assert!(text.contains("DMGNN_SEED"), "{text}");
}
