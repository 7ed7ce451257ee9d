use std::path::Path;

use dmgnn_core::data::{csv_io, load_dataset, make_windows, DatasetManifest};
use dmgnn_core::eval::{
    bench_inference, mae_at_horizons, pose_error, zerov_baseline, zerov_predictions, BenchReport, Horizons,
};
use dmgnn_core::skeleton::rotation::expmap_to_euler;
use dmgnn_core::tensor::Rng64;
use dmgnn_core::{Dmgnn, Error, ModelConfig, MotionSequence, SynthDatasetSpec, Tensor, WindowedSample};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// 99-column file: 33 joints of which columns `3j..3j+3` are zero for the
/// 13 joints with `j % 5 == 4` or `j >= 25`.
fn write_raw(path: &Path, frames: usize) -> Vec<f64> {
    let mut values = Vec::with_capacity(frames * 99);
    for t in 0..frames {
        for c in 0..99 {
            let joint = c / 3;
            let dead = joint % 5 == 4 || joint >= 25;
            values.push(if dead { 0.0 } else { (t * 99 + c) as f64 * 1e-3 });
        }
    }
    let header: Vec<String> = (0..99).map(|c| format!("c{c}")).collect();
    csv_io::write_sequence(path, &header, &values).unwrap();
    values
}

fn manifest(dir: &Path, body: &str) -> DatasetManifest {
    let path = dir.join("manifest.toml");
    std::fs::write(&path, body).unwrap();
    DatasetManifest::load(&path).unwrap()
}

const TWO_FILES: &str = r#"
frame_interval_ms = 20.0
downsample = 2
mask = "nonzero"
train_subjects = ["S1"]
test_subjects = ["S5"]
[[files]]
path = "S1/walking.csv"
action = "walking"
subject = "S1"
[[files]]
path = "S5/walking.csv"
action = "walking"
subject = "S5"
test_offsets = [3, 0]
"#;

#[test]
fn load_downsamples_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("S1")).unwrap();
    std::fs::create_dir_all(dir.path().join("S5")).unwrap();
    let raw = write_raw(&dir.path().join("S1/walking.csv"), 100);
    write_raw(&dir.path().join("S5/walking.csv"), 140);
    let data = load_dataset(&manifest(dir.path(), TWO_FILES)).unwrap();
    // 33 joints minus the 13 inactive ones.
    assert_eq!(data.columns.len(), 60);
    assert_eq!(data.joints(), 20);
    let train = &data.clips[0].sequence;
    assert_eq!(train.frames, 50);
    assert_eq!(train.frame_interval_ms, 40.0);
    // Frame 1 of the result is source frame 2.
    assert_eq!(train.frame(1)[0], raw[2 * 99]);
    assert!(!data.clips[0].test && data.clips[1].test);

    let test = data.test_windows(49, 10).unwrap();
    assert_eq!(test.iter().map(|w| w.offset).collect::<Vec<_>>(), vec![3, 0]);
    assert!(data.train_windows(49, 10, 1).unwrap().is_empty());
}

#[test]
fn explicit_mask_selects_joints_in_order() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("S1")).unwrap();
    write_raw(&dir.path().join("S1/walking.csv"), 10);
    let body = r#"
frame_interval_ms = 20.0
mask = [3, 4, 5, 0, 1, 2]
train_subjects = ["S1"]
test_subjects = []
[[files]]
path = "S1/walking.csv"
action = "walking"
subject = "S1"
"#;
    let data = load_dataset(&manifest(dir.path(), body)).unwrap();
    let seq = &data.clips[0].sequence;
    assert_eq!(seq.joints, 2);
    assert_eq!(seq.frame(0), &[0.003, 0.004, 0.005, 0.0, 0.001, 0.002]);
}

#[test]
fn load_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("S1")).unwrap();
    std::fs::create_dir_all(dir.path().join("S5")).unwrap();
    write_raw(&dir.path().join("S5/walking.csv"), 10);
    let bad = dir.path().join("S1/walking.csv");

    std::fs::write(&bad, "").unwrap();
    let m = manifest(dir.path(), TWO_FILES);
    match load_dataset(&m) {
        Err(Error::Parse { path, .. }) => assert!(path.ends_with("S1/walking.csv")),
        other => panic!("{other:?}"),
    }

    std::fs::write(&bad, "a,b\n1,2\n3,4,5\n").unwrap();
    match load_dataset(&m) {
        Err(Error::Parse { path, line, .. }) => {
            assert!(path.ends_with("S1/walking.csv"));
            assert_eq!(line, 3);
        }
        other => panic!("{other:?}"),
    }

    std::fs::remove_file(&bad).unwrap();
    assert!(matches!(load_dataset(&m), Err(Error::Config { .. })));
    assert!(matches!(
        DatasetManifest::load(&dir.path().join("missing.toml")),
        Err(Error::Config { .. })
    ));
}

#[test]
fn synthetic_dataset_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthDatasetSpec {
        seed: 4,
        train_sequences: 3,
        test_sequences: 2,
        ..SynthDatasetSpec::default()
    };
    let path = spec.write(dir.path()).unwrap();
    let loaded = load_dataset(&DatasetManifest::load(&path).unwrap()).unwrap();
    let memory = spec.generate().unwrap();
    assert_eq!(loaded.clips.len(), 5);
    for (a, b) in loaded.clips.iter().zip(&memory.clips) {
        assert_eq!(a.sequence.values, b.sequence.values);
        assert_eq!(a.test, b.test);
    }
    // Windows from the same manifest are identical across loads.
    let again = load_dataset(&DatasetManifest::load(&path).unwrap()).unwrap();
    assert_eq!(
        loaded.train_windows(49, 10, 1).unwrap(),
        again.train_windows(49, 10, 1).unwrap()
    );
}

fn sample(input: Vec<f64>, target: Vec<f64>, joints: usize) -> WindowedSample {
    WindowedSample {
        input,
        target,
        joints,
        action: "a".into(),
        clip: 0,
        offset: 0,
    }
}

#[test]
fn zerov_of_constant_motion_is_zero() {
    let pose = vec![0.1, -0.2, 0.3];
    let s = sample(pose.repeat(5), pose.repeat(4), 1);
    let h = Horizons::new(&[40.0, 160.0], 40.0, 4).unwrap();
    assert_eq!(zerov_baseline(&[s], &h).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn zerov_drift_matches_closed_form() {
    // Rotation about x by theta has ZYX angles (theta, 0, 0), so a steady
    // drift d per frame gives error k d at frame k.
    let d = 0.03;
    let theta0 = 0.2;
    let seq: Vec<f64> = (0..15).flat_map(|t| [theta0 + d * t as f64, 0.0, 0.0]).collect();
    let motion = MotionSequence::new(seq, 15, 1, 40.0).unwrap();
    let windows = make_windows(&motion, 5, 10, 1).unwrap();
    let h = Horizons::new(&[80.0, 160.0, 320.0, 400.0], 40.0, 10).unwrap();
    let mae = zerov_baseline(&windows, &h).unwrap();
    for (k, v) in h.frames.iter().zip(&mae) {
        assert!((v - *k as f64 * d).abs() < 1e-12, "frame {k}: {v}");
    }
}

/// Direct loop over samples, joints and axes.
fn loop_oracle(pred: &[f64], target: &[f64], samples: usize, frames: usize, joints: usize, k: usize) -> f64 {
    let mut total = 0.0;
    for s in 0..samples {
        let mut sq = 0.0;
        for j in 0..joints {
            let at = ((s * frames + k - 1) * joints + j) * 3;
            let a = expmap_to_euler([pred[at], pred[at + 1], pred[at + 2]]);
            let b = expmap_to_euler([target[at], target[at + 1], target[at + 2]]);
            for ax in 0..3 {
                sq += (a[ax] - b[ax]).powi(2);
            }
        }
        total += sq.sqrt();
    }
    total / samples as f64
}

#[test]
fn mae_matches_loop_oracle() {
    let mut rng = Rng64::seed_from_u64(9);
    for _ in 0..20 {
        let (samples, frames, joints) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..4));
        let n = samples * frames * joints * 3;
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let h = Horizons {
            ms: (1..=frames).map(|k| k as f64 * 40.0).collect(),
            frames: (1..=frames).collect(),
        };
        let mae = mae_at_horizons(&pred, &target, frames, joints, &h).unwrap();
        for (k, v) in h.frames.iter().zip(&mae) {
            let want = loop_oracle(&pred, &target, samples, frames, joints, *k);
            assert!((v - want).abs() < 1e-12);
        }
    }
}

#[test]
fn zerov_equals_mae_of_tiled_last_pose() {
    let mut rng = Rng64::seed_from_u64(2);
    let samples: Vec<WindowedSample> = (0..4)
        .map(|_| {
            let input = (0..6 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target = (0..3 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            sample(input, target, 2)
        })
        .collect();
    let h = Horizons::new(&[40.0, 80.0, 120.0], 40.0, 3).unwrap();
    let tiled: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.input[5 * 6..].repeat(3))
        .collect();
    assert_eq!(tiled, zerov_predictions(&samples));
    let targets: Vec<f64> = samples.iter().flat_map(|s| s.target.clone()).collect();
    assert_eq!(
        zerov_baseline(&samples, &h).unwrap(),
        mae_at_horizons(&tiled, &targets, 3, 2, &h).unwrap()
    );
}

proptest! {
    #[test]
    fn mae_is_non_negative_and_order_invariant(
        seed in 0u64..1000,
        samples in 1usize..5,
    ) {
        let mut rng = Rng64::seed_from_u64(seed);
        let per = 2 * 2 * 3;
        let pred: Vec<f64> = (0..samples * per).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..samples * per).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = Horizons { ms: vec![40.0, 80.0], frames: vec![1, 2] };
        let mae = mae_at_horizons(&pred, &target, 2, 2, &h).unwrap();
        prop_assert!(mae.iter().all(|&v| v >= 0.0));
        let rev = |v: &[f64]| -> Vec<f64> { v.chunks(per).rev().flatten().copied().collect() };
        let mae_rev = mae_at_horizons(&rev(&pred), &rev(&target), 2, 2, &h).unwrap();
        for (a, b) in mae.iter().zip(&mae_rev) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(pose_error(&pred[..6], &pred[..6]), 0.0);
    }
}

fn small_model() -> Dmgnn {
    let mut cfg = ModelConfig::default();
    cfg.encoder.channels = vec![4, 4, 4, 8];
    cfg.encoder.csfb_hidden = 4;
    cfg.decoder.hidden = 8;
    cfg.decoder.head_hidden = 4;
    Dmgnn::new(&cfg).unwrap()
}

#[test]
fn bench_report_round_trips_and_counts_samples() {
    let model = small_model();
    let mut rng = Rng64::seed_from_u64(0);
    let input = Tensor::uniform(&[1, 49, 20, 3], -0.3, 0.3, &mut rng);
    let one = bench_inference(&model, &input, 5, 1, 0).unwrap();
    assert_eq!(one.total_ms.len(), 1);
    assert_eq!(one.fingerprint, model.config.fingerprint());
    assert_eq!(BenchReport::from_json(&one.to_json()).unwrap(), one);
    assert!(bench_inference(&model, &input, 5, 0, 0).is_err());
}

#[test]
fn longer_horizon_takes_longer_to_decode() {
    let model = small_model();
    let mut rng = Rng64::seed_from_u64(0);
    let input = Tensor::uniform(&[2, 49, 20, 3], -0.3, 0.3, &mut rng);
    let short = bench_inference(&model, &input, 10, 15, 2).unwrap();
    let long = bench_inference(&model, &input, 20, 15, 2).unwrap();
    assert!(
        long.decode_median_ms > short.decode_median_ms,
        "{} vs {}",
        long.decode_median_ms,
        short.decode_median_ms
    );
}
