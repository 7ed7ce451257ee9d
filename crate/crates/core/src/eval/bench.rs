//! Single-threaded inference timing.
//!
//! Report schema (JSON object):
//!
//! | key               | type          | meaning                                   |
//! |-------------------|---------------|-------------------------------------------|
//! | `fingerprint`     | string        | sha256 of the model's resolved config     |
//! | `batch`           | integer       | sequences per forward pass                |
//! | `input_frames`    | integer       | observed frames per sequence              |
//! | `horizon_frames`  | integer       | predicted frames per sequence             |
//! | `warmup`          | integer       | untimed passes before measuring           |
//! | `repetitions`     | integer       | timed passes                              |
//! | `encode_ms`       | array of f64  | encoder wall time per pass                |
//! | `decode_ms`       | array of f64  | decoder wall time per pass                |
//! | `total_ms`        | array of f64  | sum of the two per pass                   |
//! | `mean_ms`, `median_ms` | f64      | statistics of `total_ms`                  |
//! | `decode_median_ms` | f64          | median of `decode_ms`                     |

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ForwardCtx;
use crate::model::Dmgnn;
use crate::tensor::{no_grad, Rng64, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub fingerprint: String,
    pub batch: usize,
    pub input_frames: usize,
    pub horizon_frames: usize,
    pub warmup: usize,
    pub repetitions: usize,
    pub encode_ms: Vec<f64>,
    pub decode_ms: Vec<f64>,
    pub total_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub decode_median_ms: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `repetitions` eval-mode passes over `input [B, T_h, M, 3]` after
/// `warmup` untimed ones.
pub fn bench_inference(
    model: &Dmgnn,
    input: &Tensor,
    horizon_frames: usize,
    repetitions: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::config("bench.repetitions", "must be at least 1"));
    }
    let mut rng = Rng64::seed_from_u64(0);
    let t = input.shape()[1];
    let mut pass = || -> Result<(f64, f64)> {
        no_grad(|| {
            let mut ctx = ForwardCtx::eval(&mut rng);
            let start = Instant::now();
            let state = model.encoder.forward(input, &mut ctx)?;
            let encoded = start.elapsed().as_secs_f64() * 1e3;
            let start = Instant::now();
            let tail = input.narrow(1, t - 3, 3)?;
            let out = model.decoder.forward(&tail, &state, horizon_frames, None, &mut ctx)?;
            std::hint::black_box(out);
            Ok((encoded, start.elapsed().as_secs_f64() * 1e3))
        })
    };
    for _ in 0..warmup {
        pass()?;
    }
    let mut encode_ms = Vec::with_capacity(repetitions);
    let mut decode_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let (e, d) = pass()?;
        encode_ms.push(e);
        decode_ms.push(d);
    }
    let total_ms: Vec<f64> = encode_ms.iter().zip(&decode_ms).map(|(e, d)| e + d).collect();
    Ok(BenchReport {
        fingerprint: model.config.fingerprint(),
        batch: input.shape()[0],
        input_frames: t,
        horizon_frames,
        warmup,
        repetitions,
        mean_ms: total_ms.iter().sum::<f64>() / repetitions as f64,
        median_ms: median(&total_ms),
        decode_median_ms: median(&decode_ms),
        encode_ms,
        decode_ms,
        total_ms,
    })
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<BenchReport> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<bench report>".into(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
