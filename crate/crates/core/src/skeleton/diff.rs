//! Backward differences of a pose sequence.
//!
//! `D0(t) = x(t)` and `Dk(t) = D(k-1)(t) - D(k-1)(t-1)`. A difference of
//! order `k` that would reach before the first frame is zero.

use super::MotionSequence;
use crate::error::{Error, Result};

/// Differences of orders `0..=beta_max` for a `frames x nodes x group`
/// signal, returned as `frames x nodes x group (beta_max + 1)` with the
/// orders stacked per node: `[D0, D1, ..., D beta_max]`.
pub fn difference_features(values: &[f64], frames: usize, group: usize, beta_max: usize) -> Result<Vec<f64>> {
    if beta_max > 2 {
        return Err(Error::config("beta_max", format!("{beta_max} not in {{0, 1, 2}}")));
    }
    if frames == 0 || group == 0 || values.len() % (frames * group) != 0 {
        return Err(Error::dim(
            "difference_transform",
            format!("{} values for {frames} frames in groups of {group}", values.len()),
        ));
    }
    let width = values.len() / frames;
    let nodes = width / group;
    let orders = beta_max + 1;

    // levels[k] holds Dk for every frame, zero where history is missing.
    let mut levels = vec![values.to_vec()];
    for k in 1..orders {
        let prev = &levels[k - 1];
        let mut cur = vec![0.0; values.len()];
        for t in k..frames {
            for i in 0..width {
                cur[t * width + i] = prev[t * width + i] - prev[(t - 1) * width + i];
            }
        }
        levels.push(cur);
    }

    let mut out = vec![0.0; values.len() * orders];
    for t in 0..frames {
        for n in 0..nodes {
            for (k, level) in levels.iter().enumerate() {
                let src = t * width + n * group;
                let dst = ((t * nodes + n) * orders + k) * group;
                out[dst..dst + group].copy_from_slice(&level[src..src + group]);
            }
        }
    }
    Ok(out)
}

/// `T x M x 3 (beta_max + 1)` channel blocks `[D0, D1, ..., D beta_max]`.
pub fn difference_transform(seq: &MotionSequence, beta_max: usize) -> Result<Vec<f64>> {
    difference_features(&seq.values, seq.frames, 3, beta_max)
}
