//! Mean angle error at fixed horizons, the ZeroV baseline, result tables
//! and an inference timing harness.

pub mod bench;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{stack, WindowedSample};
use crate::error::{Error, Result};
use crate::model::Dmgnn;
use crate::skeleton::rotation::expmap_slice_to_euler;

pub use bench::{bench_inference, BenchReport};

/// Default evaluation horizons in milliseconds.
pub const DEFAULT_HORIZONS_MS: [f64; 4] = [80.0, 160.0, 320.0, 400.0];

/// Horizons in milliseconds with the 1-based predicted frame each maps to.
#[derive(Clone, Debug, PartialEq)]
pub struct Horizons {
    pub ms: Vec<f64>,
    pub frames: Vec<usize>,
}

impl Horizons {
    /// Maps each horizon to frame `ms / interval`, which must be a whole
    /// number between 1 and `max_frames`.
    pub fn new(ms: &[f64], frame_interval_ms: f64, max_frames: usize) -> Result<Horizons> {
        if ms.is_empty() {
            return Err(Error::config("horizons", "no horizons given"));
        }
        let frames = ms
            .iter()
            .map(|&h| {
                let f = h / frame_interval_ms;
                let k = f.round();
                if !(h > 0.0) || (f - k).abs() > 1e-9 {
                    return Err(Error::config(
                        "horizons",
                        format!("{h} ms is not a whole number of {frame_interval_ms} ms frames"),
                    ));
                }
                let k = k as usize;
                if k > max_frames {
                    return Err(Error::config(
                        "horizons",
                        format!("{h} ms is frame {k}, beyond the {max_frames} predicted frames"),
                    ));
                }
                Ok(k)
            })
            .collect::<Result<_>>()?;
        Ok(Horizons { ms: ms.to_vec(), frames })
    }
}

/// Euclidean norm of the Euler-angle difference over a whole pose given
/// as flat expmap triples.
pub fn pose_error(pred: &[f64], target: &[f64]) -> f64 {
    let a = expmap_slice_to_euler(pred);
    let b = expmap_slice_to_euler(target);
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-horizon mean over samples of [`pose_error`].
///
/// `pred` and `target` are `[S][T_f][M][3]`.
pub fn mae_at_horizons(pred: &[f64], target: &[f64], frames: usize, joints: usize, horizons: &Horizons) -> Result<Vec<f64>> {
    let w = joints * 3;
    let per = frames * w;
    if per == 0 || pred.len() != target.len() || pred.is_empty() || pred.len() % per != 0 {
        return Err(Error::dim(
            "mae_at_horizons",
            format!("{} predicted vs {} target values for {frames} x {joints} x 3", pred.len(), target.len()),
        ));
    }
    if let Some(&k) = horizons.frames.iter().find(|&&k| k == 0 || k > frames) {
        return Err(Error::config("horizons", format!("frame {k} outside 1..={frames}")));
    }
    let samples = pred.len() / per;
    Ok(horizons
        .frames
        .iter()
        .map(|&k| {
            let total: f64 = (0..samples)
                .map(|s| {
                    let at = s * per + (k - 1) * w;
                    pose_error(&pred[at..at + w], &target[at..at + w])
                })
                .sum();
            total / samples as f64
        })
        .collect())
}

/// The last observed pose repeated for every future frame, `[S][T_f][M][3]`.
pub fn zerov_predictions(samples: &[WindowedSample]) -> Vec<f64> {
    samples
        .iter()
        .flat_map(|s| {
            let last = s.last_pose();
            (0..s.target_frames()).flat_map(move |_| last.iter().copied())
        })
        .collect()
}

fn targets(samples: &[WindowedSample]) -> Vec<f64> {
    samples.iter().flat_map(|s| s.target.iter().copied()).collect()
}

fn shape_of(samples: &[WindowedSample]) -> Result<(usize, usize)> {
    let s = samples
        .first()
        .ok_or_else(|| Error::Contract("no evaluation samples".into()))?;
    Ok((s.target_frames(), s.joints))
}

pub fn zerov_baseline(samples: &[WindowedSample], horizons: &Horizons) -> Result<Vec<f64>> {
    let (frames, joints) = shape_of(samples)?;
    mae_at_horizons(&zerov_predictions(samples), &targets(samples), frames, joints, horizons)
}

/// Model predictions for every sample, `[S][T_f][M][3]`, computed in
/// eval mode in chunks of `batch_size`.
pub fn predict_samples(model: &Dmgnn, samples: &[WindowedSample], batch_size: usize) -> Result<Vec<f64>> {
    let (frames, _) = shape_of(samples)?;
    let mut out = Vec::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&WindowedSample> = chunk.iter().collect();
        let batch = stack(&refs)?;
        out.extend(model.predict(&batch.input, frames)?.to_vec());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub method: String,
    pub action: String,
    pub values: Vec<f64>,
}

/// MAE per method and action, one column per horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeTable {
    pub horizons_ms: Vec<f64>,
    pub rows: Vec<MaeRow>,
}

pub const AVERAGE: &str = "average";

impl MaeTable {
    pub fn new(horizons_ms: &[f64]) -> MaeTable {
        MaeTable {
            horizons_ms: horizons_ms.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn get(&self, method: &str, action: &str) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.action == action)
            .map(|r| r.values.as_slice())
    }

    /// Fixed-width text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12} {:<16}", "method", "action");
        for h in &self.horizons_ms {
            let _ = write!(out, " {:>8}", format!("{h}ms"));
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<12} {:<16}", r.method, r.action);
            for v in &r.values {
                let _ = write!(out, " {v:>8.4}");
            }
            out.push('\n');
        }
        out
    }

    /// CSV with a `method,action,<horizon ms>...` header; values are written
    /// in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,action");
        for h in &self.horizons_ms {
            let _ = write!(out, ",{h:?}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.method, r.action);
            for v in &r.values {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<MaeTable> {
        let path = std::path::PathBuf::from("<mae table>");
        let err = |line: usize, msg: String| Error::Parse {
            path: path.clone(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty table".into()))?;
        let cells: Vec<&str> = header.split(',').collect();
        if cells.len() < 3 || cells[0] != "method" || cells[1] != "action" {
            return Err(err(1, format!("unexpected header `{header}`")));
        }
        let horizons_ms = cells[2..]
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|_| err(1, format!("bad horizon `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != horizons_ms.len() + 2 {
                return Err(err(i + 1, format!("{} cells, expected {}", cells.len(), horizons_ms.len() + 2)));
            }
            let values = cells[2..]
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|_| err(i + 1, format!("bad value `{c}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(MaeRow {
                method: cells[0].to_string(),
                action: cells[1].to_string(),
                values,
            });
        }
        Ok(MaeTable { horizons_ms, rows })
    }

    /// Rows for one method: one per action (sorted) plus their average.
    pub fn push_method(&mut self, method: &str, per_action: &BTreeMap<String, Vec<f64>>) {
        let n = self.horizons_ms.len();
        let mut avg = vec![0.0; n];
        for (action, values) in per_action {
            for (a, v) in avg.iter_mut().zip(values) {
                *a += v / per_action.len() as f64;
            }
            self.rows.push(MaeRow {
                method: method.into(),
                action: action.clone(),
                values: values.clone(),
            });
        }
        self.rows.push(MaeRow {
            method: method.into(),
            action: AVERAGE.into(),
            values: avg,
        });
    }
}

fn by_action(samples: &[WindowedSample]) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.action.clone()).or_default().push(i);
    }
    groups
}

/// Per-action MAE of precomputed predictions `[S][T_f][M][3]`.
pub fn mae_by_action(
    pred: &[f64],
    samples: &[WindowedSample],
    horizons: &Horizons,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let (frames, joints) = shape_of(samples)?;
    let per = frames * joints * 3;
    let mut out = BTreeMap::new();
    for (action, idx) in by_action(samples) {
        let p: Vec<f64> = idx.iter().flat_map(|&i| pred[i * per..(i + 1) * per].iter().copied()).collect();
        let t: Vec<f64> = idx.iter().flat_map(|&i| samples[i].target.iter().copied()).collect();
        out.insert(action, mae_at_horizons(&p, &t, frames, joints, horizons)?);
    }
    Ok(out)
}

pub const MODEL_ROW: &str = "dmgnn";
pub const ZEROV_ROW: &str = "zerov";

/// Model and ZeroV rows for every action plus their averages.
pub fn evaluate(model: &Dmgnn, samples: &[WindowedSample], horizons: &Horizons, batch_size: usize) -> Result<MaeTable> {
    let pred = predict_samples(model, samples, batch_size)?;
    let mut table = MaeTable::new(&horizons.ms);
    table.push_method(MODEL_ROW, &mae_by_action(&pred, samples, horizons)?);
    table.push_method(ZEROV_ROW, &mae_by_action(&zerov_predictions(samples), samples, horizons)?);
    Ok(table)
}
