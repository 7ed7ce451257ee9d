//! Multiscale body representation.
//!
//! A body is described at the joint scale and at any number of coarser
//! scales, each of which partitions the joints into components. Features
//! move between scales through a [`ScaleMap`]: averaging over a component
//! (aggregate) and copying a component back to its joints (broadcast).

mod diff;
pub mod rotation;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use diff::{difference_features, difference_transform};

const DEFAULT_SKELETON: &str = include_str!("../../data/h36m_20.toml");

/// One body scale: how joints group into components and which components
/// are physically connected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub id: u8,
    #[serde(default)]
    pub name: String,
    /// For each component, the joint-scale indices it aggregates.
    pub groups: Vec<Vec<usize>>,
    /// Undirected physical connections between components.
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

impl ScaleSpec {
    pub fn nodes(&self) -> usize {
        self.groups.len()
    }

    /// Checks that `groups` partition `0..joints` and edges are in range.
    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.groups.is_empty() || self.groups.iter().any(Vec::is_empty) {
            return Err(Error::Validation(format!("scale {}: empty group", self.id)));
        }
        let mut count = vec![0usize; joints];
        let mut out_of_range = Vec::new();
        for &j in self.groups.iter().flatten() {
            match count.get_mut(j) {
                Some(c) => *c += 1,
                None => out_of_range.push(j),
            }
        }
        let duplicated: Vec<usize> = (0..joints).filter(|&j| count[j] > 1).collect();
        let missing: Vec<usize> = (0..joints).filter(|&j| count[j] == 0).collect();
        if !duplicated.is_empty() || !missing.is_empty() || !out_of_range.is_empty() {
            return Err(Error::Validation(format!(
                "scale {}: groups do not partition {joints} joints \
                 (duplicated {duplicated:?}, missing {missing:?}, out of range {out_of_range:?})",
                self.id
            )));
        }
        let n = self.nodes();
        for &[a, b] in &self.edges {
            if a >= n || b >= n {
                return Err(Error::Validation(format!(
                    "scale {}: edge ({a}, {b}) references a node outside 0..{n}",
                    self.id
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("scale {}: self-loop on node {a}", self.id)));
            }
        }
        Ok(())
    }
}

/// Joint count plus every available scale definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub joints: usize,
    #[serde(default)]
    pub joint_names: Vec<String>,
    pub scales: Vec<ScaleSpec>,
}

impl SkeletonSpec {
    /// The bundled 20-joint body with scales 1 to 5.
    pub fn default_h36m() -> SkeletonSpec {
        SkeletonSpec::from_toml(DEFAULT_SKELETON).expect("bundled skeleton file is valid")
    }

    pub fn from_toml(text: &str) -> Result<SkeletonSpec> {
        let spec: SkeletonSpec =
            toml::from_str(text).map_err(|e| Error::Validation(format!("skeleton file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<SkeletonSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SkeletonSpec::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 {
            return Err(Error::Validation("skeleton has no joints".into()));
        }
        if !self.joint_names.is_empty() && self.joint_names.len() != self.joints {
            return Err(Error::Validation(format!(
                "{} joint names for {} joints",
                self.joint_names.len(),
                self.joints
            )));
        }
        let mut seen = BTreeMap::new();
        for s in &self.scales {
            if seen.insert(s.id, ()).is_some() {
                return Err(Error::Validation(format!("scale id {} defined twice", s.id)));
            }
            s.validate(self.joints)?;
        }
        Ok(())
    }

    pub fn scale(&self, id: u8) -> Option<&ScaleSpec> {
        self.scales.iter().find(|s| s.id == id)
    }
}

/// Aggregation (`M_s x M_1`, row-stochastic) and broadcast (`M_1 x M_s`,
/// one-hot rows) matrices for one scale, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleMap {
    pub nodes: usize,
    pub joints: usize,
    pub aggregate: Vec<f64>,
    pub broadcast: Vec<f64>,
}

impl ScaleMap {
    pub fn aggregate_tensor(&self) -> Tensor {
        Tensor::new(self.aggregate.clone(), &[self.nodes, self.joints]).expect("consistent scale map")
    }

    pub fn broadcast_tensor(&self) -> Tensor {
        Tensor::new(self.broadcast.clone(), &[self.joints, self.nodes]).expect("consistent scale map")
    }
}

pub fn build_scale_maps(spec: &ScaleSpec, joints: usize) -> Result<ScaleMap> {
    spec.validate(joints)?;
    let nodes = spec.nodes();
    let mut aggregate = vec![0.0; nodes * joints];
    let mut broadcast = vec![0.0; joints * nodes];
    for (k, group) in spec.groups.iter().enumerate() {
        let w = 1.0 / group.len() as f64;
        for &j in group {
            aggregate[k * joints + j] = w;
            broadcast[j * nodes + k] = 1.0;
        }
    }
    Ok(ScaleMap {
        nodes,
        joints,
        aggregate,
        broadcast,
    })
}

/// Symmetric 0/1 skeleton adjacency with an empty diagonal.
pub fn skeleton_adjacency(spec: &ScaleSpec) -> Result<Vec<f64>> {
    let n = spec.nodes();
    let mut a = vec![0.0; n * n];
    for &[i, j] in &spec.edges {
        if i >= n || j >= n {
            return Err(Error::Validation(format!(
                "scale {}: edge ({i}, {j}) outside 0..{n}",
                spec.id
            )));
        }
        if i == j {
            return Err(Error::Validation(format!("scale {}: self-loop on node {i}", spec.id)));
        }
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    Ok(a)
}

/// Skeleton adjacency as a trainable `M_s x M_s` parameter.
pub fn init_adjacency(spec: &ScaleSpec) -> Result<Tensor> {
    let n = spec.nodes();
    Tensor::param(skeleton_adjacency(spec)?, &[n, n])
}

/// `frames x joints x 3` exponential-map angles in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub frames: usize,
    pub joints: usize,
    /// Row-major `[frame][joint][axis]`.
    pub values: Vec<f64>,
    pub frame_interval_ms: f64,
}

impl MotionSequence {
    pub fn new(values: Vec<f64>, frames: usize, joints: usize, frame_interval_ms: f64) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Contract("motion sequence needs at least one frame and joint".into()));
        }
        if values.len() != frames * joints * 3 {
            return Err(Error::dim(
                "motion_sequence",
                format!("{} values for {frames} frames x {joints} joints x 3", values.len()),
            ));
        }
        if !(frame_interval_ms > 0.0) {
            return Err(Error::Contract(format!("frame interval {frame_interval_ms} must be positive")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite value at flat index {i}")));
        }
        Ok(MotionSequence {
            frames,
            joints,
            values,
            frame_interval_ms,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.joints * 3;
        &self.values[t * w..(t + 1) * w]
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Result<MotionSequence> {
        if len == 0 || start + len > self.frames {
            return Err(Error::Contract(format!(
                "slice {start}..{} of a {}-frame sequence",
                start + len,
                self.frames
            )));
        }
        let w = self.joints * 3;
        MotionSequence::new(
            self.values[start * w..(start + len) * w].to_vec(),
            len,
            self.joints,
            self.frame_interval_ms,
        )
    }
}
