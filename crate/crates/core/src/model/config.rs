//! Model, training and skeleton settings, serialized as TOML.
//!
//! Every field has a default, so a config file only needs to list what it
//! changes. [`ModelConfig::resolve`] inlines the skeleton and validates all
//! fields; the resolved text is what checkpoints embed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSpec;
use crate::tensor::{conv_out_len, optim::AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Scale ids in chain order; the joint scale `1` comes first.
    pub scales: Vec<u8>,
    pub n_mgcu: usize,
    /// 1-based MGCU indices followed by cross-scale fusion.
    pub csfb_positions: Vec<usize>,
    /// Output channels of each MGCU.
    pub channels: Vec<usize>,
    /// Temporal stride of each MGCU.
    pub strides: Vec<usize>,
    pub kernel: usize,
    /// Weight of the coarser scales in the final fusion.
    pub lambda: f64,
    /// Highest difference order fed to the model.
    pub beta_max: usize,
    pub freeze_adjacency: bool,
    /// Observed frames per window.
    pub input_frames: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    /// Embedding width inside cross-scale fusion blocks.
    pub csfb_hidden: usize,
    /// Fuse coarse-to-fine as well as fine-to-coarse.
    pub csfb_bidirectional: bool,
    /// Normalize cross-scale graphs over source nodes (rows) rather than
    /// destination nodes (columns).
    pub csfb_normalize_over_sources: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            scales: vec![1, 2, 3],
            n_mgcu: 4,
            csfb_positions: vec![1, 2],
            channels: vec![32, 64, 128, 256],
            strides: vec![1, 2, 2, 2],
            kernel: 5,
            lambda: 0.6,
            beta_max: 2,
            freeze_adjacency: false,
            input_frames: 49,
            dropout: 0.1,
            bn_momentum: 0.1,
            csfb_hidden: 256,
            csfb_bidirectional: true,
            csfb_normalize_over_sources: true,
        }
    }
}

impl EncoderConfig {
    /// Input channels per joint: three angles per difference order.
    pub fn input_channels(&self) -> usize {
        3 * (self.beta_max + 1)
    }

    /// Temporal length after each MGCU.
    pub fn stage_lengths(&self) -> Option<Vec<usize>> {
        let mut t = self.input_frames;
        let mut out = Vec::with_capacity(self.strides.len());
        for &s in &self.strides {
            t = conv_out_len(t, self.kernel, s, self.kernel / 2)?;
            out.push(t);
        }
        Some(out)
    }

    pub fn output_channels(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Frames to predict.
    pub horizon: usize,
    /// G-GRU state width; must equal the encoder's last channel count.
    pub hidden: usize,
    /// Hidden width of the displacement head.
    pub head_hidden: usize,
    /// Replace the hidden-state graph propagation by the identity.
    pub plain_gru: bool,
    /// Probability of feeding the ground-truth frame back during training.
    pub teacher_forcing: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            horizon: 10,
            hidden: 256,
            head_hidden: 256,
            plain_gru: false,
            teacher_forcing: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub adam: AdamConfig,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Offset between consecutive training windows.
    pub window_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 32,
            clip_norm: 0.5,
            adam: AdamConfig::default(),
            checkpoint_every: 0,
            window_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seed: u64,
    /// Skeleton definition file, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton_file: Option<PathBuf>,
    /// Inline skeleton; takes precedence over `skeleton_file`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonSpec>,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seed: 0,
            skeleton_file: None,
            skeleton: None,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn bad(field: &str, msg: impl Into<String>) -> Error {
    Error::config(field, msg.into())
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<ModelConfig> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Reads a config file and resolves a relative `skeleton_file` against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<ModelConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ModelConfig::from_toml(&text)?;
        if let (Some(file), Some(dir)) = (&cfg.skeleton_file, path.parent()) {
            if file.is_relative() {
                cfg.skeleton_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Inlines the skeleton (bundled default when none is given) and
    /// validates every field.
    pub fn resolve(mut self) -> Result<ModelConfig> {
        if self.skeleton.is_none() {
            self.skeleton = Some(match &self.skeleton_file {
                Some(path) => SkeletonSpec::load(path).map_err(|e| bad("skeleton_file", e.to_string()))?,
                None => SkeletonSpec::default_h36m(),
            });
        }
        self.skeleton_file = None;
        self.validate()?;
        Ok(self)
    }

    /// The inline skeleton of a resolved config.
    pub fn skeleton(&self) -> &SkeletonSpec {
        self.skeleton.as_ref().expect("config has been resolved")
    }

    pub fn validate(&self) -> Result<()> {
        let skeleton = self
            .skeleton
            .as_ref()
            .ok_or_else(|| bad("skeleton", "config not resolved"))?;
        skeleton.validate().map_err(|e| bad("skeleton", e.to_string()))?;
        let e = &self.encoder;

        if e.scales.first() != Some(&1) {
            return Err(bad("encoder.scales", "must start with the joint scale 1"));
        }
        for (i, id) in e.scales.iter().enumerate() {
            if e.scales[..i].contains(id) {
                return Err(bad("encoder.scales", format!("scale {id} listed twice")));
            }
            let spec = skeleton
                .scale(*id)
                .ok_or_else(|| bad("encoder.scales", format!("scale {id} not defined by the skeleton")))?;
            if *id == 1 && spec.nodes() != skeleton.joints {
                return Err(bad("encoder.scales", "scale 1 must have one node per joint"));
            }
        }
        if !(1..=6).contains(&e.n_mgcu) {
            return Err(bad("encoder.n_mgcu", format!("{} not in 1..=6", e.n_mgcu)));
        }
        if e.channels.len() != e.n_mgcu {
            return Err(bad(
                "encoder.channels",
                format!("{} entries for {} MGCUs", e.channels.len(), e.n_mgcu),
            ));
        }
        if e.channels.contains(&0) {
            return Err(bad("encoder.channels", "channel counts must be positive"));
        }
        if e.strides.len() != e.n_mgcu {
            return Err(bad(
                "encoder.strides",
                format!("{} entries for {} MGCUs", e.strides.len(), e.n_mgcu),
            ));
        }
        if e.strides.contains(&0) {
            return Err(bad("encoder.strides", "strides must be positive"));
        }
        if e.kernel == 0 || e.kernel % 2 == 0 {
            return Err(bad("encoder.kernel", format!("{} must be odd", e.kernel)));
        }
        for &p in &e.csfb_positions {
            if p == 0 || p > e.n_mgcu {
                return Err(bad(
                    "encoder.csfb_positions",
                    format!("position {p} outside 1..={}", e.n_mgcu),
                ));
            }
        }
        if !(e.lambda >= 0.0 && e.lambda.is_finite()) {
            return Err(bad("encoder.lambda", format!("{} must be finite and non-negative", e.lambda)));
        }
        if e.beta_max > 2 {
            return Err(bad("encoder.beta_max", format!("{} not in {{0, 1, 2}}", e.beta_max)));
        }
        if !(0.0..1.0).contains(&e.dropout) {
            return Err(bad("encoder.dropout", format!("{} not in [0, 1)", e.dropout)));
        }
        if !(e.bn_momentum > 0.0 && e.bn_momentum <= 1.0) {
            return Err(bad("encoder.bn_momentum", format!("{} not in (0, 1]", e.bn_momentum)));
        }
        if e.csfb_hidden == 0 {
            return Err(bad("encoder.csfb_hidden", "must be positive"));
        }
        // With padding K / 2 every non-empty sequence survives a convolution,
        // so this only rejects an empty window.
        e.stage_lengths()
            .ok_or_else(|| bad("encoder.input_frames", format!("{} frames vanish in the encoder", e.input_frames)))?;

        let d = &self.decoder;
        if d.horizon == 0 {
            return Err(bad("decoder.horizon", "must be at least 1"));
        }
        if d.hidden != e.output_channels() {
            return Err(bad(
                "decoder.hidden",
                format!("{} differs from the encoder output width {}", d.hidden, e.output_channels()),
            ));
        }
        if d.head_hidden == 0 {
            return Err(bad("decoder.head_hidden", "must be positive"));
        }
        if !(0.0..=1.0).contains(&d.teacher_forcing) {
            return Err(bad("decoder.teacher_forcing", format!("{} not in [0, 1]", d.teacher_forcing)));
        }
        if e.input_frames < 3 {
            return Err(bad("encoder.input_frames", "the decoder needs three observed frames"));
        }

        let t = &self.train;
        if t.batch_size == 0 {
            return Err(bad("train.batch_size", "must be positive"));
        }
        if !(t.clip_norm > 0.0) {
            return Err(bad("train.clip_norm", format!("{} must be positive", t.clip_norm)));
        }
        if !(t.adam.lr >= 0.0 && t.adam.lr.is_finite()) {
            return Err(bad("train.adam.lr", format!("{} must be finite and non-negative", t.adam.lr)));
        }
        if !(0.0..1.0).contains(&t.adam.beta1) || !(0.0..1.0).contains(&t.adam.beta2) {
            return Err(bad("train.adam", "betas must lie in [0, 1)"));
        }
        if t.window_stride == 0 {
            return Err(bad("train.window_stride", "must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the serialized config.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
