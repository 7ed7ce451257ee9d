//! Encoder-decoder motion predictor, its loss and training loop, and
//! checkpoint persistence.

pub mod config;
pub mod decoder;
pub mod encoder;

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;

pub use config::{DecoderConfig, EncoderConfig, ModelConfig, TrainConfig};
pub use decoder::Decoder;
pub use encoder::{Encoder, EncoderTrace, FusionPair, Mgcu};

use crate::error::{Error, Result};
use crate::layers::{join, ForwardCtx, Module, Named, TensorKind};
use crate::tensor::checkpoint::{Checkpoint, NamedArray, OptimizerSnapshot};
use crate::tensor::optim::{clip_global_norm, global_grad_norm, AdamState, Moments};
use crate::tensor::{no_grad, tape, Rng64, Tensor};

/// Independent generator streams derived from one seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const DATA: u64 = 3;
}

pub fn rng_stream(seed: u64, stream: u64) -> Rng64 {
    let mut rng = Rng64::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Batch mean of the per-sample summed absolute error.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() || pred.ndim() == 0 {
        return Err(Error::dim(
            "l1_loss",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let batch = pred.shape()[0] as f64;
    Ok(pred.sub(target)?.abs().sum_all().scale(1.0 / batch))
}

pub struct Dmgnn {
    /// Resolved configuration the model was built from.
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Dmgnn {
    /// Builds a freshly initialized model from a config (resolved here if
    /// it is not already).
    pub fn new(config: &ModelConfig) -> Result<Dmgnn> {
        let config = config.clone().resolve()?;
        let mut rng = rng_stream(config.seed, streams::INIT);
        let skeleton = config.skeleton().clone();
        let encoder = Encoder::new(&config.encoder, &skeleton, &mut rng)?;
        let joint_scale = skeleton.scale(1).expect("validated");
        let decoder = Decoder::new(&config.decoder, joint_scale, config.encoder.beta_max, &mut rng)?;
        Ok(Dmgnn {
            config,
            encoder,
            decoder,
        })
    }

    pub fn joints(&self) -> usize {
        self.encoder.joints
    }

    pub fn input_frames(&self) -> usize {
        self.config.encoder.input_frames
    }

    pub fn horizon(&self) -> usize {
        self.config.decoder.horizon
    }

    /// `[B, T_h, M, 3] -> [B, horizon, M, 3]`.
    pub fn forward(
        &self,
        input: &Tensor,
        horizon: usize,
        target: Option<&Tensor>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Tensor> {
        let state = self.encoder.forward(input, ctx)?;
        let t = input.shape()[1];
        let tail = input.detach().narrow(1, t - 3, 3)?;
        self.decoder.forward(&tail, &state, horizon, target, ctx)
    }

    /// Eval-mode prediction without recording gradients.
    pub fn predict(&self, input: &Tensor, horizon: usize) -> Result<Tensor> {
        let mut rng = Rng64::seed_from_u64(0);
        no_grad(|| self.forward(input, horizon, None, &mut ForwardCtx::eval(&mut rng)))
    }

    /// Trainable parameters with their names, in visiting order.
    pub fn trainable_named(&self) -> Vec<(String, Tensor)> {
        self.named_tensors("")
            .into_iter()
            .filter(|n| n.kind == TensorKind::Param && n.tensor.requires_grad())
            .map(|n| (n.name, n.tensor))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable_named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn to_checkpoint(&self, optimizer: Option<&AdamState>) -> Checkpoint {
        let tensors = self
            .named_tensors("")
            .into_iter()
            .map(|n| NamedArray {
                name: n.name,
                shape: n.tensor.shape().to_vec(),
                values: n.tensor.to_vec(),
            })
            .collect();
        let optimizer = optimizer.map(|opt| OptimizerSnapshot {
            step: opt.step,
            config: opt.config,
            entries: self
                .trainable_named()
                .into_iter()
                .map(|(name, _)| name)
                .zip(opt.moments.iter().cloned())
                .collect(),
        });
        Checkpoint {
            config: self.config.to_toml(),
            tensors,
            optimizer,
        }
    }

    /// Rebuilds the model described by a checkpoint's embedded config and
    /// loads every tensor into it. Also returns the optimizer state if the
    /// checkpoint carries one.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Dmgnn, Option<AdamState>)> {
        let config = ModelConfig::from_toml(&ckpt.config)
            .map_err(|e| Error::Load(format!("embedded config: {e}")))?;
        let model = Dmgnn::new(&config).map_err(|e| Error::Load(format!("embedded config: {e}")))?;
        model.load_tensors(ckpt)?;
        let optimizer = match &ckpt.optimizer {
            None => None,
            Some(snap) => Some(model.restore_optimizer(snap)?),
        };
        Ok((model, optimizer))
    }

    /// Copies checkpoint values into this model; names and shapes must
    /// match exactly.
    pub fn load_tensors(&self, ckpt: &Checkpoint) -> Result<()> {
        let stored: HashMap<&str, &NamedArray> = ckpt.tensors.iter().map(|a| (a.name.as_str(), a)).collect();
        let own = self.named_tensors("");
        if own.len() != stored.len() {
            return Err(Error::Load(format!(
                "checkpoint holds {} tensors, model has {}",
                stored.len(),
                own.len()
            )));
        }
        for Named { name, tensor, .. } in &own {
            let arr = stored
                .get(name.as_str())
                .ok_or_else(|| Error::Load(format!("tensor `{name}` missing from checkpoint")))?;
            if arr.shape != tensor.shape() {
                return Err(Error::Load(format!(
                    "tensor `{name}`: checkpoint shape {:?}, model shape {:?}",
                    arr.shape,
                    tensor.shape()
                )));
            }
            tensor.set_data(arr.values.clone())?;
        }
        Ok(())
    }

    fn restore_optimizer(&self, snap: &OptimizerSnapshot) -> Result<AdamState> {
        let stored: HashMap<&str, &Moments> = snap.entries.iter().map(|(n, m)| (n.as_str(), m)).collect();
        let mut moments = Vec::new();
        for (name, t) in self.trainable_named() {
            let m = stored
                .get(name.as_str())
                .ok_or_else(|| Error::Load(format!("optimizer state for `{name}` missing")))?;
            if m.m.len() != t.numel() || m.v.len() != t.numel() {
                return Err(Error::Load(format!("optimizer state for `{name}` has the wrong length")));
            }
            moments.push((*m).clone());
        }
        Ok(AdamState {
            config: snap.config,
            step: snap.step,
            moments,
        })
    }

    pub fn save(&self, path: &Path, optimizer: Option<&AdamState>) -> Result<()> {
        self.to_checkpoint(optimizer).save(path)
    }

    pub fn load(path: &Path) -> Result<(Dmgnn, Option<AdamState>)> {
        Dmgnn::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Module for Dmgnn {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.decoder.visit(&join(prefix, "decoder"), out);
    }
}

/// Observed windows `[B, T_h, M, 3]` with their futures `[B, T_f, M, 3]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based step index.
    pub step: usize,
    /// Loss before the update.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor applied by clipping.
    pub clip_scale: f64,
}

pub struct Trainer {
    pub model: Dmgnn,
    pub optimizer: AdamState,
    params: Vec<Tensor>,
    rng: Rng64,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: Dmgnn) -> Trainer {
        let rng = rng_stream(model.config.seed, streams::TRAIN);
        let params: Vec<Tensor> = model.trainable_named().into_iter().map(|(_, t)| t).collect();
        let optimizer = AdamState::new(&params, model.config.train.adam);
        Trainer {
            model,
            optimizer,
            params,
            rng,
            step: 0,
        }
    }

    /// Continues from a restored optimizer state.
    pub fn resume(model: Dmgnn, optimizer: AdamState) -> Result<Trainer> {
        let mut trainer = Trainer::new(model);
        if optimizer.moments.len() != trainer.params.len() {
            return Err(Error::Load("optimizer state does not match the model".into()));
        }
        trainer.step = optimizer.step as usize;
        trainer.optimizer = optimizer;
        Ok(trainer)
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Forward, loss, backward, clipping and one Adam update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let step = self.step + 1;
        tape::clear();
        for p in &self.params {
            p.zero_grad();
        }
        let horizon = batch.target.shape().get(1).copied().unwrap_or(0);
        let mut ctx = ForwardCtx::train(&mut self.rng);
        let pred = self.model.forward(&batch.input, horizon, Some(&batch.target), &mut ctx)?;
        let loss = l1_loss(&pred, &batch.target)?;
        let value = loss.item();
        if !value.is_finite() {
            tape::clear();
            return Err(Error::Training {
                step,
                msg: format!("loss is {value}"),
            });
        }
        loss.backward()?;
        let grad_norm = global_grad_norm(&self.params);
        if !grad_norm.is_finite() {
            return Err(Error::Training {
                step,
                msg: format!("gradient norm is {grad_norm} at loss {value}"),
            });
        }
        let clip_scale = clip_global_norm(&self.params, self.model.config.train.clip_norm);
        self.optimizer.step(&self.params)?;
        self.step = step;
        Ok(StepReport {
            step,
            loss: value,
            grad_norm,
            clip_scale,
        })
    }

    /// Eval-mode loss on a batch.
    pub fn eval_loss(&self, batch: &Batch) -> Result<f64> {
        let horizon = batch.target.shape()[1];
        let pred = self.model.predict(&batch.input, horizon)?;
        Ok(l1_loss(&pred, &batch.target)?.item())
    }
}
