//! Autoregressive residual decoder built around the G-GRU.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, ForwardCtx, GGruCell, Linear, Module, Named};
use crate::skeleton::{init_adjacency, ScaleSpec};
use crate::tensor::{Rng64, Tensor};

use super::config::DecoderConfig;

pub struct Decoder {
    pub cfg: DecoderConfig,
    pub beta_max: usize,
    pub cell: GGruCell,
    pub head_hidden: Linear,
    pub head_out: Linear,
}

impl Decoder {
    pub fn new(cfg: &DecoderConfig, joints: &ScaleSpec, beta_max: usize, rng: &mut Rng64) -> Result<Self> {
        let input = 3 * (beta_max + 1);
        Ok(Decoder {
            cfg: cfg.clone(),
            beta_max,
            cell: GGruCell::new(init_adjacency(joints)?, input, cfg.hidden, cfg.plain_gru, rng),
            head_hidden: Linear::new(cfg.hidden, cfg.head_hidden, rng),
            head_out: Linear::new(cfg.head_hidden, 3, rng),
        })
    }

    /// Zeroes the displacement head so every prediction repeats the last
    /// observed pose.
    pub fn zero_head(&self) {
        for t in [
            &self.head_hidden.weight,
            &self.head_hidden.bias,
            &self.head_out.weight,
            &self.head_out.bias,
        ] {
            t.set_data(vec![0.0; t.numel()]).expect("same length");
        }
    }

    /// `[x, D1 x, D2 x]` truncated to `beta_max`, from the three most recent
    /// frames (oldest first), each `[B, M, 3]`.
    fn step_input(&self, buffer: &[Tensor; 3]) -> Result<Tensor> {
        let [a, b, c] = buffer;
        let mut parts = vec![c.clone()];
        if self.beta_max >= 1 {
            let d1 = c.sub(b)?;
            if self.beta_max >= 2 {
                let d2 = d1.sub(&b.sub(a)?)?;
                parts.push(d1);
                parts.push(d2);
            } else {
                parts.push(d1);
            }
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat(&refs, 2)
    }

    /// Predicts `horizon` frames `[B, T_f, M, 3]`.
    ///
    /// `tail` holds the last three observed frames `[B, 3, M, 3]`; `state`
    /// is the encoder output `[B, M, hidden]`. During training, `target`
    /// enables teacher forcing at the configured rate.
    pub fn forward(
        &self,
        tail: &Tensor,
        state: &Tensor,
        horizon: usize,
        target: Option<&Tensor>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Tensor> {
        if horizon == 0 {
            return Err(Error::config("decoder.horizon", "must be at least 1"));
        }
        let (b, m) = match *tail.shape() {
            [b, 3, m, 3] => (b, m),
            _ => {
                return Err(Error::Contract(format!(
                    "decoder needs the last 3 observed frames as [B, 3, M, 3], got {:?}",
                    tail.shape()
                )))
            }
        };
        let frame = |x: &Tensor, t: usize| -> Result<Tensor> { x.narrow(1, t, 1)?.reshape(&[b, m, 3]) };
        let mut buffer = [frame(tail, 0)?, frame(tail, 1)?, frame(tail, 2)?];
        let mut h = state.clone();
        let mut outputs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let input = self.step_input(&buffer)?;
            h = self.cell.step(&input, &h)?;
            let disp = self.head_out.forward(&self.head_hidden.forward(&h)?.relu())?;
            let next = buffer[2].add(&disp)?;
            outputs.push(next.reshape(&[b, 1, m, 3])?);
            let fed = match target {
                Some(y) if ctx.train && self.cfg.teacher_forcing > 0.0 => {
                    if ctx.rng.gen::<f64>() < self.cfg.teacher_forcing {
                        frame(y, t)?.detach()
                    } else {
                        next
                    }
                }
                _ => next,
            };
            let [_, b1, b2] = buffer;
            buffer = [b1, b2, fed];
        }
        let refs: Vec<&Tensor> = outputs.iter().collect();
        Tensor::concat(&refs, 1)
    }
}

impl Module for Decoder {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        self.cell.visit(&join(prefix, "ggru"), out);
        self.head_hidden.visit(&join(prefix, "head_hidden"), out);
        self.head_out.visit(&join(prefix, "head_out"), out);
    }
}
