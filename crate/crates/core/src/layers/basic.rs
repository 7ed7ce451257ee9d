use crate::error::Result;
use crate::tensor::{BatchNormState, Rng64, Tensor};

use super::{join, Module, Named};

/// Forward-pass mode plus the generator used for dropout masks.
pub struct ForwardCtx<'a> {
    pub train: bool,
    pub rng: &'a mut Rng64,
}

impl<'a> ForwardCtx<'a> {
    pub fn train(rng: &'a mut Rng64) -> Self {
        ForwardCtx { train: true, rng }
    }

    pub fn eval(rng: &'a mut Rng64) -> Self {
        ForwardCtx { train: false, rng }
    }

    /// Dropout in training mode, identity otherwise.
    pub fn dropout(&mut self, x: Tensor, p: f64) -> Result<Tensor> {
        if self.train && p > 0.0 {
            x.dropout(p, self.rng)
        } else {
            Ok(x)
        }
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` trainable weights.
pub fn init_weight(shape: &[usize], fan_in: usize, rng: &mut Rng64) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng).with_requires_grad(true)
}

pub fn zero_bias(n: usize) -> Tensor {
    Tensor::zeros(&[n]).with_requires_grad(true)
}

/// `y = x W + b` on the last axis.
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng64) -> Self {
        Linear {
            weight: init_weight(&[input, output], input, rng),
            bias: zero_bias(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, &self.bias)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        out.push(Named::param(join(prefix, "weight"), &self.weight));
        out.push(Named::param(join(prefix, "bias"), &self.bias));
    }
}

/// Per-channel batch normalization over the last axis.
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub state: BatchNormState,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], 1.0).with_requires_grad(true),
            beta: zero_bias(channels),
            state: BatchNormState::new(channels, momentum),
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx<'_>) -> Result<Tensor> {
        x.batch_norm(&self.gamma, &self.beta, &self.state, ctx.train)
    }
}

impl Module for BatchNorm {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        out.push(Named::param(join(prefix, "gamma"), &self.gamma));
        out.push(Named::param(join(prefix, "beta"), &self.beta));
        out.push(Named::buffer(join(prefix, "running_mean"), &self.state.running_mean));
        out.push(Named::buffer(join(prefix, "running_var"), &self.state.running_var));
    }
}

/// Zero-padded per-node convolution along time.
pub struct TemporalConv {
    /// `[kernel, in, out]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl TemporalConv {
    pub fn new(input: usize, output: usize, kernel: usize, stride: usize, rng: &mut Rng64) -> Self {
        TemporalConv {
            weight: init_weight(&[kernel, input, output], kernel * input, rng),
            bias: zero_bias(output),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv_time(&self.weight, &self.bias, self.stride, self.pad)
    }
}

impl Module for TemporalConv {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        out.push(Named::param(join(prefix, "weight"), &self.weight));
        out.push(Named::param(join(prefix, "bias"), &self.bias));
    }
}
