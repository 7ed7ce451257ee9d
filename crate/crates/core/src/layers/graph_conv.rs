//! Single-scale graph convolution block (SS-GCB).

use crate::error::{Error, Result};
use crate::skeleton::{init_adjacency, ScaleSpec};
use crate::tensor::{conv_out_len, Rng64, Tensor};

use super::basic::{init_weight, BatchNorm, ForwardCtx, TemporalConv};
use super::{join, Module, Named};

/// Spatial part of an SS-GCB: `A X W + X U` on `[B, T, M, C]` features.
pub struct GraphConv {
    /// `[M, M]`, trainable unless frozen.
    pub adj: Tensor,
    /// `[C, C']`
    pub w: Tensor,
    /// `[C, C']`
    pub u: Tensor,
}

impl GraphConv {
    pub fn new(adj: Tensor, input: usize, output: usize, rng: &mut Rng64) -> Self {
        GraphConv {
            adj,
            w: init_weight(&[input, output], input, rng),
            u: init_weight(&[input, output], input, rng),
        }
    }

    pub fn nodes(&self) -> usize {
        self.adj.shape()[0]
    }

    /// Pre-activation `A X W + X U`; `x` is `[..., M, C]`.
    pub fn linear(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        let n = shape.len();
        if n < 2 || shape[n - 2] != self.nodes() || shape[n - 1] != self.w.shape()[0] {
            return Err(Error::dim(
                "graph_conv",
                format!(
                    "features {:?} vs adjacency {:?} and weight {:?}",
                    shape,
                    self.adj.shape(),
                    self.w.shape()
                ),
            ));
        }
        let (m, c) = (shape[n - 2], shape[n - 1]);
        let groups = x.numel() / (m * c);
        let flat = x.reshape(&[groups, m, c])?;
        let mixed = self.adj.bmm(&flat.matmul(&self.w)?)?;
        let out = mixed.add(&flat.matmul(&self.u)?)?;
        let mut out_shape = shape;
        out_shape[n - 1] = self.w.shape()[1];
        out.reshape(&out_shape)
    }
}

/// `ReLU(A X W + X U)`.
pub fn graph_conv(x: &Tensor, layer: &GraphConv) -> Result<Tensor> {
    Ok(layer.linear(x)?.relu())
}

impl Module for GraphConv {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        out.push(Named::param(join(prefix, "adj"), &self.adj));
        out.push(Named::param(join(prefix, "w"), &self.w));
        out.push(Named::param(join(prefix, "u"), &self.u));
    }
}

#[derive(Clone, Debug)]
pub struct SsGcbConfig {
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub freeze_adjacency: bool,
}

/// Graph conv, BN, ReLU, then temporal conv, BN, dropout, ReLU.
pub struct SsGcb {
    pub graph: GraphConv,
    pub bn_graph: BatchNorm,
    pub temporal: TemporalConv,
    pub bn_time: BatchNorm,
    pub dropout: f64,
}

impl SsGcb {
    pub fn new(scale: &ScaleSpec, cfg: &SsGcbConfig, rng: &mut Rng64) -> Result<Self> {
        let adj = init_adjacency(scale)?;
        let adj = if cfg.freeze_adjacency { adj.detach() } else { adj };
        Ok(SsGcb {
            graph: GraphConv::new(adj, cfg.input, cfg.output, rng),
            bn_graph: BatchNorm::new(cfg.output, cfg.bn_momentum),
            temporal: TemporalConv::new(cfg.output, cfg.output, cfg.kernel, cfg.stride, rng),
            bn_time: BatchNorm::new(cfg.output, cfg.bn_momentum),
            dropout: cfg.dropout,
        })
    }

    /// Temporal length produced for an input of `len` frames.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        conv_out_len(len, self.temporal.kernel(), self.temporal.stride, self.temporal.pad)
    }

    /// `[B, T, M, C] -> [B, T', M, C']`.
    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let t = x.shape().get(1).copied().unwrap_or(0);
        if x.ndim() != 4 || self.output_len(t).is_none() {
            return Err(Error::config(
                "temporal_length",
                format!("input {:?} too short for the temporal convolution", x.shape()),
            ));
        }
        let spatial = self.bn_graph.forward(&self.graph.linear(x)?, ctx)?.relu();
        let temporal = self.bn_time.forward(&self.temporal.forward(&spatial)?, ctx)?;
        Ok(ctx.dropout(temporal, self.dropout)?.relu())
    }
}

impl Module for SsGcb {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        self.graph.visit(&join(prefix, "graph"), out);
        self.bn_graph.visit(&join(prefix, "bn_graph"), out);
        self.temporal.visit(&join(prefix, "temporal"), out);
        self.bn_time.visit(&join(prefix, "bn_time"), out);
    }
}
