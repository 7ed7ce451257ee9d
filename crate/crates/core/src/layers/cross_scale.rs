//! Cross-scale fusion block (CS-FB): infers a dense graph between the body
//! parts of two scales from their features and passes messages along it.

use crate::error::{Error, Result};
use crate::tensor::{conv_out_len, Rng64, Tensor};

use super::basic::{BatchNorm, ForwardCtx, Linear, TemporalConv};
use super::{init_weight, join, Module, Named};

#[derive(Clone, Debug)]
pub struct CsFbConfig {
    pub channels: usize,
    /// Temporal length of the features fed to the block.
    pub frames: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    /// Normalize each destination row over sources (default) or each
    /// source column over destinations.
    pub normalize_over_sources: bool,
}

/// Pairwise relation network `sum_j f([p_i, p_j - p_i])`.
///
/// The first layer is applied to the pair without materializing it: with
/// the weight split as `[Wa; Wb]`, `[p_i, p_j - p_i] W = p_i (Wa - Wb) + p_j Wb`.
pub struct PairMlp {
    /// `[2P, H]`
    pub first: Linear,
    pub second: Linear,
    pub bn: BatchNorm,
    pub dropout: f64,
}

impl PairMlp {
    pub fn new(input: usize, hidden: usize, dropout: f64, bn_momentum: f64, rng: &mut Rng64) -> Self {
        PairMlp {
            first: Linear::new(2 * input, hidden, rng),
            second: Linear::new(hidden, hidden, rng),
            bn: BatchNorm::new(hidden, bn_momentum),
            dropout,
        }
    }

    /// `[B, M, P] -> [B, M, H]`.
    pub fn forward(&self, p: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let (b, m, width) = match *p.shape() {
            [b, m, w] => (b, m, w),
            _ => return Err(Error::dim("pair_mlp", format!("expected [B, M, P], got {:?}", p.shape()))),
        };
        if 2 * width != self.first.input_dim() {
            return Err(Error::dim(
                "pair_mlp",
                format!("feature width {width} vs first layer {:?}", self.first.weight.shape()),
            ));
        }
        let h = self.first.output_dim();
        let wa = self.first.weight.narrow(0, 0, width)?;
        let wb = self.first.weight.narrow(0, width, width)?;
        let own = p.matmul(&wa.sub(&wb)?)?.add_bias(&self.first.bias)?;
        let other = p.matmul(&wb)?;
        let pairs = ctx.dropout(own.outer_add_relu(&other)?, self.dropout)?;
        let pairs = self.second.forward(&pairs.reshape(&[b * m * m, h])?)?.relu();
        let pairs = self.bn.forward(&pairs, ctx)?;
        pairs.reshape(&[b, m, m, h])?.sum_axis(2)
    }
}

impl Module for PairMlp {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        self.first.visit(&join(prefix, "first"), out);
        self.second.visit(&join(prefix, "second"), out);
        self.bn.visit(&join(prefix, "bn"), out);
    }
}

/// Per-scale embedding path: temporal compression, relation network and
/// the output MLP `g([proj(p), r])`.
pub struct ScaleEmbedding {
    pub compress: TemporalConv,
    pub proj: Linear,
    pub relation: PairMlp,
    pub g1: Linear,
    pub g2: Linear,
    pub bn: BatchNorm,
    pub dropout: f64,
}

impl ScaleEmbedding {
    fn new(cfg: &CsFbConfig, compressed: usize, rng: &mut Rng64) -> Self {
        let width = compressed * cfg.channels;
        ScaleEmbedding {
            compress: TemporalConv::new(cfg.channels, cfg.channels, cfg.kernel, 2, rng),
            proj: Linear::new(width, cfg.hidden, rng),
            relation: PairMlp::new(width, cfg.hidden, cfg.dropout, cfg.bn_momentum, rng),
            g1: Linear::new(2 * cfg.hidden, cfg.hidden, rng),
            g2: Linear::new(cfg.hidden, cfg.hidden, rng),
            bn: BatchNorm::new(cfg.hidden, cfg.bn_momentum),
            dropout: cfg.dropout,
        }
    }

    /// `[B, T, M, C] -> [B, M, H]`.
    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let compressed = self.compress.forward(x)?;
        let (b, t, m, c) = match *compressed.shape() {
            [b, t, m, c] => (b, t, m, c),
            _ => unreachable!("conv_time keeps rank 4"),
        };
        let p = compressed.permute(&[0, 2, 1, 3])?.reshape(&[b, m, t * c])?;
        let r = self.relation.forward(&p, ctx)?;
        let joint = Tensor::concat(&[&self.proj.forward(&p)?, &r], 2)?;
        let h = ctx.dropout(self.g1.forward(&joint)?.relu(), self.dropout)?;
        let h = self.g2.forward(&h)?.relu();
        self.bn.forward(&h, ctx)
    }
}

impl Module for ScaleEmbedding {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        self.compress.visit(&join(prefix, "compress"), out);
        self.proj.visit(&join(prefix, "proj"), out);
        self.relation.visit(&join(prefix, "relation"), out);
        self.g1.visit(&join(prefix, "g1"), out);
        self.g2.visit(&join(prefix, "g2"), out);
        self.bn.visit(&join(prefix, "bn"), out);
    }
}

/// Fusion from a source scale into a destination scale.
pub struct CsFb {
    pub src: ScaleEmbedding,
    pub dst: ScaleEmbedding,
    /// `[C, C]`
    pub w_fuse: Tensor,
    pub normalize_over_sources: bool,
}

impl CsFb {
    pub fn new(cfg: &CsFbConfig, rng: &mut Rng64) -> Result<Self> {
        let compressed = conv_out_len(cfg.frames, cfg.kernel, 2, cfg.kernel / 2).ok_or_else(|| {
            Error::config(
                "cross_scale",
                format!("{} frames too short for kernel {}", cfg.frames, cfg.kernel),
            )
        })?;
        Ok(CsFb {
            src: ScaleEmbedding::new(cfg, compressed, rng),
            dst: ScaleEmbedding::new(cfg, compressed, rng),
            w_fuse: init_weight(&[cfg.channels, cfg.channels], cfg.channels, rng),
            normalize_over_sources: cfg.normalize_over_sources,
        })
    }

    /// Normalized cross-scale graph `[B, M_dst, M_src]`.
    pub fn infer_cross_graph(&self, x_src: &Tensor, x_dst: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let h_src = self.src.forward(x_src, ctx)?;
        let h_dst = self.dst.forward(x_dst, ctx)?;
        let logits = h_dst.bmm(&h_src.transpose_last()?)?;
        if self.normalize_over_sources {
            Ok(logits.softmax_rows())
        } else {
            logits.transpose_last()?.softmax_rows().transpose_last()
        }
    }

    /// Message `A X_src W_F` carried into the destination scale, `[B, T, M_dst, C]`.
    pub fn message(&self, x_src: &Tensor, graph: &Tensor) -> Result<Tensor> {
        let (b, t, m_src, c) = match *x_src.shape() {
            [b, t, m, c] => (b, t, m, c),
            _ => return Err(Error::dim("cross_scale", format!("expected rank 4, got {:?}", x_src.shape()))),
        };
        let m_dst = graph.shape().get(1).copied().unwrap_or(0);
        if graph.shape() != [b, m_dst, m_src] {
            return Err(Error::dim(
                "cross_scale",
                format!("graph {:?} vs source {:?}", graph.shape(), x_src.shape()),
            ));
        }
        // Frames are batch-major, so bmm pairs frame g with graph g / T.
        let flat = x_src.reshape(&[b * t, m_src, c])?;
        graph.bmm(&flat)?.matmul(&self.w_fuse)?.reshape(&[b, t, m_dst, c])
    }

    /// `X_dst + A X_src W_F` with the graph inferred from both inputs.
    pub fn forward(&self, x_src: &Tensor, x_dst: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let graph = self.infer_cross_graph(x_src, x_dst, ctx)?;
        x_dst.add(&self.message(x_src, &graph)?)
    }
}

impl Module for CsFb {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        self.src.visit(&join(prefix, "src"), out);
        self.dst.visit(&join(prefix, "dst"), out);
        out.push(Named::param(join(prefix, "w_fuse"), &self.w_fuse));
    }
}
