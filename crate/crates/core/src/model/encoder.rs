//! Multiscale encoder: stacked MGCUs with cross-scale fusion, final
//! weighted fusion onto the joints, one more joint-scale block and
//! temporal average pooling.

use crate::error::{Error, Result};
use crate::layers::{join, CsFb, CsFbConfig, ForwardCtx, Module, Named, SsGcb, SsGcbConfig};
use crate::skeleton::{build_scale_maps, difference_features, SkeletonSpec};
use crate::tensor::{Rng64, Tensor};

use super::config::EncoderConfig;

/// Fusion blocks between scale `k` and scale `k + 1` of the chain.
pub struct FusionPair {
    /// Fine to coarse.
    pub up: CsFb,
    /// Coarse to fine, absent when fusion is upward only.
    pub down: Option<CsFb>,
}

/// One multiscale graph computational unit.
pub struct Mgcu {
    /// One block per scale, in chain order.
    pub blocks: Vec<SsGcb>,
    /// One entry per adjacent scale pair when fusion is active here.
    pub fusion: Option<Vec<FusionPair>>,
}

/// Intermediate results of one encoder pass.
pub struct EncoderTrace {
    /// `[B, T, M_s, C]` per MGCU and scale, after fusion.
    pub stages: Vec<Vec<Tensor>>,
    /// Inferred cross-scale graphs `(mgcu, src scale id, dst scale id, [B, M_dst, M_src])`.
    pub cross_graphs: Vec<(usize, u8, u8, Tensor)>,
    /// Coarse branches broadcast to the joints, one per scale after the first.
    pub broadcast: Vec<Tensor>,
    /// Weighted sum entering the final block.
    pub fused: Tensor,
    /// Output of the final block, `[B, T', M, C]`.
    pub features: Tensor,
    /// Temporal mean of `features`, `[B, M, C]`.
    pub pooled: Tensor,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    pub joints: usize,
    /// Scale ids in chain order.
    pub scale_ids: Vec<u8>,
    /// `[M_s, M_1]` aggregation per scale.
    aggregate: Vec<Tensor>,
    /// `[M_1, M_s]` broadcast per scale.
    broadcast: Vec<Tensor>,
    pub mgcus: Vec<Mgcu>,
    pub final_block: SsGcb,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, skeleton: &SkeletonSpec, rng: &mut Rng64) -> Result<Self> {
        let joints = skeleton.joints;
        let specs: Vec<_> = cfg
            .scales
            .iter()
            .map(|&id| {
                skeleton
                    .scale(id)
                    .ok_or_else(|| Error::config("encoder.scales", format!("scale {id} not defined")))
            })
            .collect::<Result<_>>()?;
        let maps: Vec<_> = specs
            .iter()
            .map(|s| build_scale_maps(s, joints))
            .collect::<Result<_>>()?;
        let lengths = cfg
            .stage_lengths()
            .ok_or_else(|| Error::config("encoder.input_frames", "too short"))?;

        let mut mgcus = Vec::with_capacity(cfg.n_mgcu);
        let mut input = cfg.input_channels();
        for i in 0..cfg.n_mgcu {
            let block_cfg = SsGcbConfig {
                input,
                output: cfg.channels[i],
                kernel: cfg.kernel,
                stride: cfg.strides[i],
                dropout: cfg.dropout,
                bn_momentum: cfg.bn_momentum,
                freeze_adjacency: cfg.freeze_adjacency,
            };
            let blocks = specs
                .iter()
                .map(|s| SsGcb::new(s, &block_cfg, rng))
                .collect::<Result<Vec<_>>>()?;
            let fusion = if cfg.csfb_positions.contains(&(i + 1)) && specs.len() > 1 {
                let fuse_cfg = CsFbConfig {
                    channels: cfg.channels[i],
                    frames: lengths[i],
                    hidden: cfg.csfb_hidden,
                    kernel: cfg.kernel,
                    dropout: cfg.dropout,
                    bn_momentum: cfg.bn_momentum,
                    normalize_over_sources: cfg.csfb_normalize_over_sources,
                };
                let mut pairs = Vec::with_capacity(specs.len() - 1);
                for _ in 1..specs.len() {
                    let up = CsFb::new(&fuse_cfg, rng)?;
                    let down = if cfg.csfb_bidirectional {
                        Some(CsFb::new(&fuse_cfg, rng)?)
                    } else {
                        None
                    };
                    pairs.push(FusionPair { up, down });
                }
                Some(pairs)
            } else {
                None
            };
            mgcus.push(Mgcu { blocks, fusion });
            input = cfg.channels[i];
        }
        let last = cfg.output_channels();
        let final_block = SsGcb::new(
            specs[0],
            &SsGcbConfig {
                input: last,
                output: last,
                kernel: cfg.kernel,
                stride: 1,
                dropout: cfg.dropout,
                bn_momentum: cfg.bn_momentum,
                freeze_adjacency: cfg.freeze_adjacency,
            },
            rng,
        )?;
        Ok(Encoder {
            cfg: cfg.clone(),
            joints,
            scale_ids: cfg.scales.clone(),
            aggregate: maps.iter().map(|m| m.aggregate_tensor()).collect(),
            broadcast: maps.iter().map(|m| m.broadcast_tensor()).collect(),
            mgcus,
            final_block,
        })
    }

    /// Difference features `[B, T, M, 3 (beta_max + 1)]` of raw poses `[B, T, M, 3]`.
    pub fn input_features(&self, poses: &Tensor) -> Result<Tensor> {
        let (b, t, m) = self.check_input(poses)?;
        let data = poses.data();
        let per = t * m * 3;
        let mut out = Vec::with_capacity(b * per * (self.cfg.beta_max + 1));
        for s in 0..b {
            out.extend(difference_features(&data[s * per..(s + 1) * per], t, 3, self.cfg.beta_max)?);
        }
        Tensor::new(out, &[b, t, m, self.cfg.input_channels()])
    }

    fn check_input(&self, poses: &Tensor) -> Result<(usize, usize, usize)> {
        match *poses.shape() {
            [b, t, m, 3] if t == self.cfg.input_frames && m == self.joints => Ok((b, t, m)),
            _ => Err(Error::Contract(format!(
                "encoder expects [B, {}, {}, 3] poses, got {:?}",
                self.cfg.input_frames,
                self.joints,
                poses.shape()
            ))),
        }
    }

    /// Applies `matrix [P, Q]` to the node axis of `x [B, T, Q, C]`.
    fn map_nodes(matrix: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (b, t, q, c) = match *x.shape() {
            [b, t, q, c] => (b, t, q, c),
            _ => return Err(Error::dim("map_nodes", format!("expected rank 4, got {:?}", x.shape()))),
        };
        let p = matrix.shape()[0];
        matrix.bmm(&x.reshape(&[b * t, q, c])?)?.reshape(&[b, t, p, c])
    }

    /// Full pass returning every intermediate.
    pub fn forward_trace(&self, poses: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<EncoderTrace> {
        let x = self.input_features(poses)?;
        let mut feats: Vec<Tensor> = self
            .aggregate
            .iter()
            .enumerate()
            .map(|(k, a)| if k == 0 { Ok(x.clone()) } else { Self::map_nodes(a, &x) })
            .collect::<Result<_>>()?;

        let mut stages = Vec::with_capacity(self.mgcus.len());
        let mut cross_graphs = Vec::new();
        for (i, mgcu) in self.mgcus.iter().enumerate() {
            let mut out: Vec<Tensor> = mgcu
                .blocks
                .iter()
                .zip(&feats)
                .map(|(block, f)| block.forward(f, ctx))
                .collect::<Result<_>>()?;
            if let Some(pairs) = &mgcu.fusion {
                // All scales update simultaneously from the pre-fusion features.
                let mut fused = out.clone();
                for (k, pair) in pairs.iter().enumerate() {
                    let (fine, coarse) = (&out[k], &out[k + 1]);
                    let graph = pair.up.infer_cross_graph(fine, coarse, ctx)?;
                    fused[k + 1] = fused[k + 1].add(&pair.up.message(fine, &graph)?)?;
                    cross_graphs.push((i, self.scale_ids[k], self.scale_ids[k + 1], graph));
                    if let Some(down) = &pair.down {
                        let graph = down.infer_cross_graph(coarse, fine, ctx)?;
                        fused[k] = fused[k].add(&down.message(coarse, &graph)?)?;
                        cross_graphs.push((i, self.scale_ids[k + 1], self.scale_ids[k], graph));
                    }
                }
                out = fused;
            }
            stages.push(out.clone());
            feats = out;
        }

        let broadcast: Vec<Tensor> = self.broadcast[1..]
            .iter()
            .zip(&feats[1..])
            .map(|(b, f)| Self::map_nodes(b, f))
            .collect::<Result<_>>()?;
        let mut fused = feats[0].clone();
        if !broadcast.is_empty() {
            let mut coarse = broadcast[0].clone();
            for extra in &broadcast[1..] {
                coarse = coarse.add(extra)?;
            }
            fused = fused.add(&coarse.scale(self.cfg.lambda))?;
        }
        let (features, pooled) = self.head(&fused, ctx)?;
        Ok(EncoderTrace {
            stages,
            cross_graphs,
            broadcast,
            fused,
            features,
            pooled,
        })
    }

    /// Final joint-scale block and temporal pooling applied to fused features.
    pub fn head(&self, fused: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor, Tensor)> {
        let features = self.final_block.forward(fused, ctx)?;
        let pooled = features.mean_axis(1)?;
        Ok((features, pooled))
    }

    /// Initial decoder state `[B, M, C]`.
    pub fn forward(&self, poses: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        Ok(self.forward_trace(poses, ctx)?.pooled)
    }
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        for (i, mgcu) in self.mgcus.iter().enumerate() {
            let unit = join(prefix, &format!("mgcu{}", i + 1));
            for (block, id) in mgcu.blocks.iter().zip(&self.scale_ids) {
                block.visit(&join(&unit, &format!("s{id}")), out);
            }
            if let Some(pairs) = &mgcu.fusion {
                for (k, pair) in pairs.iter().enumerate() {
                    let (a, b) = (self.scale_ids[k], self.scale_ids[k + 1]);
                    pair.up.visit(&join(&unit, &format!("csfb_s{a}_to_s{b}")), out);
                    if let Some(down) = &pair.down {
                        down.visit(&join(&unit, &format!("csfb_s{b}_to_s{a}")), out);
                    }
                }
            }
        }
        self.final_block.visit(&join(prefix, "final"), out);
    }
}
