//! Standard gradient-check cases for every differentiable operation, every
//! layer and a small end-to-end model.

use rand::SeedableRng;

use super::{check_gradients, GradCheckReport};
use crate::error::Result;
use crate::layers::{
    graph_conv, CsFb, CsFbConfig, ForwardCtx, GGruCell, GraphConv, Module, PairMlp, SsGcb, SsGcbConfig,
};
use crate::model::{l1_loss, Decoder, DecoderConfig, Dmgnn, EncoderConfig, ModelConfig};
use crate::skeleton::{ScaleSpec, SkeletonSpec};
use crate::tensor::{no_grad, BatchNormState, Rng64, Tensor};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Relative-error denominator floor for near-zero gradients.
pub const FLOOR: f64 = 1e-5;
/// Tolerance for single operations and layers.
pub const OP_TOL: f64 = 1e-4;
/// Tolerance for the full model.
pub const E2E_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < self.tolerance
    }
}

fn rand(shape: &[usize], rng: &mut Rng64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng).with_requires_grad(true)
}

/// Checks `sum(f() * R)` for a fixed random `R`, so every output entry
/// contributes with its own weight.
fn case<F>(name: &str, tol: f64, params: &[Tensor], f: F, rng: &mut Rng64) -> Result<CaseResult>
where
    F: Fn() -> Result<Tensor>,
{
    let shape = no_grad(&f)?.shape().to_vec();
    let probe = Tensor::uniform(&shape, -1.0, 1.0, rng);
    let report = check_gradients(params, || Ok(f()?.mul(&probe)?.sum_all()), STEP, FLOOR)?;
    Ok(CaseResult {
        name: name.to_string(),
        tolerance: tol,
        report,
    })
}

/// Randomizes biases and BN shifts. Zero-initialized biases put ReLU
/// inputs exactly on the kink for rows that are otherwise all clamped,
/// where the central difference is not a derivative.
fn jitter_offsets(m: &impl Module, rng: &mut Rng64) -> Result<()> {
    for n in m.named_tensors("") {
        if n.name.ends_with("bias") || n.name.ends_with("beta") {
            n.tensor
                .set_data(Tensor::uniform(n.tensor.shape(), -0.3, 0.3, rng).to_vec())?;
        }
    }
    Ok(())
}

fn params_of(m: &impl Module, rng: &mut Rng64) -> Result<Vec<Tensor>> {
    jitter_offsets(m, rng)?;
    Ok(m.trainable())
}

pub fn op_cases(seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = Rng64::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    let a = rand(&[3, 4], r);
    let b = rand(&[3, 4], r);
    let w = rand(&[4, 5], r);
    let x3 = rand(&[2, 3, 4], r);
    let v = rand(&[4], r);
    let l = rand(&[2, 3, 4], r);
    let rh = rand(&[6, 4, 5], r);
    let u = rand(&[2, 3, 4], r);
    let uv = rand(&[2, 5, 4], r);
    let seq = rand(&[2, 6, 3, 4], r);
    let kern = rand(&[5, 4, 3], r);
    let kbias = rand(&[3], r);
    let kbias5 = rand(&[5], r);
    let gamma = rand(&[4], r);
    let beta = rand(&[4], r);
    let bn_state = BatchNormState::new(4, 0.1);
    bn_state.running_mean.set_data(vec![0.1, -0.2, 0.3, 0.0])?;
    bn_state.running_var.set_data(vec![0.5, 1.5, 2.0, 1.0])?;

    out.push(case("matmul", OP_TOL, &[a.clone(), w.clone()], || a.matmul(&w), r)?);
    out.push(case("matmul_batched_left", OP_TOL, &[x3.clone(), w.clone()], || x3.matmul(&w), r)?);
    out.push(case("bmm_shared_left", OP_TOL, &[a.clone(), l.clone()], || a.bmm(&l.transpose_last()?), r)?);
    out.push(case("bmm_repeated_left", OP_TOL, &[x3.clone(), rh.clone()], || x3.bmm(&rh), r)?);
    out.push(case("linear", OP_TOL, &[x3.clone(), w.clone(), kbias5.clone()], || x3.linear(&w, &kbias5), r)?);
    out.push(case("add", OP_TOL, &[a.clone(), b.clone()], || a.add(&b), r)?);
    out.push(case("sub", OP_TOL, &[a.clone(), b.clone()], || a.sub(&b), r)?);
    out.push(case("mul", OP_TOL, &[a.clone(), b.clone()], || a.mul(&b), r)?);
    out.push(case("add_bias", OP_TOL, &[x3.clone(), v.clone()], || x3.add_bias(&v), r)?);
    out.push(case("scale", OP_TOL, &[a.clone()], || Ok(a.scale(-1.7)), r)?);
    out.push(case("affine", OP_TOL, &[a.clone()], || Ok(a.affine(0.3, 2.0)), r)?);
    out.push(case("relu", OP_TOL, &[a.clone()], || Ok(a.relu()), r)?);
    out.push(case("sigmoid", OP_TOL, &[a.clone()], || Ok(a.sigmoid()), r)?);
    out.push(case("tanh", OP_TOL, &[a.clone()], || Ok(a.tanh()), r)?);
    out.push(case("abs", OP_TOL, &[a.clone()], || Ok(a.abs()), r)?);
    out.push(case("softmax_rows", OP_TOL, &[x3.clone()], || Ok(x3.softmax_rows()), r)?);
    out.push(case("sum_all", OP_TOL, &[a.clone()], || Ok(a.sum_all()), r)?);
    out.push(case("mean_all", OP_TOL, &[a.clone()], || Ok(a.mean_all()), r)?);
    out.push(case("sum_axis", OP_TOL, &[x3.clone()], || x3.sum_axis(1), r)?);
    out.push(case("mean_axis", OP_TOL, &[x3.clone()], || x3.mean_axis(2), r)?);
    out.push(case("concat", OP_TOL, &[x3.clone(), l.clone()], || Tensor::concat(&[&x3, &l], 1), r)?);
    out.push(case("reshape", OP_TOL, &[x3.clone()], || x3.reshape(&[6, 4]), r)?);
    out.push(case("permute", OP_TOL, &[seq.clone()], || seq.permute(&[0, 2, 1, 3]), r)?);
    out.push(case("transpose_last", OP_TOL, &[x3.clone()], || x3.transpose_last(), r)?);
    out.push(case("narrow", OP_TOL, &[seq.clone()], || seq.narrow(1, 2, 3), r)?);
    out.push(case("outer_add", OP_TOL, &[u.clone(), uv.clone()], || u.outer_add(&uv), r)?);
    out.push(case("outer_add_relu", OP_TOL, &[u.clone(), uv.clone()], || u.outer_add_relu(&uv), r)?);
    out.push(case(
        "conv_time_stride1",
        OP_TOL,
        &[seq.clone(), kern.clone(), kbias.clone()],
        || seq.conv_time(&kern, &kbias, 1, 2),
        r,
    )?);
    out.push(case(
        "conv_time_stride2",
        OP_TOL,
        &[seq.clone(), kern.clone(), kbias.clone()],
        || seq.conv_time(&kern, &kbias, 2, 2),
        r,
    )?);
    out.push(case(
        "batch_norm_train",
        OP_TOL,
        &[seq.clone(), gamma.clone(), beta.clone()],
        || seq.batch_norm(&gamma, &beta, &bn_state, true),
        r,
    )?);
    out.push(case(
        "batch_norm_eval",
        OP_TOL,
        &[seq.clone(), gamma.clone(), beta.clone()],
        || seq.batch_norm(&gamma, &beta, &bn_state, false),
        r,
    )?);
    out.push(case(
        "dropout",
        OP_TOL,
        &[a.clone()],
        || a.dropout(0.3, &mut Rng64::seed_from_u64(5)),
        r,
    )?);
    out.push(case("l1_loss", OP_TOL, &[a.clone(), b.clone()], || l1_loss(&a, &b), r)?);
    Ok(out)
}

fn chain(id: u8, groups: Vec<Vec<usize>>) -> ScaleSpec {
    let edges = (1..groups.len()).map(|i| [i - 1, i]).collect();
    ScaleSpec {
        id,
        name: String::new(),
        groups,
        edges,
    }
}

pub fn layer_cases(seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = Rng64::seed_from_u64(seed);
    let mut out = Vec::new();

    // Graph convolution with a dense random adjacency.
    let gc = GraphConv::new(rand(&[5, 5], &mut rng), 3, 4, &mut rng);
    let x = rand(&[2, 3, 5, 3], &mut rng);
    let mut params = params_of(&gc, &mut rng)?;
    params.push(x.clone());
    out.push(case("graph_conv", OP_TOL, &params, || graph_conv(&x, &gc), &mut rng)?);

    // SS-GCB, once without and once with (fixed-mask) dropout.
    let spec = chain(1, (0..4).map(|j| vec![j]).collect());
    for (name, dropout) in [("ss_gcb", 0.0), ("ss_gcb_dropout", 0.2)] {
        let block_cfg = SsGcbConfig {
            input: 3,
            output: 4,
            kernel: 5,
            stride: 2,
            dropout,
            bn_momentum: 0.1,
            freeze_adjacency: false,
        };
        let block = SsGcb::new(&spec, &block_cfg, &mut rng)?;
        let x = rand(&[2, 7, 4, 3], &mut rng);
        let mut params = params_of(&block, &mut rng)?;
        params.push(x.clone());
        out.push(case(
            name,
            OP_TOL,
            &params,
            || block.forward(&x, &mut ForwardCtx::train(&mut Rng64::seed_from_u64(11))),
            &mut rng,
        )?);
    }

    // Relation network alone.
    let mlp = PairMlp::new(3, 4, 0.0, 0.1, &mut rng);
    let p = rand(&[2, 4, 3], &mut rng);
    let mut params = params_of(&mlp, &mut rng)?;
    params.push(p.clone());
    out.push(case(
        "cs_fb_relation",
        OP_TOL,
        &params,
        || mlp.forward(&p, &mut ForwardCtx::train(&mut Rng64::seed_from_u64(0))),
        &mut rng,
    )?);

    // Cross-scale graph inference and full fusion.
    let cfg = CsFbConfig {
        channels: 3,
        frames: 5,
        hidden: 4,
        kernel: 5,
        dropout: 0.0,
        bn_momentum: 0.1,
        normalize_over_sources: true,
    };
    let block = CsFb::new(&cfg, &mut rng)?;
    let x_src = rand(&[2, 5, 4, 3], &mut rng);
    let x_dst = rand(&[2, 5, 2, 3], &mut rng);
    let mut params = params_of(&block, &mut rng)?;
    params.push(x_src.clone());
    params.push(x_dst.clone());
    let fresh = || Rng64::seed_from_u64(0);
    out.push(case(
        "cs_fb_graph",
        OP_TOL,
        &params,
        || block.infer_cross_graph(&x_src, &x_dst, &mut ForwardCtx::train(&mut fresh())),
        &mut rng,
    )?);
    out.push(case(
        "cs_fb_fusion",
        OP_TOL,
        &params,
        || block.forward(&x_src, &x_dst, &mut ForwardCtx::train(&mut fresh())),
        &mut rng,
    )?);

    // G-GRU step in graph and plain modes.
    for (name, plain) in [("g_gru", false), ("gru_plain", true)] {
        let cell = GGruCell::new(rand(&[3, 3], &mut rng), 6, 4, plain, &mut rng);
        let i = rand(&[2, 3, 6], &mut rng);
        let h = rand(&[2, 3, 4], &mut rng);
        let mut params = params_of(&cell, &mut rng)?;
        params.push(i.clone());
        params.push(h.clone());
        out.push(case(name, OP_TOL, &params, || cell.step(&i, &h), &mut rng)?);
    }

    // Three-step residual decode on a 2-joint body, through the l1 loss.
    let joints = chain(1, vec![vec![0], vec![1]]);
    let dec_cfg = DecoderConfig {
        horizon: 3,
        hidden: 4,
        head_hidden: 4,
        plain_gru: false,
        teacher_forcing: 0.0,
    };
    let decoder = Decoder::new(&dec_cfg, &joints, 2, &mut rng)?;
    let tail = Tensor::uniform(&[2, 3, 2, 3], -1.0, 1.0, &mut rng);
    let state = rand(&[2, 2, 4], &mut rng);
    let target = Tensor::uniform(&[2, 3, 2, 3], -1.0, 1.0, &mut rng);
    let mut params = params_of(&decoder, &mut rng)?;
    params.push(state.clone());
    out.push(case(
        "decoder_l1",
        OP_TOL,
        &params,
        || {
            let pred = decoder.forward(&tail, &state, 3, None, &mut ForwardCtx::train(&mut fresh()))?;
            l1_loss(&pred, &target)
        },
        &mut rng,
    )?);
    Ok(out)
}

/// Four joints in a chain plus a two-part scale, channels 4/8, 9 observed
/// frames and a 2-frame horizon.
pub fn toy_config() -> ModelConfig {
    let skeleton = SkeletonSpec {
        joints: 4,
        joint_names: Vec::new(),
        scales: vec![
            chain(1, (0..4).map(|j| vec![j]).collect()),
            chain(2, vec![vec![0, 1], vec![2, 3]]),
        ],
    };
    ModelConfig {
        seed: 0,
        skeleton_file: None,
        skeleton: Some(skeleton),
        encoder: EncoderConfig {
            scales: vec![1, 2],
            n_mgcu: 2,
            csfb_positions: vec![1],
            channels: vec![4, 8],
            strides: vec![1, 2],
            input_frames: 9,
            dropout: 0.0,
            csfb_hidden: 4,
            ..EncoderConfig::default()
        },
        decoder: DecoderConfig {
            horizon: 2,
            hidden: 8,
            head_hidden: 8,
            ..DecoderConfig::default()
        },
        ..ModelConfig::default()
    }
}

/// Every trainable parameter of the toy model against the total l1 loss.
pub fn end_to_end_case(seed: u64) -> Result<CaseResult> {
    let mut cfg = toy_config();
    cfg.seed = seed;
    let model = Dmgnn::new(&cfg)?;
    let mut rng = Rng64::seed_from_u64(seed ^ 0x5eed);
    jitter_offsets(&model, &mut rng)?;
    let input = Tensor::uniform(&[2, 9, 4, 3], -1.0, 1.0, &mut rng);
    let target = Tensor::uniform(&[2, 2, 4, 3], -1.0, 1.0, &mut rng);
    let params: Vec<Tensor> = model.trainable_named().into_iter().map(|(_, t)| t).collect();
    let report = check_gradients(
        &params,
        || {
            let mut r = Rng64::seed_from_u64(0);
            let pred = model.forward(&input, 2, None, &mut ForwardCtx::train(&mut r))?;
            l1_loss(&pred, &target)
        },
        STEP,
        FLOOR,
    )?;
    Ok(CaseResult {
        name: "end_to_end".into(),
        tolerance: E2E_TOL,
        report,
    })
}
