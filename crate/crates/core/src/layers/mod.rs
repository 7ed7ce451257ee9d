//! Layer primitives: single-scale graph convolution blocks, cross-scale
//! fusion blocks and the graph-based GRU cell, plus the small building
//! blocks they share.
//!
//! Every layer exposes its tensors through [`Module::visit`] under a dotted
//! path, which is also the name used in checkpoints.

mod basic;
pub mod cross_scale;
pub mod ggru;
pub mod graph_conv;

pub use basic::{init_weight, zero_bias, BatchNorm, ForwardCtx, Linear, TemporalConv};
pub use cross_scale::{CsFb, CsFbConfig, PairMlp};
pub use ggru::GGruCell;
pub use graph_conv::{graph_conv, GraphConv, SsGcb, SsGcbConfig};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Learned weight (possibly frozen).
    Param,
    /// Non-learned state such as running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Named {
    pub name: String,
    pub tensor: Tensor,
    pub kind: TensorKind,
}

impl Named {
    pub fn param(name: String, tensor: &Tensor) -> Self {
        Named {
            name,
            tensor: tensor.clone(),
            kind: TensorKind::Param,
        }
    }

    pub fn buffer(name: String, tensor: &Tensor) -> Self {
        Named {
            name,
            tensor: tensor.clone(),
            kind: TensorKind::Buffer,
        }
    }
}

pub trait Module {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>);

    fn named_tensors(&self, prefix: &str) -> Vec<Named> {
        let mut out = Vec::new();
        self.visit(prefix, &mut out);
        out
    }

    /// Parameters that receive gradients.
    fn trainable(&self) -> Vec<Tensor> {
        self.named_tensors("")
            .into_iter()
            .filter(|n| n.kind == TensorKind::Param && n.tensor.requires_grad())
            .map(|n| n.tensor)
            .collect()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
