//! Graph-based GRU cell used by the decoder.

use crate::error::{Error, Result};
use crate::tensor::{Rng64, Tensor};

use super::basic::{init_weight, Linear};
use super::{join, Module, Named};

/// GRU whose hidden state is first propagated over a learned joint graph:
/// `q = A_H H W_H` feeds all three gates.
pub struct GGruCell {
    /// `[M, M]`; unused in plain mode.
    pub adj: Tensor,
    /// `[hid, hid]`
    pub w_h: Tensor,
    pub r_in: Linear,
    pub r_hid: Linear,
    pub u_in: Linear,
    pub u_hid: Linear,
    pub c_in: Linear,
    pub c_hid: Linear,
    /// Skip graph propagation and use `q = H W_H`.
    pub plain: bool,
}

impl GGruCell {
    pub fn new(adj: Tensor, input: usize, hidden: usize, plain: bool, rng: &mut Rng64) -> Self {
        GGruCell {
            adj,
            w_h: init_weight(&[hidden, hidden], hidden, rng),
            r_in: Linear::new(input, hidden, rng),
            r_hid: Linear::new(hidden, hidden, rng),
            u_in: Linear::new(input, hidden, rng),
            u_hid: Linear::new(hidden, hidden, rng),
            c_in: Linear::new(input, hidden, rng),
            c_hid: Linear::new(hidden, hidden, rng),
            plain,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[0]
    }

    /// One step on `input [B, M, d]` and `state [B, M, hid]`.
    pub fn step(&self, input: &Tensor, state: &Tensor) -> Result<Tensor> {
        let m = self.adj.shape()[0];
        match (input.shape(), state.shape()) {
            ([b, mi, _], [b2, ms, h]) if b == b2 && *mi == m && *ms == m && *h == self.hidden() => {}
            _ => {
                return Err(Error::dim(
                    "ggru",
                    format!("input {:?}, state {:?}, {m} nodes", input.shape(), state.shape()),
                ))
            }
        }
        let q = if self.plain {
            state.matmul(&self.w_h)?
        } else {
            self.adj.bmm(state)?.matmul(&self.w_h)?
        };
        let r = self.r_in.forward(input)?.add(&self.r_hid.forward(&q)?)?.sigmoid();
        let u = self.u_in.forward(input)?.add(&self.u_hid.forward(&q)?)?.sigmoid();
        let c = self
            .c_in
            .forward(input)?
            .add(&r.mul(&self.c_hid.forward(&q)?)?)?
            .tanh();
        // u H + (1 - u) C
        u.mul(state)?.add(&u.affine(-1.0, 1.0).mul(&c)?)
    }
}

impl Module for GGruCell {
    fn visit(&self, prefix: &str, out: &mut Vec<Named>) {
        if !self.plain {
            out.push(Named::param(join(prefix, "adj"), &self.adj));
        }
        out.push(Named::param(join(prefix, "w_h"), &self.w_h));
        self.r_in.visit(&join(prefix, "r_in"), out);
        self.r_hid.visit(&join(prefix, "r_hid"), out);
        self.u_in.visit(&join(prefix, "u_in"), out);
        self.u_hid.visit(&join(prefix, "u_hid"), out);
        self.c_in.visit(&join(prefix, "c_in"), out);
        self.c_hid.visit(&join(prefix, "c_hid"), out);
    }
}
