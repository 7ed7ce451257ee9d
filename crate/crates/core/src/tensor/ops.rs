//! Elementwise, reduction and shape operations.

use super::{numel_of, Tensor};
use crate::error::{Error, Result};

/// Splits `shape` around `axis` into (outer, axis length, inner) volumes.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("left {:?} vs right {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    /// Elementwise map whose derivative depends on the input only; the
    /// backward pass reads the input through its handle instead of a copy.
    fn map_from_input(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Tensor {
        let y: Vec<f64> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        Tensor::from_op(y, self.shape().to_vec(), &[self], move |g| {
            let gx = g.iter().zip(x.data().iter()).map(|(g, &x)| g * df(x)).collect();
            vec![Some(gx)]
        })
    }

    /// Elementwise map whose derivative is a function of the output.
    fn map_from_output(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Tensor {
        let y: Vec<f64> = self.data().iter().map(|&v| f(v)).collect();
        let saved = y.clone();
        Tensor::from_op(y, self.shape().to_vec(), &[self], move |g| {
            let gx = g.iter().zip(&saved).map(|(g, &y)| g * df(y)).collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let y = self.data().iter().zip(other.data().iter()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(y, self.shape().to_vec(), &[self, other], |g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let y = self.data().iter().zip(other.data().iter()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(y, self.shape().to_vec(), &[self, other], |g| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        }))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let y = self.data().iter().zip(other.data().iter()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(y, self.shape().to_vec(), &[self, other], move |g| {
            let ga = g.iter().zip(b.data().iter()).map(|(g, b)| g * b).collect();
            let gb = g.iter().zip(a.data().iter()).map(|(g, a)| g * a).collect();
            vec![Some(ga), Some(gb)]
        }))
    }

    /// Adds a per-channel bias broadcast along every leading axis.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let c = *self.shape().last().expect("non-empty shape");
        if bias.numel() != c {
            return Err(Error::dim(
                "add_bias",
                format!("bias of {} for last axis {} of {:?}", bias.numel(), c, self.shape()),
            ));
        }
        let b = bias.data();
        let mut y = self.to_vec();
        for row in y.chunks_exact_mut(c) {
            row.iter_mut().zip(b.iter()).for_each(|(v, b)| *v += b);
        }
        drop(b);
        Ok(Tensor::from_op(y, self.shape().to_vec(), &[self, bias], move |g| {
            let mut gb = vec![0.0; c];
            for row in g.chunks_exact(c) {
                gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            vec![Some(g.to_vec()), Some(gb)]
        }))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.affine(s, 0.0)
    }

    /// `a * x + b` elementwise.
    pub fn affine(&self, a: f64, b: f64) -> Tensor {
        let y = self.data().iter().map(|v| a * v + b).collect();
        Tensor::from_op(y, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().map(|v| a * v).collect())]
        })
    }

    pub fn relu(&self) -> Tensor {
        self.map_from_input(|x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map_from_output(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |y| y * (1.0 - y),
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.map_from_output(f64::tanh, |y| 1.0 - y * y)
    }

    /// Absolute value; the subgradient at zero is 0.
    pub fn abs(&self) -> Tensor {
        self.map_from_input(f64::abs, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&self) -> Tensor {
        let c = *self.shape().last().expect("non-empty shape");
        let mut y = self.to_vec();
        for row in y.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let saved = y.clone();
        Tensor::from_op(y, self.shape().to_vec(), &[self], move |g| {
            let mut gx = vec![0.0; g.len()];
            for ((gx, g), y) in gx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(saved.chunks_exact(c)) {
                let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                for i in 0..c {
                    gx[i] = y[i] * (g[i] - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![total], vec![1], &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean_all(&self) -> Tensor {
        self.sum_all().scale(1.0 / self.numel() as f64)
    }

    /// Sums over `axis`, removing it (a 1-D input yields shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis("sum_axis", axis, 1.0)
    }

    /// Averages over `axis`, removing it.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::dim("mean_axis", format!("axis {axis} of {:?}", self.shape())))?;
        self.reduce_axis("mean_axis", axis, 1.0 / len as f64)
    }

    fn reduce_axis(&self, op: &'static str, axis: usize, weight: f64) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(Error::dim(op, format!("axis {axis} of {:?}", self.shape())));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut y[o * inner..(o + 1) * inner];
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        drop(x);
        y.iter_mut().for_each(|v| *v *= weight);
        let mut shape: Vec<usize> = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(y, shape, &[self], move |g| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for a in 0..len {
                    let dst = &mut gx[(o * len + a) * inner..(o * len + a + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * weight);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let ndim = first.ndim();
        if axis >= ndim {
            return Err(Error::dim("concat", format!("axis {axis} of {:?}", first.shape())));
        }
        for p in parts {
            let ok = p.ndim() == ndim
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!("{:?} vs {:?} off axis {axis}", p.shape(), first.shape()),
                ));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut y = Vec::with_capacity(outer * total * inner);
        let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (data, &len) in guards.iter().zip(&lens) {
                y.extend_from_slice(&data[o * len * inner..(o + 1) * len * inner]);
            }
        }
        drop(guards);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(y, shape, parts, move |g| {
            let mut grads: Vec<Vec<f64>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (grad, &len) in grads.iter_mut().zip(&lens) {
                    grad.extend_from_slice(&g[offset..offset + len * inner]);
                    offset += len * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Same values viewed with a new shape of equal volume.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(
                "reshape",
                format!("{:?} cannot become {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), &[self], |g| vec![Some(g.to_vec())]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let n = self.ndim();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", format!("{perm:?} for {:?}", self.shape())));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let mut in_strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
        }
        // Input stride for each output axis.
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let index_map = permuted_offsets(&out_shape, &strides);
        let x = self.data();
        let y: Vec<f64> = index_map.iter().map(|&i| x[i]).collect();
        drop(x);
        let total = y.len();
        Ok(Tensor::from_op(y, out_shape, &[self], move |g| {
            let mut gx = vec![0.0; total];
            for (gv, &i) in g.iter().zip(&index_map) {
                gx[i] = *gv;
            }
            vec![Some(gx)]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let n = self.ndim();
        if n < 2 {
            return Err(Error::dim("transpose", format!("{:?}", self.shape())));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(&perm)
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.ndim() || len == 0 || start + len > self.shape()[axis] {
            return Err(Error::dim(
                "narrow",
                format!("axis {axis} range {start}..{} of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, full, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            y.extend_from_slice(&x[base..base + len * inner]);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(y, shape, &[self], move |g| {
            let mut gx = vec![0.0; outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Pairwise sum: for `u: [B, M, H]`, `v: [B, N, H]` returns
    /// `[B, M, N, H]` with `out[b, i, j] = u[b, i] + v[b, j]`.
    pub fn outer_add(&self, other: &Tensor) -> Result<Tensor> {
        let (us, vs) = (self.shape(), other.shape());
        if us.len() != 3 || vs.len() != 3 || us[0] != vs[0] || us[2] != vs[2] {
            return Err(Error::dim("outer_add", format!("{us:?} with {vs:?}")));
        }
        let (b, m, n, h) = (us[0], us[1], vs[1], us[2]);
        let u = self.data();
        let v = other.data();
        let mut y = vec![0.0; b * m * n * h];
        for bi in 0..b {
            for i in 0..m {
                let ui = &u[(bi * m + i) * h..(bi * m + i + 1) * h];
                for j in 0..n {
                    let vj = &v[(bi * n + j) * h..(bi * n + j + 1) * h];
                    let dst = &mut y[((bi * m + i) * n + j) * h..((bi * m + i) * n + j + 1) * h];
                    for k in 0..h {
                        dst[k] = ui[k] + vj[k];
                    }
                }
            }
        }
        drop((u, v));
        Ok(Tensor::from_op(y, vec![b, m, n, h], &[self, other], move |g| {
            let mut gu = vec![0.0; b * m * h];
            let mut gv = vec![0.0; b * n * h];
            for bi in 0..b {
                for i in 0..m {
                    for j in 0..n {
                        let src = &g[((bi * m + i) * n + j) * h..((bi * m + i) * n + j + 1) * h];
                        let du = &mut gu[(bi * m + i) * h..(bi * m + i + 1) * h];
                        du.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        let dv = &mut gv[(bi * n + j) * h..(bi * n + j + 1) * h];
                        dv.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            }
            vec![Some(gu), Some(gv)]
        }))
    }

    /// `relu(u_i + v_j)` for every pair, `[B, M, H] x [B, N, H] -> [B, M, N, H]`.
    /// Equivalent to `outer_add` followed by `relu` without the intermediate.
    pub fn outer_add_relu(&self, other: &Tensor) -> Result<Tensor> {
        let (us, vs) = (self.shape(), other.shape());
        if us.len() != 3 || vs.len() != 3 || us[0] != vs[0] || us[2] != vs[2] {
            return Err(Error::dim("outer_add_relu", format!("{us:?} with {vs:?}")));
        }
        let (b, m, n, h) = (us[0], us[1], vs[1], us[2]);
        let mut y = Vec::with_capacity(b * m * n * h);
        {
            let u = self.data();
            let v = other.data();
            for bi in 0..b {
                for i in 0..m {
                    let ui = &u[(bi * m + i) * h..(bi * m + i + 1) * h];
                    for j in 0..n {
                        let vj = &v[(bi * n + j) * h..(bi * n + j + 1) * h];
                        y.extend(ui.iter().zip(vj).map(|(a, b)| (a + b).max(0.0)));
                    }
                }
            }
        }
        let (ut, vt) = (self.clone(), other.clone());
        Ok(Tensor::from_op(y, vec![b, m, n, h], &[self, other], move |g| {
            let u = ut.data();
            let v = vt.data();
            let mut gu = vec![0.0; b * m * h];
            let mut gv = vec![0.0; b * n * h];
            for bi in 0..b {
                for i in 0..m {
                    let ui = &u[(bi * m + i) * h..(bi * m + i + 1) * h];
                    let du = &mut gu[(bi * m + i) * h..(bi * m + i + 1) * h];
                    for j in 0..n {
                        let vj = &v[(bi * n + j) * h..(bi * n + j + 1) * h];
                        let src = &g[((bi * m + i) * n + j) * h..((bi * m + i) * n + j + 1) * h];
                        let dv = &mut gv[(bi * n + j) * h..(bi * n + j + 1) * h];
                        for k in 0..h {
                            let d = if ui[k] + vj[k] > 0.0 { src[k] } else { 0.0 };
                            du[k] += d;
                            dv[k] += d;
                        }
                    }
                }
            }
            vec![Some(gu), Some(gv)]
        }))
    }
}

/// Flat input offsets visited in output row-major order.
fn permuted_offsets(out_shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let total = numel_of(out_shape);
    let mut offsets = Vec::with_capacity(total);
    let n = out_shape.len();
    let mut idx = vec![0usize; n];
    let mut offset = 0usize;
    for _ in 0..total {
        offsets.push(offset);
        for ax in (0..n).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    offsets
}
