//! Per-node temporal convolution over `[batch, time, nodes, channels]`.

use super::linalg::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

/// Output length of a zero-padded 1-D convolution, `None` when no window fits.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || len + 2 * pad < kernel {
        return None;
    }
    Some((len + 2 * pad - kernel) / stride + 1)
}

impl Tensor {
    /// Convolves every node's channel sequence along time, mixing channels.
    ///
    /// `self: [B, T, N, C]`, `weight: [K, C, C']`, `bias: [C']`; returns
    /// `[B, T', N, C']` with `T' = (T + 2 pad - K) / stride + 1`.
    pub fn conv_time(&self, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let [b, t, n, c] = *self.shape() else {
            return Err(Error::dim("conv_time", format!("input must be [B, T, N, C], got {:?}", self.shape())));
        };
        let [k, c_in, c_out] = *weight.shape() else {
            return Err(Error::dim("conv_time", format!("weight must be [K, C, C'], got {:?}", weight.shape())));
        };
        if c_in != c || bias.numel() != c_out {
            return Err(Error::dim(
                "conv_time",
                format!(
                    "input channels {c} vs weight {:?} and bias {:?}",
                    weight.shape(),
                    bias.shape()
                ),
            ));
        }
        let t_out = conv_out_len(t, k, stride, pad).ok_or_else(|| {
            Error::dim(
                "conv_time",
                format!("time axis {t} too short for kernel {k} stride {stride} pad {pad}"),
            )
        })?;

        // im2col: one row per (b, t', n) holding K stacked channel vectors.
        let rows = b * t_out * n;
        let width = k * c;
        let mut cols = vec![0.0; rows * width];
        {
            let x = self.data();
            for bi in 0..b {
                for to in 0..t_out {
                    for ki in 0..k {
                        let ti = (to * stride + ki) as isize - pad as isize;
                        if ti < 0 || ti >= t as isize {
                            continue;
                        }
                        let ti = ti as usize;
                        for ni in 0..n {
                            let src = ((bi * t + ti) * n + ni) * c;
                            let row = (bi * t_out + to) * n + ni;
                            let dst = row * width + ki * c;
                            cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                        }
                    }
                }
            }
        }

        let mut y = vec![0.0; rows * c_out];
        gemm(
            MatRef::new(&cols, rows, width),
            MatRef::new(&weight.data(), width, c_out),
            0.0,
            &mut y,
        );
        {
            let bias = bias.data();
            for row in y.chunks_exact_mut(c_out) {
                row.iter_mut().zip(bias.iter()).for_each(|(v, b)| *v += b);
            }
        }

        let w_t = weight.clone();
        let need = (self.requires_grad(), weight.requires_grad(), bias.requires_grad());
        Ok(Tensor::from_op(
            y,
            vec![b, t_out, n, c_out],
            &[self, weight, bias],
            move |g| {
                let gx = need.0.then(|| {
                    let mut gcols = vec![0.0; rows * width];
                    gemm(
                        MatRef::new(g, rows, c_out),
                        MatRef::new(&w_t.data(), width, c_out).t(),
                        0.0,
                        &mut gcols,
                    );
                    let mut gx = vec![0.0; b * t * n * c];
                    for bi in 0..b {
                        for to in 0..t_out {
                            for ki in 0..k {
                                let ti = (to * stride + ki) as isize - pad as isize;
                                if ti < 0 || ti >= t as isize {
                                    continue;
                                }
                                let ti = ti as usize;
                                for ni in 0..n {
                                    let dst = ((bi * t + ti) * n + ni) * c;
                                    let row = (bi * t_out + to) * n + ni;
                                    let src = row * width + ki * c;
                                    gx[dst..dst + c]
                                        .iter_mut()
                                        .zip(&gcols[src..src + c])
                                        .for_each(|(d, s)| *d += s);
                                }
                            }
                        }
                    }
                    gx
                });
                let gw = need.1.then(|| {
                    let mut gw = vec![0.0; width * c_out];
                    gemm(
                        MatRef::new(&cols, rows, width).t(),
                        MatRef::new(g, rows, c_out),
                        0.0,
                        &mut gw,
                    );
                    gw
                });
                let gb = need.2.then(|| {
                    let mut gb = vec![0.0; c_out];
                    for row in g.chunks_exact(c_out) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    gb
                });
                vec![gx, gw, gb]
            },
        ))
    }
}
