//! Matrix products. Kernels go through `matrixmultiply::dgemm`, whose
//! stride arguments let the backward pass read transposes without copies.

use super::Tensor;
use crate::error::{Error, Result};

/// Row-major view of an `rows x cols` matrix, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Logical (rows, cols, row stride, col stride) after transposition.
    fn layout(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c` with `c` row-major `m x n`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    let (m, k, rsa, csa) = a.layout();
    let (k2, n, rsb, csb) = b.layout();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the asserts above guarantee that every index touched through
    // the given strides lies inside the borrowed slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Multiplies the last axis of `self` by a `[k, n]` matrix:
    /// `[..., k] x [k, n] -> [..., n]`.
    pub fn matmul(&self, w: &Tensor) -> Result<Tensor> {
        let k = *self.shape().last().expect("non-empty shape");
        if w.ndim() != 2 || w.shape()[0] != k {
            return Err(Error::dim(
                "matmul",
                format!("left {:?} (inner {k}) with right {:?}", self.shape(), w.shape()),
            ));
        }
        let n = w.shape()[1];
        let rows = self.numel() / k;
        let mut y = vec![0.0; rows * n];
        gemm(
            MatRef::new(&self.data(), rows, k),
            MatRef::new(&w.data(), k, n),
            0.0,
            &mut y,
        );
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let (a, b) = (self.clone(), w.clone());
        let need = (self.requires_grad(), w.requires_grad());
        Ok(Tensor::from_op(y, shape, &[self, w], move |g| {
            let ga = need.0.then(|| {
                let mut ga = vec![0.0; rows * k];
                gemm(MatRef::new(g, rows, n), MatRef::new(&b.data(), k, n).t(), 0.0, &mut ga);
                ga
            });
            let gb = need.1.then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(MatRef::new(&a.data(), rows, k).t(), MatRef::new(g, rows, n), 0.0, &mut gb);
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Affine map of the last axis, `x W + b`, fused into one product.
    pub fn linear(&self, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let k = *self.shape().last().expect("non-empty shape");
        if w.ndim() != 2 || w.shape()[0] != k || bias.numel() != w.shape()[1] {
            return Err(Error::dim(
                "linear",
                format!(
                    "input {:?} with weight {:?} and bias {:?}",
                    self.shape(),
                    w.shape(),
                    bias.shape()
                ),
            ));
        }
        let n = w.shape()[1];
        let rows = self.numel() / k;
        let mut y = Vec::with_capacity(rows * n);
        {
            let b = bias.data();
            for _ in 0..rows {
                y.extend_from_slice(&b);
            }
        }
        gemm(
            MatRef::new(&self.data(), rows, k),
            MatRef::new(&w.data(), k, n),
            1.0,
            &mut y,
        );
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let (x, wt) = (self.clone(), w.clone());
        let need = (self.requires_grad(), w.requires_grad(), bias.requires_grad());
        Ok(Tensor::from_op(y, shape, &[self, w, bias], move |g| {
            let gx = need.0.then(|| {
                let mut gx = vec![0.0; rows * k];
                gemm(MatRef::new(g, rows, n), MatRef::new(&wt.data(), k, n).t(), 0.0, &mut gx);
                gx
            });
            let gw = need.1.then(|| {
                let mut gw = vec![0.0; k * n];
                gemm(MatRef::new(&x.data(), rows, k).t(), MatRef::new(g, rows, n), 0.0, &mut gw);
                gw
            });
            let gb = need.2.then(|| {
                let mut gb = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                gb
            });
            vec![gx, gw, gb]
        }))
    }

    /// Batched product `[Ga, m, k] x [Gb, k, n] -> [Gb, m, n]` where
    /// `Ga` divides `Gb` and left matrix `g / (Gb / Ga)` multiplies right
    /// matrix `g`. A left operand of shape `[m, k]` is treated as `Ga = 1`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (ga, m, k) = match *self.shape() {
            [m, k] => (1, m, k),
            [g, m, k] => (g, m, k),
            _ => return Err(Error::dim("bmm", format!("left must be 2-D or 3-D, got {:?}", self.shape()))),
        };
        let (gb, k2, n) = match *other.shape() {
            [g, k, n] => (g, k, n),
            _ => return Err(Error::dim("bmm", format!("right must be 3-D, got {:?}", other.shape()))),
        };
        if k != k2 || gb % ga != 0 {
            return Err(Error::dim(
                "bmm",
                format!("left {:?} with right {:?}", self.shape(), other.shape()),
            ));
        }
        let rep = gb / ga;
        let mut y = vec![0.0; gb * m * n];
        {
            let a = self.data();
            let b = other.data();
            for g in 0..gb {
                let ai = g / rep;
                gemm(
                    MatRef::new(&a[ai * m * k..(ai + 1) * m * k], m, k),
                    MatRef::new(&b[g * k * n..(g + 1) * k * n], k, n),
                    0.0,
                    &mut y[g * m * n..(g + 1) * m * n],
                );
            }
        }
        let (a_t, b_t) = (self.clone(), other.clone());
        let need = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(y, vec![gb, m, n], &[self, other], move |grad| {
            let a = a_t.data();
            let b = b_t.data();
            let g_a = need.0.then(|| {
                let mut out = vec![0.0; ga * m * k];
                for g in 0..gb {
                    let ai = g / rep;
                    gemm(
                        MatRef::new(&grad[g * m * n..(g + 1) * m * n], m, n),
                        MatRef::new(&b[g * k * n..(g + 1) * k * n], k, n).t(),
                        1.0,
                        &mut out[ai * m * k..(ai + 1) * m * k],
                    );
                }
                out
            });
            let g_b = need.1.then(|| {
                let mut out = vec![0.0; gb * k * n];
                for g in 0..gb {
                    let ai = g / rep;
                    gemm(
                        MatRef::new(&a[ai * m * k..(ai + 1) * m * k], m, k).t(),
                        MatRef::new(&grad[g * m * n..(g + 1) * m * n], m, n),
                        0.0,
                        &mut out[g * k * n..(g + 1) * k * n],
                    );
                }
                out
            });
            vec![g_a, g_b]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        let ta = Tensor::new(a.clone(), &[2, 3]).unwrap();
        let tb = Tensor::new(b.clone(), &[3, 4]).unwrap();
        let c = ta.matmul(&tb).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        for (x, y) in c.to_vec().iter().zip(naive(&a, &b, 2, 3, 4)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bmm_reuses_left_matrix_across_groups() {
        let a = Tensor::new(vec![0.0, 1.0, 1.0, 0.0], &[2, 2]).unwrap();
        let b = Tensor::new((0..8).map(f64::from).collect(), &[2, 2, 2]).unwrap();
        let c = a.bmm(&b).unwrap();
        // Swapping rows of each 2x2 block.
        assert_eq!(c.to_vec(), vec![2.0, 3.0, 0.0, 1.0, 6.0, 7.0, 4.0, 5.0]);
    }

    #[test]
    fn linear_equals_matmul_plus_bias() {
        let x = Tensor::new((0..6).map(|v| v as f64 * 0.5).collect(), &[3, 2]).unwrap();
        let w = Tensor::new(vec![1.0, -1.0, 2.0, 0.5, 0.0, 3.0], &[2, 3]).unwrap();
        let b = Tensor::new(vec![0.1, 0.2, 0.3], &[3]).unwrap();
        let fused = x.linear(&w, &b).unwrap().to_vec();
        let split = x.matmul(&w).unwrap().add_bias(&b).unwrap().to_vec();
        assert_eq!(fused, split);
        assert!(x.linear(&w, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
        assert!(a.bmm(&Tensor::zeros(&[3, 2, 2])).is_err());
    }
}
