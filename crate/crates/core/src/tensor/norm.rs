//! Batch normalization and dropout.

use rand::Rng;

use super::{Rng64, Tensor};
use crate::error::{Error, Result};

/// Running statistics of a per-channel batch normalization.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize, momentum: f64) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum,
            eps: 1e-5,
        }
    }
}

impl Tensor {
    /// Normalizes each channel (last axis) over all other axes.
    ///
    /// In training mode the batch statistics are used and folded into the
    /// running estimates; in evaluation mode the running estimates are used,
    /// which makes the map a fixed affine transform.
    pub fn batch_norm(&self, gamma: &Tensor, beta: &Tensor, state: &BatchNormState, train: bool) -> Result<Tensor> {
        let c = *self.shape().last().expect("non-empty shape");
        if gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c {
            return Err(Error::dim(
                "batch_norm",
                format!("{} channels vs gamma {:?} beta {:?}", c, gamma.shape(), beta.shape()),
            ));
        }
        let rows = self.numel() / c;
        let x = self.data();
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            for row in x.chunks_exact(c) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);
            let mom = state.momentum;
            let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
            state.running_mean.update_data(|rm| {
                rm.iter_mut().zip(&mean).for_each(|(r, m)| *r = (1.0 - mom) * *r + mom * m)
            });
            state.running_var.update_data(|rv| {
                rv.iter_mut().zip(&var).for_each(|(r, v)| *r = (1.0 - mom) * *r + mom * v * unbias)
            });
            (mean, var)
        } else {
            (state.running_mean.to_vec(), state.running_var.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let gam = gamma.to_vec();
        let bet = beta.data();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for row in x.chunks_exact(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                y.push(gam[j] * h + bet[j]);
            }
        }
        drop((x, bet));
        Ok(Tensor::from_op(y, self.shape().to_vec(), &[self, gamma, beta], move |g| {
            let mut g_gamma = vec![0.0; c];
            let mut g_beta = vec![0.0; c];
            for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for j in 0..c {
                    g_gamma[j] += grow[j] * xrow[j];
                    g_beta[j] += grow[j];
                }
            }
            let mut gx = vec![0.0; g.len()];
            if train {
                // d/dx of the batch-statistics normalization.
                let n = rows as f64;
                for ((dst, grow), xrow) in gx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        let gh = grow[j] * gam[j];
                        let sum_gh = g_beta[j] * gam[j];
                        let sum_ghx = g_gamma[j] * gam[j];
                        dst[j] = inv_std[j] / n * (n * gh - sum_gh - xrow[j] * sum_ghx);
                    }
                }
            } else {
                for (dst, grow) in gx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                    for j in 0..c {
                        dst[j] = grow[j] * gam[j] * inv_std[j];
                    }
                }
            }
            vec![Some(gx), Some(g_gamma), Some(g_beta)]
        }))
    }

    /// Inverted dropout: zeroes each element with probability `p` and
    /// rescales survivors by `1 / (1 - p)`.
    pub fn dropout(&self, p: f64, rng: &mut Rng64) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout probability {p} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - p);
        // Compare 32-bit draws against p scaled to the u32 range.
        let threshold = (p * 4_294_967_296.0) as u64;
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if (rng.gen::<u32>() as u64) < threshold { 0.0 } else { keep })
            .collect();
        let y = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(y, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]
        }))
    }
}
