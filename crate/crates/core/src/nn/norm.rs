//! Batch normalization over the channel axis of `(B, C, H, W)` tensors.
//!
//! Training-mode forward normalizes with batch statistics and stashes what
//! the backward pass needs; the running statistics used at inference are
//! committed when `backward` runs, which keeps `forward` free of interior
//! mutability.

use ndarray::{Array1, Array4, Axis, Ix1, Zip};

use super::param::Param;
use super::{c, Scalar};

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F: Scalar> {
    pub gamma: Param<F, Ix1>,
    pub beta: Param<F, Ix1>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub eps: F,
    pub momentum: F,
}

#[derive(Debug)]
pub struct BnCache<F: Scalar> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
    batch_mean: Array1<F>,
    batch_var: Array1<F>,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Array1::ones(channels)),
            beta: Param::new(Array1::zeros(channels)),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: c(1e-3),
            momentum: c(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Array4<F>, train: bool) -> (Array4<F>, Option<BnCache<F>>) {
        let (b, ch, h, w) = x.dim();
        debug_assert_eq!(ch, self.channels());
        let n = c::<F>((b * h * w) as f64);
        let mut y = Array4::<F>::zeros(x.raw_dim());
        if !train {
            for ci in 0..ch {
                let scale = self.gamma.value[ci] / (self.running_var[ci] + self.eps).sqrt();
                let shift = self.beta.value[ci] - self.running_mean[ci] * scale;
                Zip::from(y.index_axis_mut(Axis(1), ci))
                    .and(x.index_axis(Axis(1), ci))
                    .for_each(|o, &v| *o = v * scale + shift);
            }
            return (y, None);
        }

        let mut mean = Array1::<F>::zeros(ch);
        let mut var = Array1::<F>::zeros(ch);
        for ci in 0..ch {
            let lane = x.index_axis(Axis(1), ci);
            let m = lane.sum() / n;
            let v = lane.fold(F::zero(), |acc, &e| {
                let d = e - m;
                acc + d * d
            }) / n;
            mean[ci] = m;
            var[ci] = v;
        }
        let inv_std = Zip::from(&var).map_collect(|&v| F::one() / (v + self.eps).sqrt());
        let mut xhat = Array4::<F>::zeros(x.raw_dim());
        for ci in 0..ch {
            let (m, is) = (mean[ci], inv_std[ci]);
            let (g, bta) = (self.gamma.value[ci], self.beta.value[ci]);
            Zip::from(xhat.index_axis_mut(Axis(1), ci))
                .and(y.index_axis_mut(Axis(1), ci))
                .and(x.index_axis(Axis(1), ci))
                .for_each(|xh, o, &v| {
                    *xh = (v - m) * is;
                    *o = *xh * g + bta;
                });
        }
        let cache = BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        };
        (y, Some(cache))
    }

    /// Standard batch-norm backward; also folds the cached batch statistics
    /// into the running estimates (unbiased variance).
    pub fn backward(&mut self, cache: &BnCache<F>, dy: &Array4<F>) -> Array4<F> {
        let (b, ch, h, w) = dy.dim();
        let n_usize = b * h * w;
        let n = c::<F>(n_usize as f64);
        let mut dx = Array4::<F>::zeros(dy.raw_dim());
        for ci in 0..ch {
            let dy_l = dy.index_axis(Axis(1), ci);
            let xh_l = cache.xhat.index_axis(Axis(1), ci);
            let sum_dy = dy_l.sum();
            let sum_dy_xhat = Zip::from(&dy_l).and(&xh_l).fold(F::zero(), |acc, &d, &x| {
                acc + d * x
            });
            self.gamma.grad[ci] += sum_dy_xhat;
            self.beta.grad[ci] += sum_dy;
            let k = self.gamma.value[ci] * cache.inv_std[ci] / n;
            Zip::from(dx.index_axis_mut(Axis(1), ci))
                .and(&dy_l)
                .and(&xh_l)
                .for_each(|o, &d, &x| {
                    *o = k * (n * d - sum_dy - x * sum_dy_xhat);
                });
        }

        let m = self.momentum;
        let unbias = if n_usize > 1 {
            c::<F>(n_usize as f64 / (n_usize - 1) as f64)
        } else {
            F::one()
        };
        Zip::from(&mut self.running_mean)
            .and(&cache.batch_mean)
            .for_each(|r, &bm| *r = (F::one() - m) * *r + m * bm);
        Zip::from(&mut self.running_var)
            .and(&cache.batch_var)
            .for_each(|r, &bv| *r = (F::one() - m) * *r + m * bv * unbias);
        dx
    }
}
