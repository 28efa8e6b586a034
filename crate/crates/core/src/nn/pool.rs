//! Max pooling with argmax bookkeeping for the backward pass.

use ndarray::{Array4, Axis};

use super::Scalar;

/// Square-window max pool. Out-of-bounds window positions are ignored
/// (equivalent to padding with negative infinity). Ties resolve to the
/// first maximum in scan order, deterministically.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct PoolCache {
    /// Flat `iy * W + ix` source index per output element.
    argmax: Array4<u32>,
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward<F: Scalar>(&self, x: &Array4<F>, keep: bool) -> (Array4<F>, Option<PoolCache>) {
        let (b, c, h, w) = x.dim();
        let (ho, wo) = self.out_size(h, w);
        let mut y = Array4::<F>::zeros((b, c, ho, wo));
        let mut argmax = Array4::<u32>::zeros((b, c, ho, wo));
        for bi in 0..b {
            for ci in 0..c {
                let plane = x.index_axis(Axis(0), bi);
                let plane = plane.index_axis(Axis(0), ci);
                for oy in 0..ho {
                    let y0 = (oy * self.stride) as isize - self.pad as isize;
                    for ox in 0..wo {
                        let x0 = (ox * self.stride) as isize - self.pad as isize;
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0u32;
                        for ky in 0..self.kernel {
                            let iy = y0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = x0 + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let v = plane[[iy as usize, ix as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = (iy as usize * w + ix as usize) as u32;
                                }
                            }
                        }
                        y[[bi, ci, oy, ox]] = best;
                        argmax[[bi, ci, oy, ox]] = best_idx;
                    }
                }
            }
        }
        let cache = keep.then_some(PoolCache {
            argmax,
            in_dim: (b, c, h, w),
        });
        (y, cache)
    }

    pub fn backward<F: Scalar>(&self, cache: &PoolCache, dy: &Array4<F>) -> Array4<F> {
        let (b, c, ho, wo) = dy.dim();
        let (_, _, h, w) = cache.in_dim;
        let mut dx = Array4::<F>::zeros(cache.in_dim);
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let idx = cache.argmax[[bi, ci, oy, ox]] as usize;
                        let (iy, ix) = (idx / w, idx % w);
                        debug_assert!(iy < h);
                        dx[[bi, ci, iy, ix]] += dy[[bi, ci, oy, ox]];
                    }
                }
            }
        }
        dx
    }
}
