//! 2-D convolution via im2col + GEMM, with explicit backward.

use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis, Ix1, Ix4, Zip};

use super::param::Param;
use super::{Initializer, Scalar};

/// Convolution with square kernel, zero padding `k/2` and stride 1 or 2.
/// Bias is optional; it is omitted wherever a batch norm follows.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub weight: Param<F, Ix4>,
    pub bias: Option<Param<F, Ix1>>,
    pub stride: usize,
}

/// Activations retained by the forward pass for the backward pass.
#[derive(Debug)]
pub enum ConvCache<F: Scalar> {
    /// General path: per-image unfolded input columns plus the input shape.
    Cols {
        cols: Vec<Array2<F>>,
        in_dim: (usize, usize, usize, usize),
    },
    /// 1x1/stride-1 path operates on the input directly.
    Input(Array4<F>),
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
        init: &mut Initializer,
    ) -> Self {
        assert!(k % 2 == 1, "only odd kernels are supported");
        let weight = Param::new(init.conv_weight::<F>(c_out, c_in, k));
        let bias = bias.then(|| Param::new(init.zeros1::<F>(c_out)));
        Conv2d {
            weight,
            bias,
            stride,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.dim().2
    }

    pub fn pad(&self) -> usize {
        self.kernel() / 2
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim().0
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        let p = self.pad();
        (
            (h + 2 * p - k) / self.stride + 1,
            (w + 2 * p - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array4<F>, keep: bool) -> (Array4<F>, Option<ConvCache<F>>) {
        let (b, c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.in_channels());
        let (c_out, k) = (self.out_channels(), self.kernel());
        let (ho, wo) = self.out_size(h, w);
        let ckk = c_in * k * k;
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((c_out, ckk))
            .expect("contiguous weight");

        let mut y = Array4::<F>::zeros((b, c_out, ho, wo));
        let fast_1x1 = k == 1 && self.stride == 1;
        let mut cols = Vec::new();
        for bi in 0..b {
            let xb = x.index_axis(Axis(0), bi);
            let y2 = if fast_1x1 {
                let x2 = xb
                    .into_shape_with_order((c_in, h * w))
                    .expect("contiguous input");
                w2.dot(&x2)
            } else {
                let col = im2col(xb, k, self.stride, self.pad(), ho, wo);
                let y2 = w2.dot(&col);
                if keep {
                    cols.push(col);
                }
                y2
            };
            let y3: Array3<F> = y2
                .into_shape_with_order((c_out, ho, wo))
                .expect("gemm output contiguous");
            y.index_axis_mut(Axis(0), bi).assign(&y3);
        }
        if let Some(bias) = &self.bias {
            for (mut lane, &bv) in y.axis_iter_mut(Axis(1)).zip(bias.value.iter()) {
                lane.mapv_inplace(|v| v + bv);
            }
        }
        let cache = keep.then(|| {
            if fast_1x1 {
                ConvCache::Input(x.clone())
            } else {
                ConvCache::Cols {
                    cols,
                    in_dim: x.dim(),
                }
            }
        });
        (y, cache)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache<F>, dy: &Array4<F>) -> Array4<F> {
        let (b, c_out, ho, wo) = dy.dim();
        let (c_in, k) = (self.in_channels(), self.kernel());
        let ckk = c_in * k * k;
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((c_out, ckk))
            .expect("contiguous weight");

        let mut dw2 = Array2::<F>::zeros((c_out, ckk));
        let mut dx = match cache {
            ConvCache::Cols { in_dim, .. } => Array4::<F>::zeros(*in_dim),
            ConvCache::Input(x) => Array4::<F>::zeros(x.dim()),
        };
        for bi in 0..b {
            let dy2 = dy
                .index_axis(Axis(0), bi)
                .into_shape_with_order((c_out, ho * wo))
                .expect("contiguous grad");
            match cache {
                ConvCache::Input(x) => {
                    let x2 = x
                        .index_axis(Axis(0), bi)
                        .into_shape_with_order((c_in, ho * wo))
                        .expect("contiguous input");
                    dw2 = dw2 + dy2.dot(&x2.t());
                    let dx2 = w2.t().dot(&dy2);
                    dx.index_axis_mut(Axis(0), bi).assign(
                        &dx2.into_shape_with_order((c_in, ho, wo))
                            .expect("contiguous"),
                    );
                }
                ConvCache::Cols { cols, in_dim } => {
                    let col = &cols[bi];
                    dw2 = dw2 + dy2.dot(&col.t());
                    let dcol = w2.t().dot(&dy2);
                    col2im(
                        &dcol,
                        dx.index_axis_mut(Axis(0), bi),
                        k,
                        self.stride,
                        self.pad(),
                        (in_dim.2, in_dim.3),
                        (ho, wo),
                    );
                }
            }
        }
        let dw4 = dw2
            .into_shape_with_order((c_out, c_in, k, k))
            .expect("contiguous");
        self.weight.grad += &dw4;
        if let Some(bias) = &mut self.bias {
            for (g, lane) in bias.grad.iter_mut().zip(dy.axis_iter(Axis(1))) {
                *g += lane.sum();
            }
        }
        dx
    }
}

/// Valid output range `[lo, hi)` such that `o*stride + k_off - pad` stays
/// inside `[0, in_size)`.
#[inline]
fn out_range(k_off: usize, pad: usize, stride: usize, in_size: usize, out_size: usize) -> (usize, usize) {
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off).div_ceil(stride)
    };
    let top = in_size as i64 - 1 + pad as i64 - k_off as i64;
    let hi = if top < 0 {
        0
    } else {
        ((top as usize) / stride + 1).min(out_size)
    };
    (lo.min(hi), hi)
}

/// Unfolds `(C,H,W)` into a `(C*K*K, Ho*Wo)` matrix of receptive-field columns.
fn im2col<F: Scalar>(
    x: ArrayView3<'_, F>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<F> {
    let (c, h, w) = x.dim();
    let mut col = Array2::<F>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ki in 0..k {
            let (oy0, oy1) = out_range(ki, pad, stride, h, ho);
            for kj in 0..k {
                let (ox0, ox1) = out_range(kj, pad, stride, w, wo);
                if ox0 >= ox1 {
                    continue;
                }
                let row = (ci * k + ki) * k + kj;
                let mut col_row = col.index_axis_mut(Axis(0), row);
                for oy in oy0..oy1 {
                    let iy = oy * stride + ki - pad;
                    let ix0 = ox0 * stride + kj - pad;
                    let src = x.slice(s![ci, iy, ix0..; stride]);
                    let src = src.slice(s![..ox1 - ox0]);
                    let mut dst = col_row.slice_mut(s![oy * wo + ox0..oy * wo + ox1]);
                    dst.assign(&src);
                }
            }
        }
    }
    col
}

/// Transpose of [`im2col`]: scatter-adds column gradients back onto the
/// input gradient.
fn col2im<F: Scalar>(
    dcol: &Array2<F>,
    mut dx: ndarray::ArrayViewMut3<'_, F>,
    k: usize,
    stride: usize,
    pad: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
) {
    let c = dx.dim().0;
    for ci in 0..c {
        for ki in 0..k {
            let (oy0, oy1) = out_range(ki, pad, stride, h, ho);
            for kj in 0..k {
                let (ox0, ox1) = out_range(kj, pad, stride, w, wo);
                if ox0 >= ox1 {
                    continue;
                }
                let row = (ci * k + ki) * k + kj;
                let col_row = dcol.index_axis(Axis(0), row);
                for oy in oy0..oy1 {
                    let iy = oy * stride + ki - pad;
                    let ix0 = ox0 * stride + kj - pad;
                    let src = col_row.slice(s![oy * wo + ox0..oy * wo + ox1]);
                    let mut dst = dx.slice_mut(s![ci, iy, ix0..; stride]);
                    let mut dst = dst.slice_mut(s![..ox1 - ox0]);
                    Zip::from(&mut dst).and(&src).for_each(|d, &v| *d += v);
                }
            }
        }
    }
}
