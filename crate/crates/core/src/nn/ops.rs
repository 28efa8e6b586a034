//! Stateless tensor ops: nearest-neighbor upsampling and channel concat.

use ndarray::{s, Array4, ArrayView4};

use super::Scalar;

/// Nearest-neighbor 2x upsample.
pub fn upsample_nearest2<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (b, c, h, w) = x.dim();
    let mut y = Array4::<F>::zeros((b, c, 2 * h, 2 * w));
    for dy in 0..2 {
        for dx in 0..2 {
            y.slice_mut(s![.., .., dy..; 2, dx..; 2]).assign(x);
        }
    }
    y
}

/// Gradient of [`upsample_nearest2`]: each input cell collects its 2x2 block.
pub fn upsample_nearest2_backward<F: Scalar>(dy: &Array4<F>) -> Array4<F> {
    let (b, c, h2, w2) = dy.dim();
    debug_assert!(h2 % 2 == 0 && w2 % 2 == 0);
    let mut dx = Array4::<F>::zeros((b, c, h2 / 2, w2 / 2));
    for oy in 0..2 {
        for ox in 0..2 {
            dx += &dy.slice(s![.., .., oy..; 2, ox..; 2]);
        }
    }
    dx
}

/// Concatenates along the channel axis into a standard-layout array.
pub fn concat_channels<F: Scalar>(parts: &[ArrayView4<'_, F>]) -> Array4<F> {
    let (b, _, h, w) = parts[0].dim();
    let total: usize = parts.iter().map(|p| p.dim().1).sum();
    let mut out = Array4::<F>::zeros((b, total, h, w));
    let mut at = 0;
    for p in parts {
        let c = p.dim().1;
        debug_assert_eq!((p.dim().0, p.dim().2, p.dim().3), (b, h, w));
        out.slice_mut(s![.., at..at + c, .., ..]).assign(p);
        at += c;
    }
    out
}

/// Splits a channel-axis gradient back into per-part gradients.
pub fn split_channels<F: Scalar>(dy: &Array4<F>, sizes: &[usize]) -> Vec<Array4<F>> {
    debug_assert_eq!(sizes.iter().sum::<usize>(), dy.dim().1);
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &sz in sizes {
        out.push(dy.slice(s![.., at..at + sz, .., ..]).to_owned());
        at += sz;
    }
    out
}
