//! Activations: numerically stable sigmoid and SiLU (`x * sigmoid(x)`).

use ndarray::Array4;

use super::Scalar;

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn silu<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| v * sigmoid(v))
}

/// `d silu(x)/dx = s(x) * (1 + x * (1 - s(x)))`, chained with `dy`.
pub fn silu_backward<F: Scalar>(x: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let s = sigmoid(v);
        *d = *d * s * (F::one() + v * (F::one() - s));
    });
    dx
}
