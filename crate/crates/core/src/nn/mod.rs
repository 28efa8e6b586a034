//! Layer primitives with explicit forward/backward passes.
//!
//! Nothing here is a framework: each layer is a plain struct holding its
//! parameters and gradients, `forward` is `&self` (no hidden state, safe for
//! concurrent inference) and returns an optional cache that `backward`
//! consumes to accumulate gradients. Batch-norm running statistics are
//! committed during `backward`, so a forward pass never mutates the layer.
//!
//! All layers are generic over [`Scalar`] so the same code runs in `f32`
//! for training and `f64` for finite-difference gradient verification.

pub mod act;
pub mod blocks;
pub mod conv;
pub mod init;
pub mod loss;
pub mod norm;
pub mod ops;
pub mod param;
pub mod pool;

pub use act::{sigmoid, silu, silu_backward};
pub use blocks::{ConvBlock, CspBlock, PoolPyramid};
pub use conv::Conv2d;
pub use init::Initializer;
pub use loss::{composite_loss, composite_loss_with_grad, LossTerms};
pub use norm::BatchNorm2d;
pub use ops::{concat_channels, split_channels, upsample_nearest2, upsample_nearest2_backward};
pub use param::{BufferVisitor, Param, ParamVisitor, Parametrized};
pub use pool::MaxPool2d;

use crate::error::{Error, Result};
use ndarray::Array4;

/// Element type the layers are instantiated with: `f32` or `f64`.
pub trait Scalar: ndarray::NdFloat + num_traits::FromPrimitive {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lifting an `f64` literal into the active scalar type.
#[inline]
pub fn c<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("literal representable in scalar type")
}

/// Rejects batches containing NaN or infinity before they reach a matmul.
pub fn check_finite<F: Scalar>(x: &Array4<F>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}
