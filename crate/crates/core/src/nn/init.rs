//! Seeded parameter initialization.

use ndarray::{Array1, Array4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{c, Scalar};

/// Deterministic weight initializer. Sampling happens in `f64` and is cast
/// into the target scalar type, so `f32` and `f64` builds of the same seed
/// see the same underlying draws.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Fan-in-scaled normal weights for a convolution, `std = sqrt(2 / fan_in)`.
    pub fn conv_weight<F: Scalar>(
        &mut self,
        c_out: usize,
        c_in: usize,
        k: usize,
    ) -> Array4<F> {
        let fan_in = (c_in * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let n = c_out * c_in * k * k;
        let data: Vec<F> = (0..n).map(|_| c(normal.sample(&mut self.rng))).collect();
        Array4::from_shape_vec((c_out, c_in, k, k), data).expect("shape matches draw count")
    }

    pub fn zeros1<F: Scalar>(&mut self, n: usize) -> Array1<F> {
        Array1::zeros(n)
    }

    pub fn uniform1<F: Scalar>(&mut self, n: usize, lo: f64, hi: f64) -> Array1<F> {
        (0..n).map(|_| c(self.rng.gen_range(lo..hi))).collect()
    }
}
