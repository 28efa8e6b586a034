//! Gradient verification for every layer primitive, in double precision.
//!
//! Linear ops (convolution, upsampling) are checked through exact adjoint
//! identities; nonlinear blocks are checked against central finite
//! differences of a scalar probe loss.

use ndarray::{Array4, ArrayViewMutD};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use skyseg_core::nn::param::{ParamVisitor, Parametrized};
use skyseg_core::nn::{
    composite_loss, composite_loss_with_grad, upsample_nearest2, upsample_nearest2_backward,
    Conv2d, ConvBlock, CspBlock, Initializer, MaxPool2d, PoolPyramid,
};

fn rand4(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let n = dim.0 * dim.1 * dim.2 * dim.3;
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Array4::from_shape_vec(dim, data).unwrap()
}

fn dot(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

// --- adjoint identities for linear ops -------------------------------------

#[test]
fn conv_backward_is_adjoint_of_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (k, stride) in [(3usize, 1usize), (3, 2), (1, 1)] {
        let mut conv = Conv2d::<f64>::new(3, 5, k, stride, false, &mut Initializer::new(1));
        let x = rand4(&mut rng, (2, 3, 8, 8));
        let (y, cache) = conv.forward(&x, true);
        let dy = rand4(&mut rng, y.dim());
        let weight_before = conv.weight.value.clone();
        let dx = conv.backward(&cache.unwrap(), &dy);
        // <conv(x), dy> == <x, conv^T(dy)> for the linear (bias-free) map.
        let lhs = dot(&y, &dy);
        let rhs = dot(&x, &dx);
        assert!(
            rel_err(lhs, rhs) < 1e-10,
            "k={k} s={stride}: {lhs} vs {rhs}"
        );
        // The same pairing through the weight gradient.
        let wg: f64 = conv
            .weight
            .grad
            .iter()
            .zip(weight_before.iter())
            .map(|(g, w)| g * w)
            .sum();
        assert!(rel_err(lhs, wg) < 1e-10, "k={k} s={stride} weight pairing");
    }
}

#[test]
fn upsample_backward_is_adjoint_of_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand4(&mut rng, (2, 4, 5, 6));
    let y = upsample_nearest2(&x);
    assert_eq!(y.dim(), (2, 4, 10, 12));
    let dy = rand4(&mut rng, y.dim());
    let dx = upsample_nearest2_backward(&dy);
    assert!(rel_err(dot(&y, &dy), dot(&x, &dx)) < 1e-12);
}

#[test]
fn maxpool_matches_bruteforce_and_routes_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pool = MaxPool2d::new(5, 1, 2);
    let x = rand4(&mut rng, (1, 2, 7, 9));
    let (y, cache) = pool.forward(&x, true);
    let (_, _, h, w) = x.dim();
    for ci in 0..2 {
        for oy in 0..h {
            for ox in 0..w {
                let mut best = f64::NEG_INFINITY;
                for ky in oy.saturating_sub(2)..(oy + 3).min(h) {
                    for kx in ox.saturating_sub(2)..(ox + 3).min(w) {
                        best = best.max(x[[0, ci, ky, kx]]);
                    }
                }
                assert_eq!(y[[0, ci, oy, ox]], best);
            }
        }
    }
    // Each output routes its gradient to exactly one input: sums must match.
    let dy = rand4(&mut rng, y.dim());
    let dx = pool.backward(&cache.unwrap(), &dy);
    assert!(rel_err(dy.sum(), dx.sum()) < 1e-12);
}

// --- finite differences for nonlinear blocks --------------------------------

trait Block: Parametrized<f64> + Clone {
    fn run(&self, x: &Array4<f64>) -> (Array4<f64>, BlockCache);
    fn back(&mut self, cache: &BlockCache, dy: &Array4<f64>) -> Array4<f64>;
}

enum BlockCache {
    Conv(skyseg_core::nn::blocks::ConvBlockCache<f64>),
    Csp(skyseg_core::nn::blocks::CspCache<f64>),
    Pyr(skyseg_core::nn::blocks::PoolPyramidCache<f64>),
}

impl Block for ConvBlock<f64> {
    fn run(&self, x: &Array4<f64>) -> (Array4<f64>, BlockCache) {
        let (y, c) = self.forward(x, true);
        (y, BlockCache::Conv(c.unwrap()))
    }
    fn back(&mut self, cache: &BlockCache, dy: &Array4<f64>) -> Array4<f64> {
        match cache {
            BlockCache::Conv(c) => self.backward(c, dy),
            _ => unreachable!(),
        }
    }
}

impl Block for CspBlock<f64> {
    fn run(&self, x: &Array4<f64>) -> (Array4<f64>, BlockCache) {
        let (y, c) = self.forward(x, true);
        (y, BlockCache::Csp(c.unwrap()))
    }
    fn back(&mut self, cache: &BlockCache, dy: &Array4<f64>) -> Array4<f64> {
        match cache {
            BlockCache::Csp(c) => self.backward(c, dy),
            _ => unreachable!(),
        }
    }
}

impl Block for PoolPyramid<f64> {
    fn run(&self, x: &Array4<f64>) -> (Array4<f64>, BlockCache) {
        let (y, c) = self.forward(x, true);
        (y, BlockCache::Pyr(c.unwrap()))
    }
    fn back(&mut self, cache: &BlockCache, dy: &Array4<f64>) -> Array4<f64> {
        match cache {
            BlockCache::Pyr(c) => self.backward(c, dy),
            _ => unreachable!(),
        }
    }
}

fn perturbed<B: Block>(block: &B, coord: usize, eps: f64) -> B {
    struct P {
        coord: usize,
        at: usize,
        eps: f64,
    }
    impl ParamVisitor<f64> for P {
        fn visit(&mut self, _: &str, mut value: ArrayViewMutD<'_, f64>, _: ArrayViewMutD<'_, f64>) {
            let len = value.len();
            if self.coord >= self.at && self.coord < self.at + len {
                *value.iter_mut().nth(self.coord - self.at).unwrap() += self.eps;
            }
            self.at += len;
        }
    }
    let mut out = block.clone();
    out.visit_params(
        "",
        &mut P {
            coord,
            at: 0,
            eps,
        },
    );
    out
}

fn grad_at<B: Block>(block: &mut B, coord: usize) -> f64 {
    struct G {
        coord: usize,
        at: usize,
        out: f64,
    }
    impl ParamVisitor<f64> for G {
        fn visit(
            &mut self,
            _: &str,
            _: ArrayViewMutD<'_, f64>,
            mut grad: ArrayViewMutD<'_, f64>,
        ) {
            let len = grad.len();
            if self.coord >= self.at && self.coord < self.at + len {
                self.out = *grad.iter_mut().nth(self.coord - self.at).unwrap();
            }
            self.at += len;
        }
    }
    let mut g = G {
        coord,
        at: 0,
        out: f64::NAN,
    };
    block.visit_params("", &mut g);
    g.out
}

/// Probe loss sum(run(x) * r) checked against central differences on a
/// sample of parameter coordinates and input coordinates.
fn fd_check_block<B: Block>(block: &B, x: &Array4<f64>, label: &str) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (y, cache) = block.run(x);
    let r = rand4(&mut rng, y.dim());
    let mut analytic = block.clone();
    let dx = analytic.back(&cache, &r);

    let n_params = skyseg_core::nn::param::count_params(&mut block.clone());
    let eps = 1e-5;
    let samples: Vec<usize> = (0..40)
        .map(|_| rng.gen_range(0..n_params))
        .collect();
    for &coord in &samples {
        let plus = perturbed(block, coord, eps);
        let minus = perturbed(block, coord, -eps);
        let lp = dot(&plus.run(x).0, &r);
        let lm = dot(&minus.run(x).0, &r);
        let fd = (lp - lm) / (2.0 * eps);
        let an = grad_at(&mut analytic, coord);
        assert!(
            rel_err(an, fd) < 1e-6 || (an - fd).abs() < 1e-9,
            "{label} param {coord}: analytic {an} vs fd {fd}"
        );
    }

    for _ in 0..20 {
        let (bi, ci, yi, xi) = (
            rng.gen_range(0..x.dim().0),
            rng.gen_range(0..x.dim().1),
            rng.gen_range(0..x.dim().2),
            rng.gen_range(0..x.dim().3),
        );
        let mut xp = x.clone();
        xp[[bi, ci, yi, xi]] += eps;
        let mut xm = x.clone();
        xm[[bi, ci, yi, xi]] -= eps;
        let fd = (dot(&block.run(&xp).0, &r) - dot(&block.run(&xm).0, &r)) / (2.0 * eps);
        let an = dx[[bi, ci, yi, xi]];
        assert!(
            rel_err(an, fd) < 1e-6 || (an - fd).abs() < 1e-9,
            "{label} input ({bi},{ci},{yi},{xi}): analytic {an} vs fd {fd}"
        );
    }
}

#[test]
fn convblock_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for stride in [1usize, 2] {
        let block = ConvBlock::<f64>::new(3, 6, 3, stride, &mut Initializer::new(2));
        let x = rand4(&mut rng, (2, 3, 6, 6));
        fd_check_block(&block, &x, &format!("convblock s{stride}"));
    }
}

#[test]
fn cspblock_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let block = CspBlock::<f64>::new(6, 6, 2, &mut Initializer::new(3));
    let x = rand4(&mut rng, (2, 6, 5, 5));
    fd_check_block(&block, &x, "cspblock");
}

#[test]
fn poolpyramid_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let block = PoolPyramid::<f64>::new(6, &mut Initializer::new(4));
    let x = rand4(&mut rng, (2, 6, 5, 5));
    fd_check_block(&block, &x, "poolpyramid");
}

// --- loss oracles -----------------------------------------------------------

#[test]
fn bce_at_uniform_probability_is_ln2_per_pixel() {
    let logits = Array4::<f64>::zeros((1, 1, 4, 4));
    let target = Array4::<f64>::ones((1, 1, 4, 4));
    let terms = composite_loss(&logits, &target, (1.0, 0.0)).unwrap();
    assert!((terms.bce - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((terms.total - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn saturated_prediction_drives_loss_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let target =
        Array4::<f64>::from_shape_fn((1, 1, 6, 6), |_| f64::from(rng.gen_bool(0.5)));
    let logits = target.mapv(|t| if t > 0.5 { 40.0 } else { -40.0 });
    let terms = composite_loss(&logits, &target, (1.0, 1.0)).unwrap();
    assert!(terms.total < 1e-6, "saturated loss {}", terms.total);
    assert!(terms.bce >= 0.0 && terms.dice >= 0.0);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    // 1x1x4x4 probe in double precision, relative tolerance 1e-3.
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let logits = rand4(&mut rng, (1, 1, 4, 4));
    let target =
        Array4::<f64>::from_shape_fn((1, 1, 4, 4), |_| f64::from(rng.gen_bool(0.5)));
    let weights = (1.0, 1.0);
    let (_, grad) = composite_loss_with_grad(&logits, &target, weights).unwrap();
    let eps = 1e-6;
    for idx in 0..16 {
        let (yi, xi) = (idx / 4, idx % 4);
        let mut lp = logits.clone();
        lp[[0, 0, yi, xi]] += eps;
        let mut lm = logits.clone();
        lm[[0, 0, yi, xi]] -= eps;
        let fp = composite_loss(&lp, &target, weights).unwrap().total;
        let fm = composite_loss(&lm, &target, weights).unwrap().total;
        let fd = (fp - fm) / (2.0 * eps);
        let an = grad[[0, 0, yi, xi]];
        assert!(
            rel_err(an, fd) < 1e-3,
            "logit {idx}: analytic {an} vs fd {fd}"
        );
    }
}

#[test]
fn loss_rejects_bad_inputs() {
    let logits = Array4::<f64>::zeros((1, 1, 4, 4));
    let bad_shape = Array4::<f64>::zeros((1, 1, 4, 5));
    assert!(matches!(
        composite_loss(&logits, &bad_shape, (1.0, 1.0)),
        Err(skyseg_core::Error::Shape(_))
    ));
    let bad_target = Array4::<f64>::from_elem((1, 1, 4, 4), 0.5);
    assert!(matches!(
        composite_loss(&logits, &bad_target, (1.0, 1.0)),
        Err(skyseg_core::Error::Data(_))
    ));
    let bad_logits = Array4::<f64>::from_elem((1, 1, 4, 4), f64::NAN);
    let target = Array4::<f64>::zeros((1, 1, 4, 4));
    assert!(matches!(
        composite_loss(&bad_logits, &target, (1.0, 1.0)),
        Err(skyseg_core::Error::Numeric(_))
    ));
}
