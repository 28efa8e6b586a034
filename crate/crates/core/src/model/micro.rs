//! A reduced-depth assembly of the same blocks, small enough (< 10k
//! parameters) to verify analytic gradients against central finite
//! differences in double precision. Inputs need only be divisible by 4,
//! so 8x8 probes are cheap.

use ndarray::Array4;

use crate::error::{Error, Result};
use crate::nn::blocks::{ConvBlockCache, CspCache, PoolPyramidCache};
use crate::nn::conv::ConvCache;
use crate::nn::param::{join, BufferVisitor, ParamVisitor, Parametrized};
use crate::nn::{
    check_finite, concat_channels, split_channels, upsample_nearest2, upsample_nearest2_backward,
    Conv2d, ConvBlock, CspBlock, Initializer, PoolPyramid, Scalar,
};

#[derive(Debug, Clone)]
pub struct MicroNet<F: Scalar> {
    pub in_channels: usize,
    param_count: usize,
    stem: ConvBlock<F>,
    down: ConvBlock<F>,
    block: CspBlock<F>,
    pyramid: PoolPyramid<F>,
    up1: ConvBlock<F>,
    up0: ConvBlock<F>,
    head: Conv2d<F>,
}

pub struct MicroCache<F: Scalar> {
    stem: ConvBlockCache<F>,
    down: ConvBlockCache<F>,
    block: CspCache<F>,
    pyramid: PoolPyramidCache<F>,
    up1: ConvBlockCache<F>,
    up0: ConvBlockCache<F>,
    head: ConvCache<F>,
}

const C_STEM: usize = 8;
const C_DEEP: usize = 12;

impl<F: Scalar> MicroNet<F> {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let init = &mut Initializer::new(seed);
        let mut net = MicroNet {
            in_channels,
            param_count: 0,
            stem: ConvBlock::new(in_channels, C_STEM, 3, 2, init),
            down: ConvBlock::new(C_STEM, C_DEEP, 3, 2, init),
            block: CspBlock::new(C_DEEP, C_DEEP, 1, init),
            pyramid: PoolPyramid::new(C_DEEP, init),
            up1: ConvBlock::new(C_DEEP + C_STEM, C_STEM, 3, 1, init),
            up0: ConvBlock::new(C_STEM, C_STEM, 3, 1, init),
            head: Conv2d::new(C_STEM, 1, 1, 1, true, init),
        };
        net.param_count = crate::nn::param::count_params(&mut net);
        net
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {c}",
                self.in_channels
            )));
        }
        if h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must have height and width divisible by 4"
            )));
        }
        check_finite(x, "network input")
    }

    fn run(&self, x: &Array4<F>, train: bool) -> Result<(Array4<F>, Option<MicroCache<F>>)> {
        self.check_input(x)?;
        let (p1, stem_c) = self.stem.forward(x, train);
        let (t, down_c) = self.down.forward(&p1, train);
        let (t, block_c) = self.block.forward(&t, train);
        let (deep, pyr_c) = self.pyramid.forward(&t, train);
        let u = upsample_nearest2(&deep);
        let (d, up1_c) = self
            .up1
            .forward(&concat_channels(&[u.view(), p1.view()]), train);
        let u = upsample_nearest2(&d);
        let (d, up0_c) = self.up0.forward(&u, train);
        let (logits, head_c) = self.head.forward(&d, train);
        let cache = train.then(|| MicroCache {
            stem: stem_c.expect("train cache"),
            down: down_c.expect("train cache"),
            block: block_c.expect("train cache"),
            pyramid: pyr_c.expect("train cache"),
            up1: up1_c.expect("train cache"),
            up0: up0_c.expect("train cache"),
            head: head_c.expect("train cache"),
        });
        Ok((logits, cache))
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn forward_train(&self, x: &Array4<F>) -> Result<(Array4<F>, MicroCache<F>)> {
        let (y, cache) = self.run(x, true)?;
        Ok((y, cache.expect("train cache")))
    }

    pub fn backward(&mut self, cache: &MicroCache<F>, dlogits: &Array4<F>) {
        let dd = self.head.backward(&cache.head, dlogits);
        let dd = self.up0.backward(&cache.up0, &dd);
        let dd = upsample_nearest2_backward(&dd);
        let dcat = self.up1.backward(&cache.up1, &dd);
        let mut parts = split_channels(&dcat, &[C_DEEP, C_STEM]);
        let dp1_skip = parts.pop().expect("two parts");
        let ddeep = upsample_nearest2_backward(&parts.pop().expect("one part"));
        let g = self.pyramid.backward(&cache.pyramid, &ddeep);
        let g = self.block.backward(&cache.block, &g);
        let mut dp1 = self.down.backward(&cache.down, &g);
        dp1 += &dp1_skip;
        let _ = self.stem.backward(&cache.stem, &dp1);
    }
}

impl<F: Scalar> Parametrized<F> for MicroNet<F> {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor<F>) {
        self.stem.visit_params(&join(prefix, "stem"), v);
        self.down.visit_params(&join(prefix, "down"), v);
        self.block.visit_params(&join(prefix, "block"), v);
        self.pyramid.visit_params(&join(prefix, "pyramid"), v);
        self.up1.visit_params(&join(prefix, "up1"), v);
        self.up0.visit_params(&join(prefix, "up0"), v);
        v.visit(
            &join(prefix, "head.weight"),
            self.head.weight.value.view_mut().into_dyn(),
            self.head.weight.grad.view_mut().into_dyn(),
        );
        let bias = self.head.bias.as_mut().expect("head has bias");
        v.visit(
            &join(prefix, "head.bias"),
            bias.value.view_mut().into_dyn(),
            bias.grad.view_mut().into_dyn(),
        );
    }

    fn visit_buffers(&mut self, prefix: &str, v: &mut dyn BufferVisitor<F>) {
        self.stem.visit_buffers(&join(prefix, "stem"), v);
        self.down.visit_buffers(&join(prefix, "down"), v);
        self.block.visit_buffers(&join(prefix, "block"), v);
        self.pyramid.visit_buffers(&join(prefix, "pyramid"), v);
        self.up1.visit_buffers(&join(prefix, "up1"), v);
        self.up0.visit_buffers(&join(prefix, "up0"), v);
    }
}
