//! Composite blocks the network is assembled from.
//!
//! * [`ConvBlock`] — convolution + batch norm + SiLU.
//! * [`CspBlock`] — split / bottleneck-stack / merge block with a residual
//!   bottleneck pair, repeat count set per stage.
//! * [`PoolPyramid`] — three chained 5x5 max pools concatenated with the
//!   input projection, applied once at the deepest encoder stage.

use ndarray::{s, Array4};

use super::act::{silu, silu_backward};
use super::conv::{Conv2d, ConvCache};
use super::norm::{BatchNorm2d, BnCache};
use super::ops::{concat_channels, split_channels};
use super::param::{join, BufferVisitor, ParamVisitor, Parametrized};
use super::pool::{MaxPool2d, PoolCache};
use super::{Initializer, Scalar};

// ---------------------------------------------------------------------------
// ConvBlock

#[derive(Debug, Clone)]
pub struct ConvBlock<F: Scalar> {
    pub conv: Conv2d<F>,
    pub bn: BatchNorm2d<F>,
}

#[derive(Debug)]
pub struct ConvBlockCache<F: Scalar> {
    conv: ConvCache<F>,
    bn: BnCache<F>,
    /// Input of the SiLU, i.e. the batch-norm output.
    act_in: Array4<F>,
}

impl<F: Scalar> ConvBlock<F> {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, init: &mut Initializer) -> Self {
        ConvBlock {
            conv: Conv2d::new(c_in, c_out, k, stride, false, init),
            bn: BatchNorm2d::new(c_out),
        }
    }

    pub fn forward(&self, x: &Array4<F>, train: bool) -> (Array4<F>, Option<ConvBlockCache<F>>) {
        let (z, conv_cache) = self.conv.forward(x, train);
        let (a, bn_cache) = self.bn.forward(&z, train);
        let y = silu(&a);
        let cache = train.then(|| ConvBlockCache {
            conv: conv_cache.expect("conv cache in train mode"),
            bn: bn_cache.expect("bn cache in train mode"),
            act_in: a,
        });
        (y, cache)
    }

    pub fn backward(&mut self, cache: &ConvBlockCache<F>, dy: &Array4<F>) -> Array4<F> {
        let da = silu_backward(&cache.act_in, dy);
        let dz = self.bn.backward(&cache.bn, &da);
        self.conv.backward(&cache.conv, &dz)
    }
}

impl<F: Scalar> Parametrized<F> for ConvBlock<F> {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor<F>) {
        v.visit(
            &join(prefix, "conv.weight"),
            self.conv.weight.value.view_mut().into_dyn(),
            self.conv.weight.grad.view_mut().into_dyn(),
        );
        v.visit(
            &join(prefix, "bn.gamma"),
            self.bn.gamma.value.view_mut().into_dyn(),
            self.bn.gamma.grad.view_mut().into_dyn(),
        );
        v.visit(
            &join(prefix, "bn.beta"),
            self.bn.beta.value.view_mut().into_dyn(),
            self.bn.beta.grad.view_mut().into_dyn(),
        );
    }

    fn visit_buffers(&mut self, prefix: &str, v: &mut dyn BufferVisitor<F>) {
        v.visit(
            &join(prefix, "bn.running_mean"),
            self.bn.running_mean.view_mut().into_dyn(),
        );
        v.visit(
            &join(prefix, "bn.running_var"),
            self.bn.running_var.view_mut().into_dyn(),
        );
    }
}

// ---------------------------------------------------------------------------
// Bottleneck: two 3x3 conv blocks with a residual connection.

#[derive(Debug, Clone)]
pub struct Bottleneck<F: Scalar> {
    pub c1: ConvBlock<F>,
    pub c2: ConvBlock<F>,
}

#[derive(Debug)]
pub struct BottleneckCache<F: Scalar> {
    c1: ConvBlockCache<F>,
    c2: ConvBlockCache<F>,
}

impl<F: Scalar> Bottleneck<F> {
    pub fn new(channels: usize, init: &mut Initializer) -> Self {
        Bottleneck {
            c1: ConvBlock::new(channels, channels, 3, 1, init),
            c2: ConvBlock::new(channels, channels, 3, 1, init),
        }
    }

    pub fn forward(&self, x: &Array4<F>, train: bool) -> (Array4<F>, Option<BottleneckCache<F>>) {
        let (h, c1) = self.c1.forward(x, train);
        let (mut y, c2) = self.c2.forward(&h, train);
        y += x;
        let cache = train.then(|| BottleneckCache {
            c1: c1.expect("cache"),
            c2: c2.expect("cache"),
        });
        (y, cache)
    }

    pub fn backward(&mut self, cache: &BottleneckCache<F>, dy: &Array4<F>) -> Array4<F> {
        let dh = self.c2.backward(&cache.c2, dy);
        let mut dx = self.c1.backward(&cache.c1, &dh);
        dx += dy; // residual path
        dx
    }
}

impl<F: Scalar> Parametrized<F> for Bottleneck<F> {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor<F>) {
        self.c1.visit_params(&join(prefix, "c1"), v);
        self.c2.visit_params(&join(prefix, "c2"), v);
    }

    fn visit_buffers(&mut self, prefix: &str, v: &mut dyn BufferVisitor<F>) {
        self.c1.visit_buffers(&join(prefix, "c1"), v);
        self.c2.visit_buffers(&join(prefix, "c2"), v);
    }
}

// ---------------------------------------------------------------------------
// CspBlock

/// Split / stack / merge block. A 1x1 projection widens the input to two
/// halves; one half runs through `n` residual bottlenecks; every intermediate
/// (the untouched half, the stack input, and each stack output) is
/// concatenated and merged by a second 1x1 projection.
#[derive(Debug, Clone)]
pub struct CspBlock<F: Scalar> {
    pub cv1: ConvBlock<F>,
    pub cv2: ConvBlock<F>,
    pub blocks: Vec<Bottleneck<F>>,
    half: usize,
}

#[derive(Debug)]
pub struct CspCache<F: Scalar> {
    cv1: ConvBlockCache<F>,
    cv2: ConvBlockCache<F>,
    blocks: Vec<BottleneckCache<F>>,
}

impl<F: Scalar> CspBlock<F> {
    pub fn new(c_in: usize, c_out: usize, repeats: usize, init: &mut Initializer) -> Self {
        assert!(repeats >= 1);
        let half = (c_out / 2).max(1);
        let cv1 = ConvBlock::new(c_in, 2 * half, 1, 1, init);
        let blocks = (0..repeats).map(|_| Bottleneck::new(half, init)).collect();
        let cv2 = ConvBlock::new((2 + repeats) * half, c_out, 1, 1, init);
        CspBlock {
            cv1,
            cv2,
            blocks,
            half,
        }
    }

    pub fn forward(&self, x: &Array4<F>, train: bool) -> (Array4<F>, Option<CspCache<F>>) {
        let (y1, cv1_cache) = self.cv1.forward(x, train);
        let a = y1.slice(s![.., ..self.half, .., ..]).to_owned();
        let b = y1.slice(s![.., self.half.., .., ..]).to_owned();
        let mut parts = vec![a, b];
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (nxt, cache) = blk.forward(parts.last().expect("non-empty"), train);
            if let Some(cache) = cache {
                block_caches.push(cache);
            }
            parts.push(nxt);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let merged = concat_channels(&views);
        let (y, cv2_cache) = self.cv2.forward(&merged, train);
        let cache = train.then(|| CspCache {
            cv1: cv1_cache.expect("cache"),
            cv2: cv2_cache.expect("cache"),
            blocks: block_caches,
        });
        (y, cache)
    }

    pub fn backward(&mut self, cache: &CspCache<F>, dy: &Array4<F>) -> Array4<F> {
        let dmerged = self.cv2.backward(&cache.cv2, dy);
        let n = self.blocks.len();
        let sizes = vec![self.half; 2 + n];
        let mut dparts = split_channels(&dmerged, &sizes);
        // dparts[0] -> a, dparts[1] -> stack input, dparts[2 + i] -> output of block i.
        for i in (0..n).rev() {
            let dout = dparts[2 + i].clone();
            let din = self.blocks[i].backward(&cache.blocks[i], &dout);
            dparts[1 + i] += &din;
        }
        let dy1 = concat_channels(&[dparts[0].view(), dparts[1].view()]);
        self.cv1.backward(&cache.cv1, &dy1)
    }
}

impl<F: Scalar> Parametrized<F> for CspBlock<F> {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor<F>) {
        self.cv1.visit_params(&join(prefix, "cv1"), v);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_params(&join(prefix, &format!("m{i}")), v);
        }
        self.cv2.visit_params(&join(prefix, "cv2"), v);
    }

    fn visit_buffers(&mut self, prefix: &str, v: &mut dyn BufferVisitor<F>) {
        self.cv1.visit_buffers(&join(prefix, "cv1"), v);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_buffers(&join(prefix, &format!("m{i}")), v);
        }
        self.cv2.visit_buffers(&join(prefix, "cv2"), v);
    }
}

// ---------------------------------------------------------------------------
// PoolPyramid

/// Projection, three chained max pools, concat, merge.
#[derive(Debug, Clone)]
pub struct PoolPyramid<F: Scalar> {
    pub cv1: ConvBlock<F>,
    pub cv2: ConvBlock<F>,
    pub pool: MaxPool2d,
}

#[derive(Debug)]
pub struct PoolPyramidCache<F: Scalar> {
    cv1: ConvBlockCache<F>,
    cv2: ConvBlockCache<F>,
    pools: [PoolCache; 3],
}

impl<F: Scalar> PoolPyramid<F> {
    pub fn new(channels: usize, init: &mut Initializer) -> Self {
        let half = (channels / 2).max(1);
        PoolPyramid {
            cv1: ConvBlock::new(channels, half, 1, 1, init),
            cv2: ConvBlock::new(4 * half, channels, 1, 1, init),
            pool: MaxPool2d::new(5, 1, 2),
        }
    }

    pub fn forward(&self, x: &Array4<F>, train: bool) -> (Array4<F>, Option<PoolPyramidCache<F>>) {
        let (y0, cv1_cache) = self.cv1.forward(x, train);
        let (p1, k1) = self.pool.forward(&y0, train);
        let (p2, k2) = self.pool.forward(&p1, train);
        let (p3, k3) = self.pool.forward(&p2, train);
        let merged = concat_channels(&[y0.view(), p1.view(), p2.view(), p3.view()]);
        let (y, cv2_cache) = self.cv2.forward(&merged, train);
        let cache = train.then(|| PoolPyramidCache {
            cv1: cv1_cache.expect("cache"),
            cv2: cv2_cache.expect("cache"),
            pools: [
                k1.expect("cache"),
                k2.expect("cache"),
                k3.expect("cache"),
            ],
        });
        (y, cache)
    }

    pub fn backward(&mut self, cache: &PoolPyramidCache<F>, dy: &Array4<F>) -> Array4<F> {
        let dmerged = self.cv2.backward(&cache.cv2, dy);
        let half = dmerged.dim().1 / 4;
        let mut dparts = split_channels(&dmerged, &[half, half, half, half]);
        let dp3 = dparts.pop().expect("4 parts");
        let mut dp2 = dparts.pop().expect("3 parts");
        let mut dp1 = dparts.pop().expect("2 parts");
        let mut dy0 = dparts.pop().expect("1 part");
        dp2 += &self.pool.backward(&cache.pools[2], &dp3);
        dp1 += &self.pool.backward(&cache.pools[1], &dp2);
        dy0 += &self.pool.backward(&cache.pools[0], &dp1);
        self.cv1.backward(&cache.cv1, &dy0)
    }
}

impl<F: Scalar> Parametrized<F> for PoolPyramid<F> {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor<F>) {
        self.cv1.visit_params(&join(prefix, "cv1"), v);
        self.cv2.visit_params(&join(prefix, "cv2"), v);
    }

    fn visit_buffers(&mut self, prefix: &str, v: &mut dyn BufferVisitor<F>) {
        self.cv1.visit_buffers(&join(prefix, "cv1"), v);
        self.cv2.visit_buffers(&join(prefix, "cv2"), v);
    }
}
