//! The encoder/neck/decoder segmentation network.
//!
//! * Encoder: a stride-2 stem plus four stages of stride-2 downsample +
//!   split/stack/merge block, with a pooling pyramid at the deepest stage.
//!   Produces features at strides 2, 4, 8, 16, 32.
//! * Neck: top-down fusion from stride 32 to stride 8 (upsample, concat with
//!   the encoder level, fuse), then a bottom-up refinement back to stride 32.
//!   The stride-8 fused map feeds the decoder; the refined 16/32 maps are
//!   terminal and exposed through [`Network::fused_maps`] for inspection.
//! * Decoder: three upsampling stages back to full resolution, consuming the
//!   encoder skips at strides 4 and 2, then a 1x1 projection to class logits.
//!
//! `forward` is `&self` and deterministic, so one network can serve
//! concurrent inference callers; training (gradient accumulation, batch-norm
//! statistics) requires `&mut self` via `backward`.

use ndarray::Array4;

use super::{FeaturePyramid, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::blocks::{ConvBlockCache, CspCache, PoolPyramidCache};
use crate::nn::conv::ConvCache;
use crate::nn::param::{join, BufferVisitor, ParamVisitor, Parametrized};
use crate::nn::{
    check_finite, concat_channels, split_channels, upsample_nearest2, upsample_nearest2_backward,
    Conv2d, ConvBlock, CspBlock, Initializer, PoolPyramid, Scalar,
};

#[derive(Debug, Clone)]
pub struct Network<F: Scalar> {
    pub spec: NetworkSpec,
    param_count: usize,

    stem: ConvBlock<F>,
    s2_down: ConvBlock<F>,
    s2_block: CspBlock<F>,
    s3_down: ConvBlock<F>,
    s3_block: CspBlock<F>,
    s4_down: ConvBlock<F>,
    s4_block: CspBlock<F>,
    s5_down: ConvBlock<F>,
    s5_block: CspBlock<F>,
    s5_pyramid: PoolPyramid<F>,

    td4: CspBlock<F>,
    td3: CspBlock<F>,
    bu4_down: ConvBlock<F>,
    bu4_block: CspBlock<F>,
    bu5_down: ConvBlock<F>,
    bu5_block: CspBlock<F>,

    d4: ConvBlock<F>,
    d2: ConvBlock<F>,
    d1: ConvBlock<F>,
    head: Conv2d<F>,
}

/// Per-pass activations needed by `backward`.
pub struct NetworkCache<F: Scalar> {
    stem: ConvBlockCache<F>,
    s2_down: ConvBlockCache<F>,
    s2_block: CspCache<F>,
    s3_down: ConvBlockCache<F>,
    s3_block: CspCache<F>,
    s4_down: ConvBlockCache<F>,
    s4_block: CspCache<F>,
    s5_down: ConvBlockCache<F>,
    s5_block: CspCache<F>,
    s5_pyramid: PoolPyramidCache<F>,
    td4: CspCache<F>,
    td3: CspCache<F>,
    d4: ConvBlockCache<F>,
    d2: ConvBlockCache<F>,
    d1: ConvBlockCache<F>,
    head: ConvCache<F>,
}

/// Neck outputs after top-down fusion and bottom-up refinement.
#[derive(Debug, Clone)]
pub struct FusedMaps<F: Scalar> {
    pub stride8: Array4<F>,
    pub stride16: Array4<F>,
    pub stride32: Array4<F>,
}

impl<F: Scalar> Network<F> {
    pub fn from_spec(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let ch = &spec.stage_channels;
        let (c1, c2, c3, c4, c5) = (ch[0], ch[1], ch[2], ch[3], ch[4]);
        let r = &spec.stage_repeats;
        let nr = spec.neck_repeats();
        let init = &mut Initializer::new(seed);

        let mut net = Network {
            stem: ConvBlock::new(spec.in_channels, c1, 3, 2, init),
            s2_down: ConvBlock::new(c1, c2, 3, 2, init),
            s2_block: CspBlock::new(c2, c2, r[0], init),
            s3_down: ConvBlock::new(c2, c3, 3, 2, init),
            s3_block: CspBlock::new(c3, c3, r[1], init),
            s4_down: ConvBlock::new(c3, c4, 3, 2, init),
            s4_block: CspBlock::new(c4, c4, r[2], init),
            s5_down: ConvBlock::new(c4, c5, 3, 2, init),
            s5_block: CspBlock::new(c5, c5, r[3], init),
            s5_pyramid: PoolPyramid::new(c5, init),
            td4: CspBlock::new(c5 + c4, c4, nr, init),
            td3: CspBlock::new(c4 + c3, c3, nr, init),
            bu4_down: ConvBlock::new(c3, c3, 3, 2, init),
            bu4_block: CspBlock::new(c3 + c4, c4, nr, init),
            bu5_down: ConvBlock::new(c4, c4, 3, 2, init),
            bu5_block: CspBlock::new(c4 + c5, c5, nr, init),
            d4: ConvBlock::new(c3 + c2, c2, 3, 1, init),
            d2: ConvBlock::new(c2 + c1, c1, 3, 1, init),
            d1: ConvBlock::new(c1, c1, 3, 1, init),
            head: Conv2d::new(c1, spec.num_classes, 1, 1, true, init),
            spec,
            param_count: 0,
        };
        net.param_count = crate::nn::param::count_params(&mut net);
        Ok(net)
    }

    /// Exact number of trainable scalars; fixed by the spec, not the seed.
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        if h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must have height and width divisible by 32; \
                 letterbox images to a multiple of 32 before inference"
            )));
        }
        check_finite(x, "network input")
    }

    fn encode(
        &self,
        x: &Array4<F>,
        train: bool,
        caches: Option<&mut Vec<EncoderCache<F>>>,
    ) -> [Array4<F>; 5] {
        let mut sink = caches;
        let mut keep = |c: EncoderCache<F>| {
            if let Some(v) = sink.as_deref_mut() {
                v.push(c);
            }
        };
        let (p1, c) = self.stem.forward(x, train);
        keep(EncoderCache::Conv(c));
        let (t, c) = self.s2_down.forward(&p1, train);
        keep(EncoderCache::Conv(c));
        let (p2, c) = self.s2_block.forward(&t, train);
        keep(EncoderCache::Csp(c));
        let (t, c) = self.s3_down.forward(&p2, train);
        keep(EncoderCache::Conv(c));
        let (p3, c) = self.s3_block.forward(&t, train);
        keep(EncoderCache::Csp(c));
        let (t, c) = self.s4_down.forward(&p3, train);
        keep(EncoderCache::Conv(c));
        let (p4, c) = self.s4_block.forward(&t, train);
        keep(EncoderCache::Csp(c));
        let (t, c) = self.s5_down.forward(&p4, train);
        keep(EncoderCache::Conv(c));
        let (t, c) = self.s5_block.forward(&t, train);
        keep(EncoderCache::Csp(c));
        let (p5, c) = self.s5_pyramid.forward(&t, train);
        keep(EncoderCache::Pyramid(c));
        [p1, p2, p3, p4, p5]
    }

    fn run(&self, x: &Array4<F>, train: bool) -> Result<(Array4<F>, Option<NetworkCache<F>>)> {
        self.check_input(x)?;
        let mut enc_caches = train.then(Vec::new);
        let [p1, p2, p3, p4, p5] = self.encode(x, train, enc_caches.as_mut());

        let u = upsample_nearest2(&p5);
        let (t4, td4_c) = self
            .td4
            .forward(&concat_channels(&[u.view(), p4.view()]), train);
        let u = upsample_nearest2(&t4);
        let (t3, td3_c) = self
            .td3
            .forward(&concat_channels(&[u.view(), p3.view()]), train);

        let u = upsample_nearest2(&t3);
        let (d, d4_c) = self
            .d4
            .forward(&concat_channels(&[u.view(), p2.view()]), train);
        let u = upsample_nearest2(&d);
        let (d, d2_c) = self
            .d2
            .forward(&concat_channels(&[u.view(), p1.view()]), train);
        let u = upsample_nearest2(&d);
        let (d, d1_c) = self.d1.forward(&u, train);
        let (logits, head_c) = self.head.forward(&d, train);

        let cache = enc_caches.map(|mut enc| {
            let take_pyr = |c: EncoderCache<F>| match c {
                EncoderCache::Pyramid(p) => p.expect("train cache"),
                _ => unreachable!(),
            };
            let take_csp = |c: EncoderCache<F>| match c {
                EncoderCache::Csp(p) => p.expect("train cache"),
                _ => unreachable!(),
            };
            let take_conv = |c: EncoderCache<F>| match c {
                EncoderCache::Conv(p) => p.expect("train cache"),
                _ => unreachable!(),
            };
            let s5_pyramid = take_pyr(enc.pop().expect("10 caches"));
            let s5_block = take_csp(enc.pop().expect("cache"));
            let s5_down = take_conv(enc.pop().expect("cache"));
            let s4_block = take_csp(enc.pop().expect("cache"));
            let s4_down = take_conv(enc.pop().expect("cache"));
            let s3_block = take_csp(enc.pop().expect("cache"));
            let s3_down = take_conv(enc.pop().expect("cache"));
            let s2_block = take_csp(enc.pop().expect("cache"));
            let s2_down = take_conv(enc.pop().expect("cache"));
            let stem = take_conv(enc.pop().expect("cache"));
            NetworkCache {
                stem,
                s2_down,
                s2_block,
                s3_down,
                s3_block,
                s4_down,
                s4_block,
                s5_down,
                s5_block,
                s5_pyramid,
                td4: td4_c.expect("train cache"),
                td3: td3_c.expect("train cache"),
                d4: d4_c.expect("train cache"),
                d2: d2_c.expect("train cache"),
                d1: d1_c.expect("train cache"),
                head: head_c.expect("train cache"),
            }
        });
        Ok((logits, cache))
    }

    /// Inference pass: logits with the same spatial dims as the input.
    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        Ok(self.run(x, false)?.0)
    }

    /// Training pass: logits plus the activation cache `backward` consumes.
    pub fn forward_train(&self, x: &Array4<F>) -> Result<(Array4<F>, NetworkCache<F>)> {
        let (y, cache) = self.run(x, true)?;
        Ok((y, cache.expect("train cache")))
    }

    /// Accumulates parameter gradients from `dlogits` and commits batch-norm
    /// running statistics. The bottom-up refinement blocks receive no
    /// gradient: nothing on the logits path consumes their outputs.
    pub fn backward(&mut self, cache: &NetworkCache<F>, dlogits: &Array4<F>) {
        let ch = &self.spec.stage_channels;
        let (c1, c2, c3, c4, c5) = (ch[0], ch[1], ch[2], ch[3], ch[4]);

        let dd = self.head.backward(&cache.head, dlogits);
        let dd = self.d1.backward(&cache.d1, &dd);
        let dd = upsample_nearest2_backward(&dd);
        let dcat = self.d2.backward(&cache.d2, &dd);
        let mut parts = split_channels(&dcat, &[c2, c1]);
        let dp1_dec = parts.pop().expect("two parts");
        let dd = upsample_nearest2_backward(&parts.pop().expect("one part"));
        let dcat = self.d4.backward(&cache.d4, &dd);
        let mut parts = split_channels(&dcat, &[c3, c2]);
        let dp2_dec = parts.pop().expect("two parts");
        let dt3 = upsample_nearest2_backward(&parts.pop().expect("one part"));

        let dcat = self.td3.backward(&cache.td3, &dt3);
        let mut parts = split_channels(&dcat, &[c4, c3]);
        let dp3_neck = parts.pop().expect("two parts");
        let dt4 = upsample_nearest2_backward(&parts.pop().expect("one part"));
        let dcat = self.td4.backward(&cache.td4, &dt4);
        let mut parts = split_channels(&dcat, &[c5, c4]);
        let dp4_neck = parts.pop().expect("two parts");
        let dp5 = upsample_nearest2_backward(&parts.pop().expect("one part"));

        let g = self.s5_pyramid.backward(&cache.s5_pyramid, &dp5);
        let g = self.s5_block.backward(&cache.s5_block, &g);
        let mut dp4 = self.s5_down.backward(&cache.s5_down, &g);
        dp4 += &dp4_neck;
        let g = self.s4_block.backward(&cache.s4_block, &dp4);
        let mut dp3 = self.s4_down.backward(&cache.s4_down, &g);
        dp3 += &dp3_neck;
        let g = self.s3_block.backward(&cache.s3_block, &dp3);
        let mut dp2 = self.s3_down.backward(&cache.s3_down, &g);
        dp2 += &dp2_dec;
        let g = self.s2_block.backward(&cache.s2_block, &dp2);
        let mut dp1 = self.s2_down.backward(&cache.s2_down, &g);
        dp1 += &dp1_dec;
        let _ = self.stem.backward(&cache.stem, &dp1);
    }

    /// Encoder activations at strides 2..32, for tests and visualization.
    pub fn encoder_features(&self, x: &Array4<F>) -> Result<FeaturePyramid<F>> {
        self.check_input(x)?;
        let [p1, p2, p3, p4, p5] = self.encode(x, false, None);
        let mut levels = std::collections::BTreeMap::new();
        for (stride, p) in [(2u32, p1), (4, p2), (8, p3), (16, p4), (32, p5)] {
            levels.insert(stride, p);
        }
        Ok(FeaturePyramid { levels })
    }

    /// Full neck output including the bottom-up refinement maps.
    pub fn fused_maps(&self, x: &Array4<F>) -> Result<FusedMaps<F>> {
        self.check_input(x)?;
        let [_, _, p3, p4, p5] = self.encode(x, false, None);
        let u = upsample_nearest2(&p5);
        let (t4, _) = self.td4.forward(&concat_channels(&[u.view(), p4.view()]), false);
        let u = upsample_nearest2(&t4);
        let (t3, _) = self.td3.forward(&concat_channels(&[u.view(), p3.view()]), false);
        let (b, _) = self.bu4_down.forward(&t3, false);
        let (b4, _) = self
            .bu4_block
            .forward(&concat_channels(&[b.view(), t4.view()]), false);
        let (b, _) = self.bu5_down.forward(&b4, false);
        let (b5, _) = self
            .bu5_block
            .forward(&concat_channels(&[b.view(), p5.view()]), false);
        Ok(FusedMaps {
            stride8: t3,
            stride16: b4,
            stride32: b5,
        })
    }
}

#[allow(clippy::large_enum_variant)]
enum EncoderCache<F: Scalar> {
    Conv(Option<ConvBlockCache<F>>),
    Csp(Option<CspCache<F>>),
    Pyramid(Option<PoolPyramidCache<F>>),
}

impl<F: Scalar> Parametrized<F> for Network<F> {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor<F>) {
        self.stem.visit_params(&join(prefix, "encoder.stem"), v);
        self.s2_down.visit_params(&join(prefix, "encoder.s2.down"), v);
        self.s2_block.visit_params(&join(prefix, "encoder.s2.block"), v);
        self.s3_down.visit_params(&join(prefix, "encoder.s3.down"), v);
        self.s3_block.visit_params(&join(prefix, "encoder.s3.block"), v);
        self.s4_down.visit_params(&join(prefix, "encoder.s4.down"), v);
        self.s4_block.visit_params(&join(prefix, "encoder.s4.block"), v);
        self.s5_down.visit_params(&join(prefix, "encoder.s5.down"), v);
        self.s5_block.visit_params(&join(prefix, "encoder.s5.block"), v);
        self.s5_pyramid
            .visit_params(&join(prefix, "encoder.s5.pyramid"), v);
        self.td4.visit_params(&join(prefix, "neck.td4"), v);
        self.td3.visit_params(&join(prefix, "neck.td3"), v);
        self.bu4_down.visit_params(&join(prefix, "neck.bu4.down"), v);
        self.bu4_block.visit_params(&join(prefix, "neck.bu4.block"), v);
        self.bu5_down.visit_params(&join(prefix, "neck.bu5.down"), v);
        self.bu5_block.visit_params(&join(prefix, "neck.bu5.block"), v);
        self.d4.visit_params(&join(prefix, "decoder.d4"), v);
        self.d2.visit_params(&join(prefix, "decoder.d2"), v);
        self.d1.visit_params(&join(prefix, "decoder.d1"), v);
        v.visit(
            &join(prefix, "decoder.head.weight"),
            self.head.weight.value.view_mut().into_dyn(),
            self.head.weight.grad.view_mut().into_dyn(),
        );
        let bias = self.head.bias.as_mut().expect("head has bias");
        v.visit(
            &join(prefix, "decoder.head.bias"),
            bias.value.view_mut().into_dyn(),
            bias.grad.view_mut().into_dyn(),
        );
    }

    fn visit_buffers(&mut self, prefix: &str, v: &mut dyn BufferVisitor<F>) {
        self.stem.visit_buffers(&join(prefix, "encoder.stem"), v);
        self.s2_down.visit_buffers(&join(prefix, "encoder.s2.down"), v);
        self.s2_block.visit_buffers(&join(prefix, "encoder.s2.block"), v);
        self.s3_down.visit_buffers(&join(prefix, "encoder.s3.down"), v);
        self.s3_block.visit_buffers(&join(prefix, "encoder.s3.block"), v);
        self.s4_down.visit_buffers(&join(prefix, "encoder.s4.down"), v);
        self.s4_block.visit_buffers(&join(prefix, "encoder.s4.block"), v);
        self.s5_down.visit_buffers(&join(prefix, "encoder.s5.down"), v);
        self.s5_block.visit_buffers(&join(prefix, "encoder.s5.block"), v);
        self.s5_pyramid
            .visit_buffers(&join(prefix, "encoder.s5.pyramid"), v);
        self.td4.visit_buffers(&join(prefix, "neck.td4"), v);
        self.td3.visit_buffers(&join(prefix, "neck.td3"), v);
        self.bu4_down.visit_buffers(&join(prefix, "neck.bu4.down"), v);
        self.bu4_block.visit_buffers(&join(prefix, "neck.bu4.block"), v);
        self.bu5_down.visit_buffers(&join(prefix, "neck.bu5.down"), v);
        self.bu5_block.visit_buffers(&join(prefix, "neck.bu5.block"), v);
        self.d4.visit_buffers(&join(prefix, "decoder.d4"), v);
        self.d2.visit_buffers(&join(prefix, "decoder.d2"), v);
        self.d1.visit_buffers(&join(prefix, "decoder.d1"), v);
    }
}
