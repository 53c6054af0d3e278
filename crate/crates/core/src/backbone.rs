//! Per-frame CNN backbones. Both map a normalized `3 × 128 × 128` frame to
//! the globally pooled activations one layer below a classifier.

use ndarray::{Array1, Array3, ArrayView1};
use rand::Rng;

use crate::config::BackboneKind;
use crate::error::{Error, Result};
use crate::nn::{
    avg_pool2, avg_pool2_backward, global_avg_pool, global_avg_pool_backward, global_sum_pool,
    global_sum_pool_backward, join, max_pool3, max_pool3_backward, relu, relu_backward,
    BatchNorm2d, Conv2d, ConvCache, Module, ParamMut, ParamRef,
};
use crate::FRAME_SIZE;

pub const TINY_FEATURE_DIM: usize = 32;
pub const REFERENCE_FEATURE_DIM: usize = 512;

/// Two conv blocks: `conv 3→16 (3×3, s2) → ReLU → avgpool 2` then
/// `conv 16→32 (3×3, s2) → ReLU → global sum pool` over the 16×16 map.
/// Summing rather than averaging gives features ~256× larger, which the
/// head needs to fit anything within a few hundred steps at lr 1e-4.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

#[derive(Debug, Clone)]
pub struct TinyCache {
    c1: ConvCache,
    r1: Array3<f64>,
    c2: ConvCache,
    r2: Array3<f64>,
}

impl TinyCnn {
    pub fn new(rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::new(3, 16, 3, 2, 1, true, false, rng),
            conv2: Conv2d::new(16, TINY_FEATURE_DIM, 3, 2, 1, true, false, rng),
        }
    }

    fn forward_train(&self, x: &Array3<f64>) -> (Array1<f64>, TinyCache) {
        let (a1, c1) = self.conv1.forward_train(x);
        let r1 = relu(&a1);
        let p1 = avg_pool2(&r1);
        let (a2, c2) = self.conv2.forward_train(&p1);
        let r2 = relu(&a2);
        (global_sum_pool(&r2), TinyCache { c1, r1, c2, r2 })
    }

    fn backward(&self, cache: &TinyCache, grad: ArrayView1<f64>, grads: &mut TinyCnn) {
        let g = global_sum_pool_backward(cache.r2.dim(), grad);
        let g = relu_backward(&cache.r2, &g);
        let g = self.conv2.backward(&cache.c2, &g, &mut grads.conv2);
        let g = avg_pool2_backward(cache.r1.dim(), &g);
        let g = relu_backward(&cache.r1, &g);
        self.conv1.backward(&cache.c1, &g, &mut grads.conv1);
    }
}

impl Module for TinyCnn {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.conv1.params(&join(prefix, "conv1"), out);
        self.conv2.params(&join(prefix, "conv2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.conv2.params_mut(&join(prefix, "conv2"), out);
    }
}

/// Residual block of two 3×3 convolutions; tensor names follow the common
/// `conv1/bn1/conv2/bn2/downsample.{0,1}` layout so converted pretrained
/// weights load directly.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub downsample: Option<(Conv2d, BatchNorm2d)>,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    c1: ConvCache,
    a1: Array3<f64>,
    r1: Array3<f64>,
    c2: ConvCache,
    a2: Array3<f64>,
    ds: Option<(ConvCache, Array3<f64>)>,
    out: Array3<f64>,
}

impl BasicBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let mut bn2 = BatchNorm2d::new(out_ch);
        // Residual branches start at zero so that an untrained network with
        // fixed normalization statistics stays well scaled.
        bn2.weight.fill(0.0);
        Self {
            conv1: Conv2d::new(in_ch, out_ch, 3, stride, 1, false, true, rng),
            bn1: BatchNorm2d::new(out_ch),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1, false, true, rng),
            bn2,
            downsample: (stride != 1 || in_ch != out_ch).then(|| {
                (
                    Conv2d::new(in_ch, out_ch, 1, stride, 0, false, true, rng),
                    BatchNorm2d::new(out_ch),
                )
            }),
        }
    }

    fn forward_train(&self, x: &Array3<f64>) -> BlockCache {
        let (a1, c1) = self.conv1.forward_train(x);
        let r1 = relu(&self.bn1.forward(&a1));
        let (a2, c2) = self.conv2.forward_train(&r1);
        let mut out = self.bn2.forward(&a2);
        let ds = match &self.downsample {
            Some((conv, bn)) => {
                let (d, cache) = conv.forward_train(x);
                out += &bn.forward(&d);
                Some((cache, d))
            }
            None => {
                out += x;
                None
            }
        };
        let out = relu(&out);
        BlockCache {
            c1,
            a1,
            r1,
            c2,
            a2,
            ds,
            out,
        }
    }

    fn backward(
        &self,
        cache: &BlockCache,
        grad: &Array3<f64>,
        grads: &mut BasicBlock,
    ) -> Array3<f64> {
        let g = relu_backward(&cache.out, grad);
        let gb = self.bn2.backward(&cache.a2, &g, &mut grads.bn2);
        let gb = self.conv2.backward(&cache.c2, &gb, &mut grads.conv2);
        let gb = relu_backward(&cache.r1, &gb);
        let gb = self.bn1.backward(&cache.a1, &gb, &mut grads.bn1);
        let mut gx = self.conv1.backward(&cache.c1, &gb, &mut grads.conv1);
        match (&self.downsample, &cache.ds, &mut grads.downsample) {
            (Some((conv, bn)), Some((cc, d)), Some((gconv, gbn))) => {
                let gd = bn.backward(d, &g, gbn);
                gx += &conv.backward(cc, &gd, gconv);
            }
            _ => gx += &g,
        }
        gx
    }
}

impl Module for BasicBlock {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.conv1.params(&join(prefix, "conv1"), out);
        self.bn1.params(&join(prefix, "bn1"), out);
        self.conv2.params(&join(prefix, "conv2"), out);
        self.bn2.params(&join(prefix, "bn2"), out);
        if let Some((c, b)) = &self.downsample {
            c.params(&join(prefix, "downsample.0"), out);
            b.params(&join(prefix, "downsample.1"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.bn1.params_mut(&join(prefix, "bn1"), out);
        self.conv2.params_mut(&join(prefix, "conv2"), out);
        self.bn2.params_mut(&join(prefix, "bn2"), out);
        if let Some((c, b)) = &mut self.downsample {
            c.params_mut(&join(prefix, "downsample.0"), out);
            b.params_mut(&join(prefix, "downsample.1"), out);
        }
    }
}

/// 34-layer residual network (stages of 3, 4, 6 and 3 basic blocks) with the
/// classifier removed; output width 512.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNet34 {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub stages: [Vec<BasicBlock>; 4],
}

#[derive(Debug, Clone)]
pub struct ResNetCache {
    c1: ConvCache,
    a1: Array3<f64>,
    r1: Array3<f64>,
    pool_arg: Vec<usize>,
    blocks: Vec<BlockCache>,
}

impl ResNet34 {
    pub fn new(rng: &mut impl Rng) -> Self {
        let widths = [64, 128, 256, 512];
        let depths = [3, 4, 6, 3];
        let mut in_ch = 64;
        let stages = std::array::from_fn(|s| {
            (0..depths[s])
                .map(|b| {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let block = BasicBlock::new(in_ch, widths[s], stride, rng);
                    in_ch = widths[s];
                    block
                })
                .collect()
        });
        Self {
            conv1: Conv2d::new(3, 64, 7, 2, 3, false, true, rng),
            bn1: BatchNorm2d::new(64),
            stages,
        }
    }

    fn blocks(&self) -> impl Iterator<Item = &BasicBlock> {
        self.stages.iter().flatten()
    }

    fn forward_train(&self, x: &Array3<f64>) -> (Array1<f64>, ResNetCache) {
        let (a1, c1) = self.conv1.forward_train(x);
        let r1 = relu(&self.bn1.forward(&a1));
        let (mut h, pool_arg) = max_pool3(&r1);
        let mut blocks = Vec::with_capacity(16);
        for block in self.blocks() {
            let cache = block.forward_train(&h);
            h = cache.out.clone();
            blocks.push(cache);
        }
        (
            global_avg_pool(&h),
            ResNetCache {
                c1,
                a1,
                r1,
                pool_arg,
                blocks,
            },
        )
    }

    fn backward(&self, cache: &ResNetCache, grad: ArrayView1<f64>, grads: &mut ResNet34) {
        let last = &cache.blocks.last().expect("16 blocks").out;
        let mut g = global_avg_pool_backward(last.dim(), grad);
        let grad_blocks: Vec<&mut BasicBlock> = grads.stages.iter_mut().flatten().collect();
        let blocks: Vec<&BasicBlock> = self.blocks().collect();
        for ((block, bc), gblock) in blocks.into_iter().zip(&cache.blocks).zip(grad_blocks).rev() {
            g = block.backward(bc, &g, gblock);
        }
        let g = max_pool3_backward(cache.r1.dim(), &cache.pool_arg, &g);
        let g = relu_backward(&cache.r1, &g);
        let g = self.bn1.backward(&cache.a1, &g, &mut grads.bn1);
        self.conv1.backward(&cache.c1, &g, &mut grads.conv1);
    }
}

impl Module for ResNet34 {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.conv1.params(&join(prefix, "conv1"), out);
        self.bn1.params(&join(prefix, "bn1"), out);
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.params(&join(prefix, &format!("layer{}.{b}", s + 1)), out);
            }
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.bn1.params_mut(&join(prefix, "bn1"), out);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.params_mut(&join(prefix, &format!("layer{}.{b}", s + 1)), out);
            }
        }
    }
}

// The tiny variant is a few hundred bytes; boxing it buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Tiny(TinyCnn),
    Reference(Box<ResNet34>),
}

/// Activations kept by [`Backbone::forward_train`] for the backward pass.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum BackboneCache {
    Tiny(TinyCache),
    Reference(Box<ResNetCache>),
}

impl Backbone {
    /// Randomly initialized backbone of the given kind.
    pub fn new(kind: BackboneKind, rng: &mut impl Rng) -> Self {
        match kind {
            BackboneKind::TinyCnn => Backbone::Tiny(TinyCnn::new(rng)),
            BackboneKind::ReferenceCnn => Backbone::Reference(Box::new(ResNet34::new(rng))),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Tiny(_) => BackboneKind::TinyCnn,
            Backbone::Reference(_) => BackboneKind::ReferenceCnn,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Backbone::Tiny(_) => TINY_FEATURE_DIM,
            Backbone::Reference(_) => REFERENCE_FEATURE_DIM,
        }
    }

    fn check_input(x: &Array3<f64>) -> Result<()> {
        if x.dim() != (3, FRAME_SIZE, FRAME_SIZE) {
            return Err(Error::shape(format!(
                "backbone expects 3×{FRAME_SIZE}×{FRAME_SIZE} frames, got {:?}",
                x.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Array3<f64>) -> Result<(Array1<f64>, BackboneCache)> {
        Self::check_input(x)?;
        Ok(match self {
            Backbone::Tiny(m) => {
                let (f, c) = m.forward_train(x);
                (f, BackboneCache::Tiny(c))
            }
            Backbone::Reference(m) => {
                let (f, c) = m.forward_train(x);
                (f, BackboneCache::Reference(Box::new(c)))
            }
        })
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂features` for one frame.
    pub fn backward(
        &self,
        cache: &BackboneCache,
        grad: ArrayView1<f64>,
        grads: &mut Backbone,
    ) -> Result<()> {
        match (self, cache, grads) {
            (Backbone::Tiny(m), BackboneCache::Tiny(c), Backbone::Tiny(g)) => {
                m.backward(c, grad, g)
            }
            (Backbone::Reference(m), BackboneCache::Reference(c), Backbone::Reference(g)) => {
                m.backward(c, grad, g)
            }
            _ => return Err(Error::shape("backbone, cache and gradient kinds differ")),
        }
        Ok(())
    }
}

impl Module for Backbone {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        match self {
            Backbone::Tiny(m) => m.params(prefix, out),
            Backbone::Reference(m) => m.params(prefix, out),
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        match self {
            Backbone::Tiny(m) => m.params_mut(prefix, out),
            Backbone::Reference(m) => m.params_mut(prefix, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{num_trainable, state_dict, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(seed: u64) -> Array3<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, 128, 128), |_| r.gen_range(-1.5..1.5))
    }

    #[test]
    fn tiny_shapes_and_constant_input() {
        let b = Backbone::new(BackboneKind::TinyCnn, &mut ChaCha8Rng::seed_from_u64(0));
        let f = b.forward(&frame(1)).unwrap();
        assert_eq!(f.len(), 32);
        assert!(f.iter().all(|v| v.is_finite()));
        let zero = Array3::zeros((3, 128, 128));
        assert_eq!(b.forward(&zero).unwrap(), b.forward(&zero).unwrap());
        assert!(matches!(
            b.forward(&Array3::zeros((3, 64, 64))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tiny_gradient_matches_finite_differences() {
        let b = Backbone::new(BackboneKind::TinyCnn, &mut ChaCha8Rng::seed_from_u64(5));
        let x = frame(2);
        let w = Array1::from_shape_fn(32, |i| (i as f64 * 0.37).sin());
        let (_, cache) = b.forward_train(&x).unwrap();
        let mut g = zeros_like(&b);
        b.backward(&cache, w.view(), &mut g).unwrap();
        let Backbone::Tiny(tiny) = &b else {
            unreachable!()
        };
        let Backbone::Tiny(gt) = &g else {
            unreachable!()
        };
        let h = 1e-6;
        for idx in [[0, 0, 1, 1], [7, 2, 0, 2], [15, 1, 2, 0]] {
            let mut p = tiny.clone();
            p.conv1.weight[idx] += h;
            let mut m = tiny.clone();
            m.conv1.weight[idx] -= h;
            let fp = Backbone::Tiny(p).forward(&x).unwrap().dot(&w);
            let fm = Backbone::Tiny(m).forward(&x).unwrap().dot(&w);
            let num = (fp - fm) / (2.0 * h);
            let ana = gt.conv1.weight[idx];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
            assert!(
                rel < 1e-3 || (num - ana).abs() < 1e-9,
                "{idx:?}: {num} vs {ana}"
            );
        }
    }

    #[test]
    fn reference_layout() {
        let b = Backbone::new(
            BackboneKind::ReferenceCnn,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(b.feature_dim(), 512);
        let names: Vec<String> = state_dict(&b).into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"conv1.weight".to_string()));
        assert!(names.contains(&"layer2.0.downsample.0.weight".to_string()));
        assert!(names.contains(&"layer4.2.bn2.running_var".to_string()));
        assert!(!names.iter().any(|n| n.starts_with("layer1.0.downsample")));
        // Standard 34-layer parameter count without the classifier.
        assert_eq!(num_trainable(&b), 21_284_672);
    }

    #[test]
    fn reference_forward_is_512_wide_and_finite() {
        let b = Backbone::new(
            BackboneKind::ReferenceCnn,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let f = b.forward(&frame(3)).unwrap();
        assert_eq!(f.len(), 512);
        assert!(f.iter().all(|v| v.is_finite()));
    }
}
