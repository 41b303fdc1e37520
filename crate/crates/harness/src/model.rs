//! The toy classifier: two strided convolutions, an optional dynamic block
//! at the 8×8 stage, one more convolution, global average pooling and a
//! linear head. Built entirely from `dynconv` primitives so the block
//! variants are the only thing that changes between runs.
//!
//! Stage shapes for a 32×32 input:
//!   conv1 (8, 1, 4, 4)  stride 2 pad 1 -> (B,  8, 16, 16)
//!   conv2 (32, 8, 4, 4) stride 2 pad 1 -> (B, 32,  8,  8)
//!   block (identity / sgdm / rdconv)   -> (B, 32,  8,  8)
//!   conv3 (32, 32, 3, 3) stride 1 pad 1 -> (B, 32, 8, 8)
//!   GAP + 3-way linear head            -> (B,  3,  1,  1)
//!
//! The 4×4 stride-2 kernels keep every stage on the exact-division grid the
//! convolution engine enforces.

use dynconv::conv::{conv2d_backward, conv2d_im2col, kaiming_fill, ConvKernel};
use dynconv::rdconv::{RdconvCache, RdconvGrads, RdconvLayer};
use dynconv::sgdm::{SgdmCache, SgdmGrads, SgdmModule};
use dynconv::tensor::Dims;
use dynconv::Tensor64;

use crate::config::{RunConfig, Variant};
use crate::Result;

pub const BLOCK_CHANNELS: usize = 32;
const STEM_CHANNELS: usize = 8;

pub enum Block {
    None,
    Sgdm(SgdmModule<f64>),
    Dynamic(RdconvLayer<f64>),
}

pub struct ToyCnn {
    pub variant: Variant,
    pub conv1: ConvKernel<f64>,
    pub conv2: ConvKernel<f64>,
    pub block: Block,
    pub conv3: ConvKernel<f64>,
    pub fc_w: Tensor64,
    pub fc_b: Tensor64,
}

pub enum BlockCache {
    None,
    Sgdm(SgdmCache<f64>),
    Dynamic(RdconvCache<f64>),
}

/// Every intermediate needed by the backward pass.
pub struct ModelCache {
    pub x: Tensor64,
    z1: Tensor64,
    a1: Tensor64,
    z2: Tensor64,
    zb: Tensor64,
    block: BlockCache,
    a3: Tensor64,
    z3: Tensor64,
    z3_relu: Tensor64,
    pooled: Tensor64,
}

pub enum BlockGrads {
    None,
    Sgdm(SgdmGrads<f64>),
    Dynamic(RdconvGrads<f64>),
}

pub struct ModelGrads {
    pub conv1_w: Tensor64,
    pub conv1_b: Tensor64,
    pub conv2_w: Tensor64,
    pub conv2_b: Tensor64,
    pub block: BlockGrads,
    pub conv3_w: Tensor64,
    pub conv3_b: Tensor64,
    pub fc_w: Tensor64,
    pub fc_b: Tensor64,
}

fn relu(x: &Tensor64) -> Tensor64 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Upstream gradient masked by the sign of the pre-activation.
fn relu_backward(grad: &Tensor64, pre: &Tensor64) -> Tensor64 {
    grad.zip_map(pre, |g, z| if z > 0.0 { g } else { 0.0 })
        .expect("upstream and pre-activation dims always match")
}

fn global_avg_pool(x: &Tensor64) -> Tensor64 {
    let d = x.dims();
    let area = (d.h * d.w) as f64;
    let mut out = Tensor64::zeros(Dims::new(d.b, d.c, 1, 1));
    for b in 0..d.b {
        for c in 0..d.c {
            let mut acc = 0.0;
            for h in 0..d.h {
                for w in 0..d.w {
                    acc += x.get(b, c, h, w);
                }
            }
            out.set(b, c, 0, 0, acc / area);
        }
    }
    out
}

impl ToyCnn {
    /// Initialize from a uniform-[0,1) source. Draw order: conv1, conv2,
    /// block (its own internal order), conv3, fc. Biases are zero and
    /// consume no draws.
    pub fn init(
        variant: Variant,
        cfg: &RunConfig,
        uniform: &mut dyn FnMut() -> f64,
    ) -> Result<ToyCnn> {
        let conv1 = ConvKernel::new(
            kaiming_fill(Dims::new(STEM_CHANNELS, 1, 4, 4), 16, uniform),
            Some(Tensor64::zeros(Dims::new(1, STEM_CHANNELS, 1, 1))),
            2,
            (1, 1),
        )?;
        let conv2 = ConvKernel::new(
            kaiming_fill(
                Dims::new(BLOCK_CHANNELS, STEM_CHANNELS, 4, 4),
                STEM_CHANNELS * 16,
                uniform,
            ),
            Some(Tensor64::zeros(Dims::new(1, BLOCK_CHANNELS, 1, 1))),
            2,
            (1, 1),
        )?;
        let block = match variant {
            Variant::Baseline => Block::None,
            Variant::Sgdm => Block::Sgdm(SgdmModule::init(
                BLOCK_CHANNELS,
                cfg.sgdm_config(),
                uniform,
            )?),
            Variant::PureDynamic => Block::Dynamic(RdconvLayer::init(
                BLOCK_CHANNELS,
                cfg.rdconv_config(),
                uniform,
            )?),
        };
        let conv3 = ConvKernel::new(
            kaiming_fill(
                Dims::new(BLOCK_CHANNELS, BLOCK_CHANNELS, 3, 3),
                BLOCK_CHANNELS * 9,
                uniform,
            ),
            Some(Tensor64::zeros(Dims::new(1, BLOCK_CHANNELS, 1, 1))),
            1,
            (1, 1),
        )?;
        let fc_w = kaiming_fill(
            Dims::new(crate::dataset::NUM_CLASSES, BLOCK_CHANNELS, 1, 1),
            BLOCK_CHANNELS,
            uniform,
        );
        let fc_b = Tensor64::zeros(Dims::new(1, crate::dataset::NUM_CLASSES, 1, 1));
        Ok(ToyCnn {
            variant,
            conv1,
            conv2,
            block,
            conv3,
            fc_w,
            fc_b,
        })
    }

    pub fn forward(&self, x: &Tensor64) -> Result<Tensor64> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Returns logits with dims (B, 3, 1, 1) plus the cache for backward.
    pub fn forward_cached(&self, x: &Tensor64) -> Result<(Tensor64, ModelCache)> {
        let z1 = conv2d_im2col(x, &self.conv1)?;
        let a1 = relu(&z1);
        let z2 = conv2d_im2col(&a1, &self.conv2)?;
        let a2 = relu(&z2);
        let (zb, block) = match &self.block {
            Block::None => (a2.clone(), BlockCache::None),
            Block::Sgdm(m) => {
                let (y, c) = m.forward_cached(&a2)?;
                (y, BlockCache::Sgdm(c))
            }
            Block::Dynamic(l) => {
                let (y, c) = l.forward_cached(&a2, None)?;
                (y, BlockCache::Dynamic(c))
            }
        };
        let a3 = relu(&zb);
        let z3 = conv2d_im2col(&a3, &self.conv3)?;
        let z3_relu = relu(&z3);
        let pooled = global_avg_pool(&z3_relu);

        let b = pooled.dims().b;
        let k = self.fc_w.dims().b;
        let c = self.fc_w.dims().c;
        let mut logits = Tensor64::zeros(Dims::new(b, k, 1, 1));
        for bi in 0..b {
            for ki in 0..k {
                let mut acc = self.fc_b.get(0, ki, 0, 0);
                for ci in 0..c {
                    acc += self.fc_w.get(ki, ci, 0, 0) * pooled.get(bi, ci, 0, 0);
                }
                logits.set(bi, ki, 0, 0, acc);
            }
        }
        let cache = ModelCache {
            x: x.clone(),
            z1,
            a1,
            z2,
            zb,
            block,
            a3,
            z3,
            z3_relu,
            pooled,
        };
        Ok((logits, cache))
    }

    pub fn backward(&self, cache: &ModelCache, d_logits: &Tensor64) -> Result<ModelGrads> {
        let bd = cache.pooled.dims();
        let k = self.fc_w.dims().b;

        // Linear head.
        let mut g_fc_w = Tensor64::zeros(self.fc_w.dims());
        let mut g_fc_b = Tensor64::zeros(self.fc_b.dims());
        let mut d_pooled = Tensor64::zeros(bd);
        for bi in 0..bd.b {
            for ki in 0..k {
                let dl = d_logits.get(bi, ki, 0, 0);
                g_fc_b.add_at(0, ki, 0, 0, dl);
                for ci in 0..bd.c {
                    g_fc_w.add_at(ki, ci, 0, 0, dl * cache.pooled.get(bi, ci, 0, 0));
                    d_pooled.add_at(bi, ci, 0, 0, dl * self.fc_w.get(ki, ci, 0, 0));
                }
            }
        }

        // GAP spreads each pooled gradient uniformly over the feature map.
        let fd = cache.z3_relu.dims();
        let area = (fd.h * fd.w) as f64;
        let d_a4 = Tensor64::from_fn(fd, |b, c, _, _| d_pooled.get(b, c, 0, 0) / area);
        let d_z3 = relu_backward(&d_a4, &cache.z3);
        let g3 = conv2d_backward(&cache.a3, &self.conv3, &d_z3)?;

        let d_zb = relu_backward(&g3.x, &cache.zb);
        let (d_a2, block) = match (&self.block, &cache.block) {
            (Block::None, BlockCache::None) => (d_zb, BlockGrads::None),
            (Block::Sgdm(m), BlockCache::Sgdm(c)) => {
                let g = m.backward(c, &d_zb)?;
                (g.x.clone(), BlockGrads::Sgdm(g))
            }
            (Block::Dynamic(l), BlockCache::Dynamic(c)) => {
                let g = l.backward(c, &d_zb)?;
                (g.x.clone(), BlockGrads::Dynamic(g))
            }
            _ => {
                return Err(crate::HarnessError::config(
                    "model cache does not match the block variant",
                ))
            }
        };

        let d_z2 = relu_backward(&d_a2, &cache.z2);
        let g2 = conv2d_backward(&cache.a1, &self.conv2, &d_z2)?;
        let d_z1 = relu_backward(&g2.x, &cache.z1);
        let g1 = conv2d_backward(&cache.x, &self.conv1, &d_z1)?;

        Ok(ModelGrads {
            conv1_w: g1.weights,
            conv1_b: g1.bias.expect("conv1 has a bias"),
            conv2_w: g2.weights,
            conv2_b: g2.bias.expect("conv2 has a bias"),
            block,
            conv3_w: g3.weights,
            conv3_b: g3.bias.expect("conv3 has a bias"),
            fc_w: g_fc_w,
            fc_b: g_fc_b,
        })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor64)> {
        let mut out: Vec<(String, &Tensor64)> = vec![
            ("conv1_w".into(), &self.conv1.weights),
            ("conv1_b".into(), self.conv1.bias.as_ref().expect("bias")),
            ("conv2_w".into(), &self.conv2.weights),
            ("conv2_b".into(), self.conv2.bias.as_ref().expect("bias")),
        ];
        match &self.block {
            Block::None => {}
            Block::Sgdm(m) => {
                out.extend(
                    m.named_params()
                        .into_iter()
                        .map(|(n, t)| (format!("block.{n}"), t)),
                );
            }
            Block::Dynamic(l) => {
                out.extend(
                    l.named_params()
                        .into_iter()
                        .map(|(n, t)| (format!("block.{n}"), t)),
                );
            }
        }
        out.push(("conv3_w".into(), &self.conv3.weights));
        out.push(("conv3_b".into(), self.conv3.bias.as_ref().expect("bias")));
        out.push(("fc_w".into(), &self.fc_w));
        out.push(("fc_b".into(), &self.fc_b));
        out
    }

    /// Mutable view of every parameter with a "is this a bias" flag, in the
    /// same order as [`ToyCnn::named_params`].
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor64, bool)> {
        let mut out: Vec<(String, &mut Tensor64, bool)> = vec![
            ("conv1_w".into(), &mut self.conv1.weights, false),
            ("conv1_b".into(), self.conv1.bias.as_mut().expect("bias"), true),
            ("conv2_w".into(), &mut self.conv2.weights, false),
            ("conv2_b".into(), self.conv2.bias.as_mut().expect("bias"), true),
        ];
        match &mut self.block {
            Block::None => {}
            Block::Sgdm(m) => {
                out.extend(
                    m.named_params_mut()
                        .into_iter()
                        .map(|(n, t, bias)| (format!("block.{n}"), t, bias)),
                );
            }
            Block::Dynamic(l) => {
                out.extend(
                    l.named_params_mut()
                        .into_iter()
                        .map(|(n, t, bias)| (format!("block.{n}"), t, bias)),
                );
            }
        }
        out.push(("conv3_w".into(), &mut self.conv3.weights, false));
        out.push(("conv3_b".into(), self.conv3.bias.as_mut().expect("bias"), true));
        out.push(("fc_w".into(), &mut self.fc_w, false));
        out.push(("fc_b".into(), &mut self.fc_b, true));
        out
    }
}

impl ModelGrads {
    /// Parameter gradients in [`ToyCnn::named_params`] order.
    pub fn named(&self) -> Vec<(String, &Tensor64)> {
        let mut out: Vec<(String, &Tensor64)> = vec![
            ("conv1_w".into(), &self.conv1_w),
            ("conv1_b".into(), &self.conv1_b),
            ("conv2_w".into(), &self.conv2_w),
            ("conv2_b".into(), &self.conv2_b),
        ];
        match &self.block {
            BlockGrads::None => {}
            BlockGrads::Sgdm(g) => {
                out.extend(g.named().into_iter().map(|(n, t)| (format!("block.{n}"), t)));
            }
            BlockGrads::Dynamic(g) => {
                out.extend(g.named().into_iter().map(|(n, t)| (format!("block.{n}"), t)));
            }
        }
        out.push(("conv3_w".into(), &self.conv3_w));
        out.push(("conv3_b".into(), &self.conv3_b));
        out.push(("fc_w".into(), &self.fc_w));
        out.push(("fc_b".into(), &self.fc_b));
        out
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor64, labels: &[usize]) -> (f64, Tensor64) {
    let d = logits.dims();
    assert_eq!(d.b, labels.len(), "one label per batch item");
    let mut grad = Tensor64::zeros(d);
    let mut loss = 0.0;
    let inv_b = 1.0 / d.b as f64;
    for b in 0..d.b {
        let mut max = f64::NEG_INFINITY;
        for k in 0..d.c {
            max = max.max(logits.get(b, k, 0, 0));
        }
        let mut z = 0.0;
        for k in 0..d.c {
            z += (logits.get(b, k, 0, 0) - max).exp();
        }
        let label = labels[b];
        loss -= (logits.get(b, label, 0, 0) - max - z.ln()) * inv_b;
        for k in 0..d.c {
            let p = (logits.get(b, k, 0, 0) - max).exp() / z;
            let target = if k == label { 1.0 } else { 0.0 };
            grad.set(b, k, 0, 0, (p - target) * inv_b);
        }
    }
    (loss, grad)
}

/// Argmax predictions compared against the labels (ties pick the lowest
/// class index).
pub fn count_correct(logits: &Tensor64, labels: &[usize]) -> usize {
    let d = logits.dims();
    let mut correct = 0;
    for b in 0..d.b {
        let mut best = 0;
        for k in 1..d.c {
            if logits.get(b, k, 0, 0) > logits.get(b, best, 0, 0) {
                best = k;
            }
        }
        if best == labels[b] {
            correct += 1;
        }
    }
    correct
}
