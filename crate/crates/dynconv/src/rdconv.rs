//! Razor dynamic convolution (RDConv).
//!
//! A dynamic convolution assembles, per batch item, a kernel that is a
//! linear combination of `n` candidate kernels, with mixing weights α
//! predicted from the item's own features. The razor twist: only the first
//! ⌊r_razor·C⌋ "intrinsic" channels are processed dynamically, the remainder
//! passes through untouched, and the attention sub-network sees only the
//! razored block — so its projection cost shrinks quadratically in r.
//!
//! A decoupled spatial branch pools the intrinsic block along height and
//! width, runs a strip convolution over each profile, and gates the dynamic
//! branch's output features with `sigmoid(h_path + w_path)` broadcast back to
//! full size.
//!
//! Design notes that are conventions rather than forced moves: the attention
//! activation is a per-logit sigmoid (not a softmax over the candidates);
//! the remainder channels are identity passthrough rather than a cheap
//! depthwise op; the gate multiplies the dynamic branch's *features*, not its
//! kernels; candidate kernels carry no bias.

use crate::conv::{conv2d_backward, conv2d_im2col, kaiming_fill, ConvKernel};
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, gap_height, gap_width, Dims, Tensor};
use crate::{s, sigmoid, Scalar};

/// Hyperparameters of one RDConv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RdconvConfig {
    /// Fraction of channels processed dynamically, in (0, 1].
    pub r_razor: f64,
    /// Number of candidate kernels n.
    pub n_kernels: usize,
    /// Dynamic kernel size (odd).
    pub k_d: usize,
    /// Strip length of the spatial branch (odd).
    pub spatial_k: usize,
}

impl Default for RdconvConfig {
    fn default() -> Self {
        RdconvConfig {
            r_razor: 0.5,
            n_kernels: 4,
            k_d: 3,
            spatial_k: 15,
        }
    }
}

impl RdconvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_razor > 0.0 && self.r_razor <= 1.0) {
            return Err(Error::config(
                "RdconvConfig",
                format!("r_razor {} outside (0, 1]", self.r_razor),
            ));
        }
        if self.n_kernels == 0 {
            return Err(Error::config("RdconvConfig", "need at least one kernel"));
        }
        if self.k_d % 2 == 0 || self.spatial_k % 2 == 0 {
            return Err(Error::config(
                "RdconvConfig",
                format!("k_d {} and spatial_k {} must be odd", self.k_d, self.spatial_k),
            ));
        }
        Ok(())
    }

    /// ⌊r_razor·C⌋, the razored channel count; must be at least one.
    pub fn intrinsic_channels(&self, channels: usize) -> Result<usize> {
        let ci = ((self.r_razor * channels as f64).floor() as usize).min(channels);
        if ci == 0 {
            return Err(Error::config(
                "RdconvConfig",
                format!("r_razor {} of {channels} channels razors everything away", self.r_razor),
            ));
        }
        Ok(ci)
    }
}

/// Split into the razored intrinsic block (first ⌊r·C⌋ channels) and the
/// passthrough remainder; together they partition the input.
pub fn razor_split<T: Scalar>(x: &Tensor<T>, r_razor: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    let cfg = RdconvConfig {
        r_razor,
        ..RdconvConfig::default()
    };
    cfg.validate()?;
    let c = x.dims().c;
    let ci = cfg.intrinsic_channels(c)?;
    Ok((x.slice_channels(0, ci)?, x.slice_channels(ci, c)?))
}

/// The n candidate kernels plus the attention sub-network that mixes them:
/// a 1×1 razor projection, global average pooling, and a linear map to n
/// logits squashed by a sigmoid.
#[derive(Debug, Clone)]
pub struct DynamicKernelBank<T: Scalar> {
    /// n kernels, each `(c, c, k_d, k_d)` over the razored channels.
    pub kernels: Vec<Tensor<T>>,
    /// 1×1 projection from c to c_att channels (no bias).
    pub proj: ConvKernel<T>,
    /// Linear map `(n, c_att, 1, 1)` from pooled features to logits.
    pub lin_w: Tensor<T>,
    /// Logit bias `(1, n, 1, 1)`.
    pub lin_b: Tensor<T>,
}

impl<T: Scalar> DynamicKernelBank<T> {
    /// Initialize for `c` razored channels. Candidate kernels and the razor
    /// projection are Kaiming-uniform (fan-in); the linear map starts at zero
    /// so training begins from uniform mixing, α = 0.5. The projection must
    /// *not* start at zero: with both maps zeroed the pooled features and the
    /// logit gradients would stay zero forever.
    ///
    /// `uniform` supplies U[0,1) draws; they are consumed kernel 0..n-1 first
    /// (row-major each), then the projection.
    pub fn init(c: usize, cfg: &RdconvConfig, uniform: &mut dyn FnMut() -> f64) -> Result<Self> {
        cfg.validate()?;
        if c == 0 {
            return Err(Error::config("DynamicKernelBank::init", "zero channels"));
        }
        let kd = cfg.k_d;
        let kdims = Dims::new(c, c, kd, kd);
        let kernels = (0..cfg.n_kernels)
            .map(|_| kaiming_fill(kdims, c * kd * kd, uniform))
            .collect();
        let c_att = c;
        let proj = ConvKernel::new(
            kaiming_fill(Dims::new(c_att, c, 1, 1), c, uniform),
            None,
            1,
            (0, 0),
        )?;
        Ok(DynamicKernelBank {
            kernels,
            proj,
            lin_w: Tensor::zeros(Dims::new(cfg.n_kernels, c_att, 1, 1)),
            lin_b: Tensor::zeros(Dims::new(1, cfg.n_kernels, 1, 1)),
        })
    }

    pub fn n(&self) -> usize {
        self.kernels.len()
    }

    /// Razored channel count the bank was built for.
    pub fn c(&self) -> usize {
        self.kernels[0].dims().b
    }

    pub fn c_att(&self) -> usize {
        self.proj.c_out()
    }

    pub fn k_d(&self) -> usize {
        self.kernels[0].dims().h
    }
}

/// Decoupled height/width branch: directional pooling followed by a strip
/// convolution along the surviving axis.
#[derive(Debug, Clone)]
pub struct SpatialBranch<T: Scalar> {
    /// `(spatial_k, 1)` strip applied to the width-pooled profile.
    pub h_conv: ConvKernel<T>,
    /// `(1, spatial_k)` strip applied to the height-pooled profile.
    pub w_conv: ConvKernel<T>,
    pub spatial_k: usize,
}

impl<T: Scalar> SpatialBranch<T> {
    /// Zero-initialized strips (weights and bias), so the gate opens at
    /// exactly 0.5 everywhere and training can move it in either direction.
    pub fn init(c: usize, spatial_k: usize) -> Result<Self> {
        if spatial_k % 2 == 0 {
            return Err(Error::config("SpatialBranch::init", "spatial_k must be odd"));
        }
        if c == 0 {
            return Err(Error::config("SpatialBranch::init", "zero channels"));
        }
        let bias = || Some(Tensor::zeros(Dims::new(1, c, 1, 1)));
        let h_conv = ConvKernel::same_size(Tensor::zeros(Dims::new(c, c, spatial_k, 1)), bias())?;
        let w_conv = ConvKernel::same_size(Tensor::zeros(Dims::new(c, c, 1, spatial_k)), bias())?;
        Ok(SpatialBranch {
            h_conv,
            w_conv,
            spatial_k,
        })
    }
}

/// Per-item mixing weights α, each component in (0, 1): sigmoid of a linear
/// map of the globally pooled, razor-projected features. α for one item
/// depends only on that item (content-adaptive).
pub fn attention_weights<T: Scalar>(
    intrinsic: &Tensor<T>,
    bank: &DynamicKernelBank<T>,
) -> Result<Vec<Vec<T>>> {
    let (alpha, _) = attention_with_pooled(intrinsic, bank)?;
    Ok(alpha)
}

fn attention_with_pooled<T: Scalar>(
    intrinsic: &Tensor<T>,
    bank: &DynamicKernelBank<T>,
) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
    let p = conv2d_im2col(intrinsic, &bank.proj)?;
    let pd = p.dims();
    let inv = s::<T>(1.0) / s::<T>((pd.h * pd.w) as f64);
    let mut pooled = vec![vec![T::zero(); pd.c]; pd.b];
    for b in 0..pd.b {
        for t in 0..pd.c {
            let mut acc = T::zero();
            for h in 0..pd.h {
                for w in 0..pd.w {
                    acc += p.get(b, t, h, w);
                }
            }
            pooled[b][t] = acc * inv;
        }
    }
    let n = bank.n();
    let c_att = bank.c_att();
    let mut alpha = vec![vec![T::zero(); n]; pd.b];
    for b in 0..pd.b {
        for j in 0..n {
            let mut z = bank.lin_b.data()[j];
            for t in 0..c_att {
                z += bank.lin_w.get(j, t, 0, 0) * pooled[b][t];
            }
            alpha[b][j] = sigmoid(z);
        }
    }
    Ok((alpha, pooled))
}

/// Feature gate in (0, 1) with the intrinsic block's dims:
/// `sigmoid(broadcast(h_path) + broadcast(w_path))`.
pub fn spatial_gate<T: Scalar>(intrinsic: &Tensor<T>, sb: &SpatialBranch<T>) -> Result<Tensor<T>> {
    let (gate, _, _) = gate_with_cache(intrinsic, sb)?;
    Ok(gate)
}

#[allow(clippy::type_complexity)]
fn gate_with_cache<T: Scalar>(
    x: &Tensor<T>,
    sb: &SpatialBranch<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let hp_in = gap_width(x)?; // (B, C, H, 1)
    let wp_in = gap_height(x)?; // (B, C, 1, W)
    let h_path = crate::conv::strip_conv(&hp_in, &sb.h_conv)?;
    let w_path = crate::conv::strip_conv(&wp_in, &sb.w_conv)?;
    let d = x.dims();
    let gate = Tensor::from_fn(d, |b, c, h, w| {
        sigmoid(h_path.get(b, c, h, 0) + w_path.get(b, c, 0, w))
    });
    Ok((gate, hp_in, wp_in))
}

/// One razor dynamic convolution layer. `freeze_alpha` / `freeze_gate`
/// clamp the attention and the gate to a constant — used by collapse tests
/// and ablations; frozen paths receive no gradient.
#[derive(Debug, Clone)]
pub struct RdconvLayer<T: Scalar> {
    pub cfg: RdconvConfig,
    /// Expected input channel count.
    pub channels: usize,
    pub bank: DynamicKernelBank<T>,
    pub spatial: SpatialBranch<T>,
    pub freeze_alpha: Option<T>,
    pub freeze_gate: Option<T>,
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct RdconvCache<T: Scalar> {
    xi: Tensor<T>,
    rem_c: usize,
    alpha: Vec<Vec<T>>,
    pooled: Vec<Vec<T>>,
    gate: Tensor<T>,
    conv_out: Tensor<T>,
    hp_in: Option<Tensor<T>>,
    wp_in: Option<Tensor<T>>,
    k_mixed: Vec<Tensor<T>>,
    k_eff: Vec<Tensor<T>>,
    guide: Option<Tensor<T>>,
}

/// Gradients for the layer input and every parameter group. `guide` is the
/// gradient w.r.t. an injected guide map, present iff one was supplied.
#[derive(Debug, Clone)]
pub struct RdconvGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub kernels: Vec<Tensor<T>>,
    pub proj_w: Tensor<T>,
    pub lin_w: Tensor<T>,
    pub lin_b: Tensor<T>,
    pub h_conv_w: Tensor<T>,
    pub h_conv_b: Tensor<T>,
    pub w_conv_w: Tensor<T>,
    pub w_conv_b: Tensor<T>,
    pub guide: Option<Tensor<T>>,
}

impl<T: Scalar> RdconvGrads<T> {
    /// Parameter gradients in the same order as
    /// [`RdconvLayer::named_params`].
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .kernels
            .iter()
            .enumerate()
            .map(|(i, k)| (format!("kernel{i}"), k))
            .collect();
        out.push(("proj_w".into(), &self.proj_w));
        out.push(("lin_w".into(), &self.lin_w));
        out.push(("lin_b".into(), &self.lin_b));
        out.push(("hconv_w".into(), &self.h_conv_w));
        out.push(("hconv_b".into(), &self.h_conv_b));
        out.push(("wconv_w".into(), &self.w_conv_w));
        out.push(("wconv_b".into(), &self.w_conv_b));
        out
    }
}

impl<T: Scalar> RdconvLayer<T> {
    pub fn init(channels: usize, cfg: RdconvConfig, uniform: &mut dyn FnMut() -> f64) -> Result<Self> {
        cfg.validate()?;
        let ci = cfg.intrinsic_channels(channels)?;
        let bank = DynamicKernelBank::init(ci, &cfg, uniform)?;
        let spatial = SpatialBranch::init(ci, cfg.spatial_k)?;
        Ok(RdconvLayer {
            cfg,
            channels,
            bank,
            spatial,
            freeze_alpha: None,
            freeze_gate: None,
        })
    }

    pub fn intrinsic_channels(&self) -> usize {
        self.bank.c()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x, None)?.0)
    }

    /// Forward pass keeping the caches backward needs. `guide`, when given,
    /// multiplies every assembled kernel entrywise: guide dims are
    /// `(c_i, 1, k_d, k_d)`, broadcast across the kernel's input-channel dim.
    pub fn forward_cached(
        &self,
        x: &Tensor<T>,
        guide: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, RdconvCache<T>)> {
        self.cfg.validate()?;
        let xd = x.dims();
        if xd.c != self.channels {
            return Err(Error::shape(
                "RdconvLayer::forward",
                format!("input has {} channels, layer expects {}", xd.c, self.channels),
            ));
        }
        let (xi, xr) = razor_split(x, self.cfg.r_razor)?;
        let ci = xi.dims().c;
        if ci != self.bank.c() {
            return Err(Error::shape(
                "RdconvLayer::forward",
                format!("razored block has {ci} channels, bank was built for {}", self.bank.c()),
            ));
        }
        let b_n = xd.b;
        let n = self.bank.n();
        let kd = self.bank.k_d();

        let (alpha, pooled) = match self.freeze_alpha {
            Some(a) => (vec![vec![a; n]; b_n], Vec::new()),
            None => attention_with_pooled(&xi, &self.bank)?,
        };

        let (gate, hp_in, wp_in) = match self.freeze_gate {
            Some(g) => (Tensor::full(xi.dims(), g), None, None),
            None => {
                let (gate, hp, wp) = gate_with_cache(&xi, &self.spatial)?;
                (gate, Some(hp), Some(wp))
            }
        };

        if let Some(g) = guide {
            let want = Dims::new(ci, 1, kd, kd);
            if g.dims() != want {
                return Err(Error::shape(
                    "RdconvLayer::forward",
                    format!("guide dims {} do not match {want}", g.dims()),
                ));
            }
        }

        let mut k_mixed = Vec::with_capacity(b_n);
        let mut k_eff = Vec::with_capacity(b_n);
        let mut conv_out = Tensor::zeros(xi.dims());
        for b in 0..b_n {
            // per-item kernel: α-weighted sum of the candidates
            let mut mixed = Tensor::zeros(Dims::new(ci, ci, kd, kd));
            for (j, d_j) in self.bank.kernels.iter().enumerate() {
                let a = alpha[b][j];
                for (m, &v) in mixed.data_mut().iter_mut().zip(d_j.data()) {
                    *m += a * v;
                }
            }
            let eff = match guide {
                Some(g) => {
                    let mut e = mixed.clone();
                    for o in 0..ci {
                        for i in 0..ci {
                            for u in 0..kd {
                                for v in 0..kd {
                                    let scaled = e.get(o, i, u, v) * g.get(o, 0, u, v);
                                    e.set(o, i, u, v, scaled);
                                }
                            }
                        }
                    }
                    e
                }
                None => mixed.clone(),
            };
            let item = xi.slice_batch(b)?;
            let kern = ConvKernel::same_size(eff.clone(), None)?;
            let y_b = conv2d_im2col(&item, &kern)?;
            copy_into_batch(&mut conv_out, b, &y_b);
            k_mixed.push(mixed);
            k_eff.push(eff);
        }

        let gated = conv_out.hadamard(&gate)?;
        let out = concat_channels(&[gated, xr])?;
        let cache = RdconvCache {
            xi,
            rem_c: xd.c - ci,
            alpha,
            pooled,
            gate,
            conv_out,
            hp_in,
            wp_in,
            k_mixed,
            k_eff,
            guide: guide.cloned(),
        };
        Ok((out, cache))
    }

    /// Exact gradients of the composed forward map, including through the
    /// attention (product rule over the kernel mixture) and through the gate.
    /// Frozen attention/gate contribute no parameter gradients.
    pub fn backward(&self, cache: &RdconvCache<T>, grad_out: &Tensor<T>) -> Result<RdconvGrads<T>> {
        let xid = cache.xi.dims();
        let ci = xid.c;
        let full = Dims::new(xid.b, ci + cache.rem_c, xid.h, xid.w);
        if grad_out.dims() != full {
            return Err(Error::shape(
                "RdconvLayer::backward",
                format!("grad_out dims {} do not match output {full}", grad_out.dims()),
            ));
        }
        let n = self.bank.n();
        let kd = self.bank.k_d();
        let g_dyn = grad_out.slice_channels(0, ci)?;
        let g_rem = grad_out.slice_channels(ci, ci + cache.rem_c)?;

        // gate: out_dyn = conv_out ⊙ gate
        let d_conv_out = g_dyn.hadamard(&cache.gate)?;
        let mut grad_xi = Tensor::zeros(xid);

        let one = s::<T>(1.0);
        let (mut gh_w, mut gh_b, mut gw_w, mut gw_b) = (
            Tensor::zeros(self.spatial.h_conv.weights.dims()),
            Tensor::zeros(Dims::new(1, ci, 1, 1)),
            Tensor::zeros(self.spatial.w_conv.weights.dims()),
            Tensor::zeros(Dims::new(1, ci, 1, 1)),
        );
        if self.freeze_gate.is_none() {
            let d_gate = g_dyn.hadamard(&cache.conv_out)?;
            let dpre = Tensor::from_fn(xid, |b, c, h, w| {
                let s_v = cache.gate.get(b, c, h, w);
                d_gate.get(b, c, h, w) * s_v * (one - s_v)
            });
            // fold the broadcast back: rows for the h path, columns for the w path
            let mut d_hpath = Tensor::zeros(Dims::new(xid.b, ci, xid.h, 1));
            let mut d_wpath = Tensor::zeros(Dims::new(xid.b, ci, 1, xid.w));
            for b in 0..xid.b {
                for c in 0..ci {
                    for h in 0..xid.h {
                        for w in 0..xid.w {
                            let v = dpre.get(b, c, h, w);
                            d_hpath.add_at(b, c, h, 0, v);
                            d_wpath.add_at(b, c, 0, w, v);
                        }
                    }
                }
            }
            let hp_in = cache.hp_in.as_ref().expect("gate not frozen");
            let wp_in = cache.wp_in.as_ref().expect("gate not frozen");
            let hg = conv2d_backward(hp_in, &self.spatial.h_conv, &d_hpath)?;
            let wg = conv2d_backward(wp_in, &self.spatial.w_conv, &d_wpath)?;
            gh_w = hg.weights;
            gh_b = hg.bias.expect("spatial strips carry bias");
            gw_w = wg.weights;
            gw_b = wg.bias.expect("spatial strips carry bias");
            // undo the directional averages
            let inv_w = one / s::<T>(xid.w as f64);
            let inv_h = one / s::<T>(xid.h as f64);
            for b in 0..xid.b {
                for c in 0..ci {
                    for h in 0..xid.h {
                        let dh = hg.x.get(b, c, h, 0) * inv_w;
                        for w in 0..xid.w {
                            grad_xi.add_at(b, c, h, w, dh);
                        }
                    }
                    for w in 0..xid.w {
                        let dw = wg.x.get(b, c, 0, w) * inv_h;
                        for h in 0..xid.h {
                            grad_xi.add_at(b, c, h, w, dw);
                        }
                    }
                }
            }
        }

        // dynamic branch: per-item convolution, then the kernel chain
        let mut g_kernels: Vec<Tensor<T>> = self
            .bank
            .kernels
            .iter()
            .map(|k| Tensor::zeros(k.dims()))
            .collect();
        let mut g_guide = cache.guide.as_ref().map(|g| Tensor::zeros(g.dims()));
        let mut d_alpha = vec![vec![T::zero(); n]; xid.b];
        for b in 0..xid.b {
            let item = cache.xi.slice_batch(b)?;
            let g_item = d_conv_out.slice_batch(b)?;
            let kern = ConvKernel::same_size(cache.k_eff[b].clone(), None)?;
            let cg = conv2d_backward(&item, &kern, &g_item)?;
            add_into_batch(&mut grad_xi, b, &cg.x);
            let d_k_eff = cg.weights;

            // through the guide (if any): eff = mixed ⊙ broadcast(guide)
            let d_k_mixed = match (&cache.guide, &mut g_guide) {
                (Some(g), Some(gg)) => {
                    let mut dm = Tensor::zeros(d_k_eff.dims());
                    for o in 0..ci {
                        for i in 0..ci {
                            for u in 0..kd {
                                for v in 0..kd {
                                    let de = d_k_eff.get(o, i, u, v);
                                    dm.set(o, i, u, v, de * g.get(o, 0, u, v));
                                    gg.add_at(o, 0, u, v, de * cache.k_mixed[b].get(o, i, u, v));
                                }
                            }
                        }
                    }
                    dm
                }
                _ => d_k_eff,
            };

            // mixed = Σ_j α_j D_j
            for (j, d_j) in self.bank.kernels.iter().enumerate() {
                let mut dot = T::zero();
                for (&dk, &dv) in d_k_mixed.data().iter().zip(d_j.data()) {
                    dot += dk * dv;
                }
                d_alpha[b][j] = dot;
                let a = cache.alpha[b][j];
                for (gk, &dk) in g_kernels[j].data_mut().iter_mut().zip(d_k_mixed.data()) {
                    *gk += a * dk;
                }
            }
        }

        // attention chain
        let mut g_proj = Tensor::zeros(self.bank.proj.weights.dims());
        let mut g_lin_w = Tensor::zeros(self.bank.lin_w.dims());
        let mut g_lin_b = Tensor::zeros(self.bank.lin_b.dims());
        if self.freeze_alpha.is_none() {
            let c_att = self.bank.c_att();
            let inv_hw = one / s::<T>((xid.h * xid.w) as f64);
            let mut dp = Tensor::zeros(Dims::new(xid.b, c_att, xid.h, xid.w));
            for b in 0..xid.b {
                let mut d_pooled = vec![T::zero(); c_att];
                for j in 0..n {
                    let a = cache.alpha[b][j];
                    let dz = d_alpha[b][j] * a * (one - a);
                    g_lin_b.add_at(0, j, 0, 0, dz);
                    for t in 0..c_att {
                        g_lin_w.add_at(j, t, 0, 0, dz * cache.pooled[b][t]);
                        d_pooled[t] += dz * self.bank.lin_w.get(j, t, 0, 0);
                    }
                }
                for (t, &dpv) in d_pooled.iter().enumerate() {
                    let spread = dpv * inv_hw;
                    for h in 0..xid.h {
                        for w in 0..xid.w {
                            dp.set(b, t, h, w, spread);
                        }
                    }
                }
            }
            let pg = conv2d_backward(&cache.xi, &self.bank.proj, &dp)?;
            grad_xi.add_assign_tensor(&pg.x)?;
            g_proj = pg.weights;
        }

        let grad_x = concat_channels(&[grad_xi, g_rem])?;
        Ok(RdconvGrads {
            x: grad_x,
            kernels: g_kernels,
            proj_w: g_proj,
            lin_w: g_lin_w,
            lin_b: g_lin_b,
            h_conv_w: gh_w,
            h_conv_b: gh_b,
            w_conv_w: gw_w,
            w_conv_b: gw_b,
            guide: g_guide,
        })
    }

    /// Stable parameter naming used by checkpoints and the optimizer:
    /// `kernel0..kernel{n−1}, proj_w, lin_w, lin_b, hconv_w, hconv_b,
    /// wconv_w, wconv_b`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .bank
            .kernels
            .iter()
            .enumerate()
            .map(|(i, k)| (format!("kernel{i}"), k))
            .collect();
        out.push(("proj_w".into(), &self.bank.proj.weights));
        out.push(("lin_w".into(), &self.bank.lin_w));
        out.push(("lin_b".into(), &self.bank.lin_b));
        out.push(("hconv_w".into(), &self.spatial.h_conv.weights));
        out.push((
            "hconv_b".into(),
            self.spatial.h_conv.bias.as_ref().expect("spatial strips carry bias"),
        ));
        out.push(("wconv_w".into(), &self.spatial.w_conv.weights));
        out.push((
            "wconv_b".into(),
            self.spatial.w_conv.bias.as_ref().expect("spatial strips carry bias"),
        ));
        out
    }

    /// Mutable view in the same order as [`Self::named_params`]. The bool is
    /// true for bias-like parameters (skipped by weight decay).
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, bool)> {
        let mut out: Vec<(String, &mut Tensor<T>, bool)> = self
            .bank
            .kernels
            .iter_mut()
            .enumerate()
            .map(|(i, k)| (format!("kernel{i}"), k, false))
            .collect();
        out.push(("proj_w".into(), &mut self.bank.proj.weights, false));
        out.push(("lin_w".into(), &mut self.bank.lin_w, false));
        out.push(("lin_b".into(), &mut self.bank.lin_b, true));
        out.push(("hconv_w".into(), &mut self.spatial.h_conv.weights, false));
        out.push((
            "hconv_b".into(),
            self.spatial.h_conv.bias.as_mut().expect("spatial strips carry bias"),
            true,
        ));
        out.push(("wconv_w".into(), &mut self.spatial.w_conv.weights, false));
        out.push((
            "wconv_b".into(),
            self.spatial.w_conv.bias.as_mut().expect("spatial strips carry bias"),
            true,
        ));
        out
    }
}

/// Functional forward over loose parts (no freezing), matching
/// [`RdconvLayer::forward`].
pub fn rdconv_forward<T: Scalar>(
    x: &Tensor<T>,
    cfg: &RdconvConfig,
    bank: &DynamicKernelBank<T>,
    sb: &SpatialBranch<T>,
) -> Result<Tensor<T>> {
    let layer = RdconvLayer {
        cfg: cfg.clone(),
        channels: x.dims().c,
        bank: bank.clone(),
        spatial: sb.clone(),
        freeze_alpha: None,
        freeze_gate: None,
    };
    layer.forward(x)
}

/// Functional forward+backward over loose parts; returns the gradients of
/// `sum(grad_out ⊙ forward(x))`, i.e. treats `grad_out` as the upstream
/// gradient.
pub fn rdconv_backward<T: Scalar>(
    x: &Tensor<T>,
    cfg: &RdconvConfig,
    bank: &DynamicKernelBank<T>,
    sb: &SpatialBranch<T>,
    grad_out: &Tensor<T>,
) -> Result<RdconvGrads<T>> {
    let layer = RdconvLayer {
        cfg: cfg.clone(),
        channels: x.dims().c,
        bank: bank.clone(),
        spatial: sb.clone(),
        freeze_alpha: None,
        freeze_gate: None,
    };
    let (_, cache) = layer.forward_cached(x, None)?;
    layer.backward(&cache, grad_out)
}

fn copy_into_batch<T: Scalar>(dst: &mut Tensor<T>, b: usize, src: &Tensor<T>) {
    let stride = src.dims().count();
    let base = b * stride;
    dst.data_mut()[base..base + stride].copy_from_slice(src.data());
}

fn add_into_batch<T: Scalar>(dst: &mut Tensor<T>, b: usize, src: &Tensor<T>) {
    let stride = src.dims().count();
    let base = b * stride;
    for (d, &s_v) in dst.data_mut()[base..base + stride].iter_mut().zip(src.data()) {
        *d += s_v;
    }
}
