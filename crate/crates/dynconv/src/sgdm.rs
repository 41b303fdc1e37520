//! Static-guided dynamic module (SGDM).
//!
//! The input splits channel-wise into four groups with ratios
//! `[r, r, r, 1−3r]`: a razor-dynamic branch, two asymmetric static strip
//! branches (depthwise `k_s×1` and `1×k_s`), and an identity passthrough.
//! The outputs are concatenated back in order, so dims are preserved.
//!
//! The "static-guided" part: each assembled dynamic kernel is multiplied
//! entrywise by a guide map folded from the static strips' *live* weights,
//! `W'_rd = W_rd ⊙ (ψ(W_h) + ψ(W_w))`, where ψ reshapes a length-k_s strip
//! into a k_d×k_d window (k_s = k_d² by construction) and the map is
//! broadcast over the kernel's input-channel dim. Static weights therefore
//! cap the dynamic response entrywise, and they receive gradient from two
//! paths: their own branch and the guidance product.
//!
//! Conventions chosen here: the strips are depthwise (one strip per channel,
//! so the per-output-channel guide pattern is well-defined), and ψ folds the
//! width strip row-major while the height strip fills column-first — each
//! strip lays out along the axis it convolves.

use crate::conv::{depthwise_strip_conv, depthwise_strip_conv_backward, kaiming_fill, ConvKernel};
use crate::error::{Error, Result};
use crate::rdconv::{RdconvCache, RdconvConfig, RdconvGrads, RdconvLayer};
use crate::tensor::{channel_partition, concat_channels, reshape_kernel, Dims, Tensor};
use crate::{sigmoid, Scalar};

/// Hyperparameters of one SGDM block.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdmConfig {
    /// Per-group ratio of the three processed branches; identity gets 1−3r.
    pub r_split: f64,
    /// Dynamic kernel size (odd); must match `rdconv.k_d`.
    pub k_d: usize,
    /// Static strip length; must equal k_d² so ψ folds exactly.
    pub k_s: usize,
    /// Configuration of the embedded razor-dynamic branch.
    pub rdconv: RdconvConfig,
}

impl Default for SgdmConfig {
    fn default() -> Self {
        SgdmConfig {
            r_split: 0.25,
            k_d: 3,
            k_s: 9,
            rdconv: RdconvConfig::default(),
        }
    }
}

impl SgdmConfig {
    pub fn validate(&self) -> Result<()> {
        self.rdconv.validate()?;
        if !(self.r_split > 0.0 && 3.0 * self.r_split <= 1.0 + 1e-9) {
            return Err(Error::config(
                "SgdmConfig",
                format!("r_split {} must satisfy 0 < 3·r ≤ 1", self.r_split),
            ));
        }
        if self.k_d % 2 == 0 {
            return Err(Error::config("SgdmConfig", format!("k_d {} must be odd", self.k_d)));
        }
        if self.k_s != self.k_d * self.k_d {
            return Err(Error::config(
                "SgdmConfig",
                format!("k_s {} must equal k_d² = {}", self.k_s, self.k_d * self.k_d),
            ));
        }
        if self.rdconv.k_d != self.k_d {
            return Err(Error::config(
                "SgdmConfig",
                format!(
                    "dynamic-branch kernel size {} disagrees with k_d {}",
                    self.rdconv.k_d, self.k_d
                ),
            ));
        }
        Ok(())
    }

    /// Branch widths `[c_rd, c_h, c_w, c_id]` for a given channel count.
    pub fn widths(&self, channels: usize) -> Result<[usize; 4]> {
        self.validate()?;
        let r = self.r_split;
        let parts = channel_partition(channels, &[r, r, r, 1.0 - 3.0 * r])?;
        Ok([parts[0], parts[1], parts[2], parts[3]])
    }
}

/// Fold a length-k² width strip (runs along W) into a k×k window, row-major.
pub fn fold_width_strip<T: Scalar>(strip: &[T], k_d: usize) -> Result<Tensor<T>> {
    let k = reshape_kernel(strip, k_d, k_d)?;
    let mut out = Tensor::zeros(Dims::new(1, 1, k_d, k_d));
    for u in 0..k_d {
        for v in 0..k_d {
            out.set(0, 0, u, v, k.at(u, v));
        }
    }
    Ok(out)
}

/// Fold a length-k² height strip (runs along H) into a k×k window,
/// column-first — the transpose of the row-major fill.
pub fn fold_height_strip<T: Scalar>(strip: &[T], k_d: usize) -> Result<Tensor<T>> {
    let k = reshape_kernel(strip, k_d, k_d)?.transposed();
    let mut out = Tensor::zeros(Dims::new(1, 1, k_d, k_d));
    for u in 0..k_d {
        for v in 0..k_d {
            out.set(0, 0, u, v, k.at(u, v));
        }
    }
    Ok(out)
}

/// Guide map `(c_out, 1, k_d, k_d)`: per output channel o,
/// `ψ(W_h[o]) + ψ(W_w[o])` from the first `c_out` strips of each static.
pub fn build_guide_map<T: Scalar>(
    w_h: &Tensor<T>,
    w_w: &Tensor<T>,
    c_out: usize,
    k_d: usize,
) -> Result<Tensor<T>> {
    let k_s = k_d * k_d;
    let (hd, wd) = (w_h.dims(), w_w.dims());
    if hd.c != 1 || hd.h != k_s || hd.w != 1 {
        return Err(Error::shape(
            "build_guide_map",
            format!("height strips {hd} are not ({}, 1, {k_s}, 1)", hd.b),
        ));
    }
    if wd.c != 1 || wd.h != 1 || wd.w != k_s {
        return Err(Error::shape(
            "build_guide_map",
            format!("width strips {wd} are not ({}, 1, 1, {k_s})", wd.b),
        ));
    }
    if hd.b < c_out || wd.b < c_out {
        return Err(Error::shape(
            "build_guide_map",
            format!("need {c_out} strips, statics carry {} and {}", hd.b, wd.b),
        ));
    }
    let mut guide = Tensor::zeros(Dims::new(c_out, 1, k_d, k_d));
    for o in 0..c_out {
        let hs: Vec<T> = (0..k_s).map(|s| w_h.get(o, 0, s, 0)).collect();
        let ws: Vec<T> = (0..k_s).map(|s| w_w.get(o, 0, 0, s)).collect();
        let gh = fold_height_strip(&hs, k_d)?;
        let gw = fold_width_strip(&ws, k_d)?;
        for u in 0..k_d {
            for v in 0..k_d {
                guide.set(o, 0, u, v, gh.get(0, 0, u, v) + gw.get(0, 0, u, v));
            }
        }
    }
    Ok(guide)
}

/// Entrywise static-to-dynamic fusion: `W'_rd = W_rd ⊙ (ψ(W_h) + ψ(W_w))`,
/// the guide pattern broadcast over the input-channel dim of `w_rd`.
pub fn guide_weights<T: Scalar>(
    w_rd: &Tensor<T>,
    w_h: &Tensor<T>,
    w_w: &Tensor<T>,
) -> Result<Tensor<T>> {
    let kd = w_rd.dims();
    if kd.h != kd.w {
        return Err(Error::shape(
            "guide_weights",
            format!("dynamic kernel {kd} is not square"),
        ));
    }
    let guide = build_guide_map(w_h, w_w, kd.b, kd.h)?;
    Ok(Tensor::from_fn(kd, |o, i, u, v| {
        let _ = i;
        w_rd.get(o, i, u, v) * guide.get(o, 0, u, v)
    }))
}

/// One static-guided dynamic module.
#[derive(Debug, Clone)]
pub struct SgdmModule<T: Scalar> {
    pub cfg: SgdmConfig,
    pub channels: usize,
    /// Branch widths `[c_rd, c_h, c_w, c_id]`; they partition `channels`.
    pub widths: [usize; 4],
    /// Razor-dynamic branch on the first group.
    pub rd: RdconvLayer<T>,
    /// Depthwise `(c_h, 1, k_s, 1)` static strips.
    pub h_static_w: Tensor<T>,
    pub h_static_b: Tensor<T>,
    /// Depthwise `(c_w, 1, 1, k_s)` static strips.
    pub w_static_w: Tensor<T>,
    pub w_static_b: Tensor<T>,
}

/// Forward caches for [`SgdmModule::backward`].
#[derive(Debug, Clone)]
pub struct SgdmCache<T: Scalar> {
    x_h: Tensor<T>,
    x_w: Tensor<T>,
    rd: RdconvCache<T>,
}

/// Gradients for the input and every parameter. The guidance-path gradient
/// is already folded into `h_static_w` / `w_static_w`.
#[derive(Debug, Clone)]
pub struct SgdmGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub rd: RdconvGrads<T>,
    pub h_static_w: Tensor<T>,
    pub h_static_b: Tensor<T>,
    pub w_static_w: Tensor<T>,
    pub w_static_b: Tensor<T>,
}

impl<T: Scalar> SgdmGrads<T> {
    /// Same order as [`SgdmModule::named_params`].
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .rd
            .named()
            .into_iter()
            .map(|(n, t)| (format!("rd.{n}"), t))
            .collect();
        out.push(("hstatic_w".into(), &self.h_static_w));
        out.push(("hstatic_b".into(), &self.h_static_b));
        out.push(("wstatic_w".into(), &self.w_static_w));
        out.push(("wstatic_b".into(), &self.w_static_b));
        out
    }
}

impl<T: Scalar> SgdmModule<T> {
    /// Initialize for `channels` inputs. Statics are Kaiming-uniform with
    /// fan-in k_s and zero bias. Draw order: the dynamic branch first, then
    /// the height strips, then the width strips.
    pub fn init(channels: usize, cfg: SgdmConfig, uniform: &mut dyn FnMut() -> f64) -> Result<Self> {
        let widths = cfg.widths(channels)?;
        let rd = RdconvLayer::init(widths[0], cfg.rdconv.clone(), uniform)?;
        let ks = cfg.k_s;
        let h_static_w = kaiming_fill(Dims::new(widths[1], 1, ks, 1), ks, uniform);
        let w_static_w = kaiming_fill(Dims::new(widths[2], 1, 1, ks), ks, uniform);
        Ok(SgdmModule {
            cfg,
            channels,
            widths,
            rd,
            h_static_w,
            h_static_b: Tensor::zeros(Dims::new(1, widths[1], 1, 1)),
            w_static_w,
            w_static_b: Tensor::zeros(Dims::new(1, widths[2], 1, 1)),
        })
    }

    fn split4(&self, x: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
        let xd = x.dims();
        if xd.c != self.channels {
            return Err(Error::shape(
                "SgdmModule",
                format!("input has {} channels, module expects {}", xd.c, self.channels),
            ));
        }
        let [a, b, c, _] = self.widths;
        Ok([
            x.slice_channels(0, a)?,
            x.slice_channels(a, a + b)?,
            x.slice_channels(a + b, a + b + c)?,
            x.slice_channels(a + b + c, xd.c)?,
        ])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SgdmCache<T>)> {
        let [x_rd, x_h, x_w, x_id] = self.split4(x)?;
        let guide = build_guide_map(
            &self.h_static_w,
            &self.w_static_w,
            self.rd.intrinsic_channels(),
            self.cfg.k_d,
        )?;
        let (y_rd, rd_cache) = self.rd.forward_cached(&x_rd, Some(&guide))?;
        let y_h = depthwise_strip_conv(&x_h, &self.h_static_w, Some(&self.h_static_b))?;
        let y_w = depthwise_strip_conv(&x_w, &self.w_static_w, Some(&self.w_static_b))?;
        let out = concat_channels(&[y_rd, y_h, y_w, x_id.clone()])?;
        Ok((
            out,
            SgdmCache {
                x_h,
                x_w,
                rd: rd_cache,
            },
        ))
    }

    /// Exact gradients, including the product rule through the guidance: the
    /// dynamic branch's guide gradient is folded back onto the strip weights
    /// (inverting ψ) and added to their own-branch gradient.
    pub fn backward(&self, cache: &SgdmCache<T>, grad_out: &Tensor<T>) -> Result<SgdmGrads<T>> {
        let [a, b, c, _] = self.widths;
        let god = grad_out.dims();
        if god.c != self.channels {
            return Err(Error::shape(
                "SgdmModule::backward",
                format!("grad_out has {} channels, module expects {}", god.c, self.channels),
            ));
        }
        let g_rd = grad_out.slice_channels(0, a)?;
        let g_h = grad_out.slice_channels(a, a + b)?;
        let g_w = grad_out.slice_channels(a + b, a + b + c)?;
        let g_id = grad_out.slice_channels(a + b + c, god.c)?;

        let rd_grads = self.rd.backward(&cache.rd, &g_rd)?;
        let (gx_h, mut gw_h, gb_h) = depthwise_strip_conv_backward(
            &cache.x_h,
            &self.h_static_w,
            Some(&self.h_static_b),
            &g_h,
        )?;
        let (gx_w, mut gw_w, gb_w) = depthwise_strip_conv_backward(
            &cache.x_w,
            &self.w_static_w,
            Some(&self.w_static_b),
            &g_w,
        )?;

        // guidance path: dG folds back onto the strips through ψ⁻¹
        let kd = self.cfg.k_d;
        if let Some(dg) = &rd_grads.guide {
            for o in 0..dg.dims().b {
                for u in 0..kd {
                    for v in 0..kd {
                        let g = dg.get(o, 0, u, v);
                        gw_h.add_at(o, 0, v * kd + u, 0, g);
                        gw_w.add_at(o, 0, 0, u * kd + v, g);
                    }
                }
            }
        }

        let x = concat_channels(&[rd_grads.x.clone(), gx_h, gx_w, g_id])?;
        Ok(SgdmGrads {
            x,
            rd: rd_grads,
            h_static_w: gw_h,
            h_static_b: gb_h.expect("statics carry bias"),
            w_static_w: gw_w,
            w_static_b: gb_w.expect("statics carry bias"),
        })
    }

    /// Stable parameter naming: the dynamic branch's params under an `rd.`
    /// prefix, then `hstatic_w, hstatic_b, wstatic_w, wstatic_b`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .rd
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("rd.{n}"), t))
            .collect();
        out.push(("hstatic_w".into(), &self.h_static_w));
        out.push(("hstatic_b".into(), &self.h_static_b));
        out.push(("wstatic_w".into(), &self.w_static_w));
        out.push(("wstatic_b".into(), &self.w_static_b));
        out
    }

    /// Mutable view in the same order; bool marks bias-like params.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, bool)> {
        let mut out: Vec<(String, &mut Tensor<T>, bool)> = self
            .rd
            .named_params_mut()
            .into_iter()
            .map(|(n, t, b)| (format!("rd.{n}"), t, b))
            .collect();
        out.push(("hstatic_w".into(), &mut self.h_static_w, false));
        out.push(("hstatic_b".into(), &mut self.h_static_b, true));
        out.push(("wstatic_w".into(), &mut self.w_static_w, false));
        out.push(("wstatic_b".into(), &mut self.w_static_b, true));
        out
    }
}

/// Functional forward, matching [`SgdmModule::forward`].
pub fn sgdm_forward<T: Scalar>(x: &Tensor<T>, m: &SgdmModule<T>) -> Result<Tensor<T>> {
    m.forward(x)
}

/// Functional forward+backward: gradients of `sum(grad_out ⊙ forward(x))`.
pub fn sgdm_backward<T: Scalar>(
    x: &Tensor<T>,
    m: &SgdmModule<T>,
    grad_out: &Tensor<T>,
) -> Result<SgdmGrads<T>> {
    let (_, cache) = m.forward_cached(x)?;
    m.backward(&cache, grad_out)
}

/// CBAM-style spatial attention, used only as a harness comparator:
/// `x ⊙ sigmoid(conv(concat(channel-mean, channel-max)))`. The kernel maps
/// 2 input channels to 1 at stride 1 with same-size padding. Forward only.
pub fn cbam_spatial_baseline<T: Scalar>(x: &Tensor<T>, k7: &ConvKernel<T>) -> Result<Tensor<T>> {
    if k7.c_in() != 2 || k7.c_out() != 1 {
        return Err(Error::shape(
            "cbam_spatial_baseline",
            format!("kernel maps {}→{} channels, want 2→1", k7.c_in(), k7.c_out()),
        ));
    }
    let want = ((k7.k_h() - 1) / 2, (k7.k_w() - 1) / 2);
    if k7.stride != 1 || k7.padding != want {
        return Err(Error::config(
            "cbam_spatial_baseline",
            "kernel must run at stride 1 with same-size padding",
        ));
    }
    let xd = x.dims();
    if xd.c == 0 {
        return Err(Error::shape("cbam_spatial_baseline", "input has no channels"));
    }
    let mut stats = Tensor::zeros(Dims::new(xd.b, 2, xd.h, xd.w));
    let inv_c = crate::s::<T>(1.0 / xd.c as f64);
    for b in 0..xd.b {
        for h in 0..xd.h {
            for w in 0..xd.w {
                let mut acc = T::zero();
                let mut max = x.get(b, 0, h, w);
                for c in 0..xd.c {
                    let v = x.get(b, c, h, w);
                    acc += v;
                    if v > max {
                        max = v;
                    }
                }
                stats.set(b, 0, h, w, acc * inv_c);
                stats.set(b, 1, h, w, max);
            }
        }
    }
    let att = crate::conv::conv2d_im2col(&stats, k7)?;
    Ok(Tensor::from_fn(xd, |b, c, h, w| {
        x.get(b, c, h, w) * sigmoid(att.get(b, 0, h, w))
    }))
}
