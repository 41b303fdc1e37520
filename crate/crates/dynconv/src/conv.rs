//! Static 2-D convolution with two interchangeable execution paths — a
//! brute-force direct loop that serves as the oracle, and an im2col+matmul
//! fast path — plus strip convolutions, depthwise strips, and exact backward
//! passes for all of them.
//!
//! Both paths accumulate taps in the same `(c_in, k_h, k_w)` order, so they
//! agree to the last bit on identical inputs; the equivalence tests still
//! only assume a 1e-10 relative band. Borders use zero padding throughout.
//! Output sizes must divide exactly: `(H + 2·pad − k) / stride` has to be an
//! integer, otherwise the call is a shape error rather than a silent floor.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_dims, Dims, Tensor};
use crate::{s, Scalar};

/// Weights `(c_out, c_in, k_h, k_w)` — stored as a [`Tensor`] whose axes are
/// reinterpreted — optional bias `(1, c_out, 1, 1)`, stride and zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: (usize, usize),
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(
        weights: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Self> {
        let d = weights.dims();
        if d.b == 0 || d.c == 0 || d.h == 0 || d.w == 0 {
            return Err(Error::config(
                "ConvKernel::new",
                format!("degenerate weight dims {d}"),
            ));
        }
        if stride == 0 {
            return Err(Error::config("ConvKernel::new", "stride must be positive"));
        }
        if let Some(b) = &bias {
            let bd = b.dims();
            if bd != Dims::new(1, d.b, 1, 1) {
                return Err(Error::shape(
                    "ConvKernel::new",
                    format!("bias dims {bd} do not match {} output channels", d.b),
                ));
            }
        }
        Ok(ConvKernel {
            weights,
            bias,
            stride,
            padding,
        })
    }

    /// Stride-1 kernel padded for same-size output; both kernel dims must be
    /// odd for the padding to center.
    pub fn same_size(weights: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let d = weights.dims();
        if d.h % 2 == 0 || d.w % 2 == 0 {
            return Err(Error::config(
                "ConvKernel::same_size",
                format!("even kernel {}×{} cannot pad to same size", d.h, d.w),
            ));
        }
        let padding = ((d.h - 1) / 2, (d.w - 1) / 2);
        ConvKernel::new(weights, bias, 1, padding)
    }

    pub fn c_out(&self) -> usize {
        self.weights.dims().b
    }

    pub fn c_in(&self) -> usize {
        self.weights.dims().c
    }

    pub fn k_h(&self) -> usize {
        self.weights.dims().h
    }

    pub fn k_w(&self) -> usize {
        self.weights.dims().w
    }

    /// Output shape for an input, enforcing the exact-division rule.
    pub fn out_dims(&self, x: Dims) -> Result<Dims> {
        if x.c != self.c_in() {
            return Err(Error::shape(
                "ConvKernel::out_dims",
                format!("input has {} channels, kernel expects {}", x.c, self.c_in()),
            ));
        }
        let span = |n: usize, pad: usize, k: usize, axis: &str| -> Result<usize> {
            let padded = n + 2 * pad;
            if padded < k {
                return Err(Error::shape(
                    "ConvKernel::out_dims",
                    format!("kernel {k} larger than padded {axis} extent {padded}"),
                ));
            }
            let eff = padded - k;
            if eff % self.stride != 0 {
                return Err(Error::shape(
                    "ConvKernel::out_dims",
                    format!("non-integer output size along {axis}: ({n} + 2·{pad} − {k}) / {}", self.stride),
                ));
            }
            Ok(eff / self.stride + 1)
        };
        let oh = span(x.h, self.padding.0, self.k_h(), "height")?;
        let ow = span(x.w, self.padding.1, self.k_w(), "width")?;
        Ok(Dims::new(x.b, self.c_out(), oh, ow))
    }
}

/// Direct-definition convolution: the oracle path.
pub fn conv2d_naive<T: Scalar>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    let od = k.out_dims(x.dims())?;
    let xd = x.dims();
    let (kh, kw) = (k.k_h(), k.k_w());
    let (ph, pw) = k.padding;
    let mut out = Tensor::zeros(od);
    for b in 0..od.b {
        for co in 0..od.c {
            for oh in 0..od.h {
                for ow in 0..od.w {
                    let mut acc = T::zero();
                    for ci in 0..xd.c {
                        for u in 0..kh {
                            let ih = (oh * k.stride + u) as isize - ph as isize;
                            if ih < 0 || ih >= xd.h as isize {
                                continue;
                            }
                            for v in 0..kw {
                                let iw = (ow * k.stride + v) as isize - pw as isize;
                                if iw < 0 || iw >= xd.w as isize {
                                    continue;
                                }
                                acc += k.weights.get(co, ci, u, v)
                                    * x.get(b, ci, ih as usize, iw as usize);
                            }
                        }
                    }
                    if let Some(bias) = &k.bias {
                        acc += bias.data()[co];
                    }
                    out.set(b, co, oh, ow, acc);
                }
            }
        }
    }
    Ok(out)
}

/// im2col + matmul fast path; contract identical to [`conv2d_naive`].
pub fn conv2d_im2col<T: Scalar>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    let od = k.out_dims(x.dims())?;
    let xd = x.dims();
    let (kh, kw) = (k.k_h(), k.k_w());
    let (ph, pw) = k.padding;
    let rows = xd.c * kh * kw; // tap order (ci, u, v) — same as the naive loop
    let cols = od.h * od.w;
    let mut out = Tensor::zeros(od);
    let w_flat = k.weights.data();
    let mut col = vec![T::zero(); rows * cols];
    for b in 0..od.b {
        // materialize the column matrix for this batch item
        for ci in 0..xd.c {
            for u in 0..kh {
                for v in 0..kw {
                    let r = (ci * kh + u) * kw + v;
                    let base = r * cols;
                    for oh in 0..od.h {
                        let ih = (oh * k.stride + u) as isize - ph as isize;
                        for ow in 0..od.w {
                            let iw = (ow * k.stride + v) as isize - pw as isize;
                            let val = if ih >= 0
                                && ih < xd.h as isize
                                && iw >= 0
                                && iw < xd.w as isize
                            {
                                x.get(b, ci, ih as usize, iw as usize)
                            } else {
                                T::zero()
                            };
                            col[base + oh * od.w + ow] = val;
                        }
                    }
                }
            }
        }
        // out[co][·] = Σ_r w[co][r] · col[r][·], accumulated in ascending r
        for co in 0..od.c {
            let out_base = out.idx(b, co, 0, 0);
            let w_row = &w_flat[co * rows..(co + 1) * rows];
            let acc = &mut out.data_mut()[out_base..out_base + cols];
            for (r, &wv) in w_row.iter().enumerate() {
                let col_row = &col[r * cols..(r + 1) * cols];
                for (a, &cv) in acc.iter_mut().zip(col_row.iter()) {
                    *a += wv * cv;
                }
            }
            if let Some(bias) = &k.bias {
                let bv = bias.data()[co];
                for a in acc.iter_mut() {
                    *a += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of the convolution forward map.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub weights: Tensor<T>,
    /// Present exactly when the kernel carries a bias.
    pub bias: Option<Tensor<T>>,
}

/// Exact gradients w.r.t. input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &ConvKernel<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let od = k.out_dims(x.dims())?;
    if grad_out.dims() != od {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out dims {} do not match output {od}", grad_out.dims()),
        ));
    }
    let xd = x.dims();
    let (kh, kw) = (k.k_h(), k.k_w());
    let (ph, pw) = k.padding;
    let mut gx = Tensor::zeros(xd);
    let mut gw = Tensor::zeros(k.weights.dims());
    let mut gb = k.bias.as_ref().map(|b| Tensor::zeros(b.dims()));
    for b in 0..od.b {
        for co in 0..od.c {
            for oh in 0..od.h {
                for ow in 0..od.w {
                    let g = grad_out.get(b, co, oh, ow);
                    if let Some(gb) = &mut gb {
                        gb.add_at(0, co, 0, 0, g);
                    }
                    for ci in 0..xd.c {
                        for u in 0..kh {
                            let ih = (oh * k.stride + u) as isize - ph as isize;
                            if ih < 0 || ih >= xd.h as isize {
                                continue;
                            }
                            for v in 0..kw {
                                let iw = (ow * k.stride + v) as isize - pw as isize;
                                if iw < 0 || iw >= xd.w as isize {
                                    continue;
                                }
                                let (ihu, iwu) = (ih as usize, iw as usize);
                                gx.add_at(b, ci, ihu, iwu, k.weights.get(co, ci, u, v) * g);
                                gw.add_at(co, ci, u, v, x.get(b, ci, ihu, iwu) * g);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        x: gx,
        weights: gw,
        bias: gb,
    })
}

fn ensure_strip_shape(k_h: usize, k_w: usize, context: &'static str) -> Result<()> {
    if k_h != 1 && k_w != 1 {
        return Err(Error::config(
            context,
            format!("{k_h}×{k_w} kernel is not a strip (one dim must be 1)"),
        ));
    }
    Ok(())
}

/// Strip convolution: a dense conv whose kernel is `k×1` or `1×k`, stride 1,
/// padded for same-size output. The kernel must already be configured that
/// way; anything else is an invalid-config error.
pub fn strip_conv<T: Scalar>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    ensure_strip_shape(k.k_h(), k.k_w(), "strip_conv")?;
    if k.stride != 1 {
        return Err(Error::config("strip_conv", "strips run at stride 1"));
    }
    let want = ((k.k_h() - 1) / 2, (k.k_w() - 1) / 2);
    if k.k_h() % 2 == 0 || k.k_w() % 2 == 0 || k.padding != want {
        return Err(Error::config(
            "strip_conv",
            format!("padding {:?} does not produce same-size output", k.padding),
        ));
    }
    conv2d_im2col(x, k)
}

/// Depthwise strip convolution: weights `(C, 1, k_h, k_w)` with exactly one
/// kernel dim equal to 1; channel `c` of the input is convolved with strip
/// `c` only. Stride 1, same-size zero padding. Bias, when given, is
/// `(1, C, 1, 1)`.
pub fn depthwise_strip_conv<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let wd = weights.dims();
    ensure_strip_shape(wd.h, wd.w, "depthwise_strip_conv")?;
    if wd.c != 1 {
        return Err(Error::shape(
            "depthwise_strip_conv",
            format!("weights {wd} must have a single input channel per group"),
        ));
    }
    let xd = x.dims();
    if xd.c != wd.b {
        return Err(Error::shape(
            "depthwise_strip_conv",
            format!("input has {} channels, weights cover {}", xd.c, wd.b),
        ));
    }
    if wd.h % 2 == 0 || wd.w % 2 == 0 {
        return Err(Error::config(
            "depthwise_strip_conv",
            "strip length must be odd for same-size padding",
        ));
    }
    if let Some(b) = bias {
        if b.dims() != Dims::new(1, xd.c, 1, 1) {
            return Err(Error::shape(
                "depthwise_strip_conv",
                format!("bias dims {} do not match {} channels", b.dims(), xd.c),
            ));
        }
    }
    let (ph, pw) = ((wd.h - 1) / 2, (wd.w - 1) / 2);
    let mut out = Tensor::zeros(xd);
    for b in 0..xd.b {
        for c in 0..xd.c {
            for oh in 0..xd.h {
                for ow in 0..xd.w {
                    let mut acc = T::zero();
                    for u in 0..wd.h {
                        let ih = (oh + u) as isize - ph as isize;
                        if ih < 0 || ih >= xd.h as isize {
                            continue;
                        }
                        for v in 0..wd.w {
                            let iw = (ow + v) as isize - pw as isize;
                            if iw < 0 || iw >= xd.w as isize {
                                continue;
                            }
                            acc += weights.get(c, 0, u, v) * x.get(b, c, ih as usize, iw as usize);
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias.data()[c];
                    }
                    out.set(b, c, oh, ow, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`depthwise_strip_conv`]. The bias gradient is
/// returned iff `bias` was present in the forward call.
pub fn depthwise_strip_conv_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    ensure_same_dims(x, grad_out, "depthwise_strip_conv_backward")?;
    let wd = weights.dims();
    let xd = x.dims();
    if xd.c != wd.b || wd.c != 1 {
        return Err(Error::shape(
            "depthwise_strip_conv_backward",
            format!("weights {wd} do not fit input {xd}"),
        ));
    }
    let (ph, pw) = ((wd.h - 1) / 2, (wd.w - 1) / 2);
    let mut gx = Tensor::zeros(xd);
    let mut gw = Tensor::zeros(wd);
    let mut gb = bias.map(|b| Tensor::zeros(b.dims()));
    for b in 0..xd.b {
        for c in 0..xd.c {
            for oh in 0..xd.h {
                for ow in 0..xd.w {
                    let g = grad_out.get(b, c, oh, ow);
                    if let Some(gb) = &mut gb {
                        gb.add_at(0, c, 0, 0, g);
                    }
                    for u in 0..wd.h {
                        let ih = (oh + u) as isize - ph as isize;
                        if ih < 0 || ih >= xd.h as isize {
                            continue;
                        }
                        for v in 0..wd.w {
                            let iw = (ow + v) as isize - pw as isize;
                            if iw < 0 || iw >= xd.w as isize {
                                continue;
                            }
                            let (ihu, iwu) = (ih as usize, iw as usize);
                            gx.add_at(b, c, ihu, iwu, weights.get(c, 0, u, v) * g);
                            gw.add_at(c, 0, u, v, x.get(b, c, ihu, iwu) * g);
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Kaiming-uniform fan-in bound: weights drawn from `U(−b, b)` with
/// `b = sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Fill a weight tensor Kaiming-uniform from caller-supplied `U[0,1)` draws,
/// consumed in row-major order. Keeping the draw source external makes every
/// initialization reproducible from a single seeded stream.
pub fn kaiming_fill<T: Scalar>(
    dims: Dims,
    fan_in: usize,
    uniform: &mut dyn FnMut() -> f64,
) -> Tensor<T> {
    let bound = kaiming_bound(fan_in);
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = s((uniform() * 2.0 - 1.0) * bound);
    }
    t
}
