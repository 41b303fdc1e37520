//! Parameter and FLOP accounting.
//!
//! Conventions (stated here and in every rendered report, since published
//! cost tables rarely spell theirs out):
//!
//! * one multiply-accumulate = 2 FLOPs;
//! * sigmoid, pooling, elementwise add/multiply = 1 FLOP per *output*
//!   element;
//! * totals include the batch dimension;
//! * a dynamic convolution is billed as its n candidate convolutions plus
//!   the α-weighted blend of their outputs — the classical "mixture of
//!   experts" reading, which is what published dynamic-conv cost tables
//!   track. (The implementation actually assembles one kernel per item and
//!   convolves once, which is cheaper; the report deliberately prices the
//!   equivalent formulation.)
//!
//! Counting is pure arithmetic over a [`ModuleDesc`]: no tensors are
//! touched, degenerate inputs (zero-sized spatial dims) simply cost zero.

use crate::rdconv::RdconvConfig;
use crate::sgdm::SgdmConfig;
use crate::tensor::Dims;

/// Cost of one branch/sub-layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostEntry {
    /// Which module the entry belongs to (caller-chosen label).
    pub layer: String,
    /// Branch or sub-layer name within the module.
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

/// A list of cost entries plus totals.
#[derive(Debug, Clone, Default)]
pub struct CostReport {
    pub entries: Vec<CostEntry>,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.entries.iter().map(|e| e.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    pub fn extend(&mut self, other: CostReport) {
        self.entries.extend(other.entries);
    }

    /// CSV with a `layer,name,params,flops` header, one entry per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,name,params,flops\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.layer, e.name, e.params, e.flops));
        }
        out
    }

    /// Human-readable table; the header documents the FLOP conventions.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("# cost conventions: 1 MAC = 2 FLOPs; sigmoid/pool/add/mul = 1 FLOP per output element;\n");
        out.push_str("# dynamic conv billed as n candidate convs + output blend; totals include the batch dim\n");
        out.push_str(&format!(
            "{:<12} {:<20} {:>12} {:>16}\n",
            "layer", "name", "params", "flops"
        ));
        for e in &self.entries {
            out.push_str(&format!(
                "{:<12} {:<20} {:>12} {:>16}\n",
                e.layer, e.name, e.params, e.flops
            ));
        }
        out.push_str(&format!(
            "{:<12} {:<20} {:>12} {:>16}\n",
            "TOTAL",
            "",
            self.total_params(),
            self.total_flops()
        ));
        out
    }
}

/// Static description of a countable module.
#[derive(Debug, Clone)]
pub enum ModuleDesc {
    /// Dense convolution; `padding` is per-side (height, width).
    Conv {
        c_out: usize,
        c_in: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        padding: (usize, usize),
        bias: bool,
    },
    /// Depthwise strip at stride 1 with same-size padding.
    DepthwiseStrip {
        channels: usize,
        k_h: usize,
        k_w: usize,
        bias: bool,
    },
    Identity,
    /// Razor dynamic convolution over `channels` inputs.
    Rdconv { channels: usize, cfg: RdconvConfig },
    /// Full static-guided dynamic module over `channels` inputs.
    Sgdm { channels: usize, cfg: SgdmConfig },
}

/// Learnable scalar count; independent of the input shape.
pub fn count_params(desc: &ModuleDesc) -> u64 {
    cost_report("", desc, Dims::new(1, 0, 0, 0)).total_params()
}

/// FLOP count for one evaluation on `input` (batch included). The channel
/// count comes from the description; `input` supplies batch and spatial
/// dims.
pub fn count_flops(desc: &ModuleDesc, input: Dims) -> u64 {
    cost_report("", desc, input).total_flops()
}

/// The razor scaling argument in closed form: compressing the attention
/// path's input to r·c channels shrinks its projection FLOPs by exactly r².
pub fn razor_projection_flop_ratio(r: f64) -> f64 {
    r * r
}

fn out_len(n: usize, k: usize, pad: usize, stride: usize) -> u64 {
    if n == 0 || stride == 0 {
        return 0;
    }
    let padded = n + 2 * pad;
    if padded < k {
        return 0;
    }
    ((padded - k) / stride + 1) as u64
}

/// Per-branch cost breakdown; `label` fills the report's layer column.
pub fn cost_report(label: &str, desc: &ModuleDesc, input: Dims) -> CostReport {
    let mut report = cost_entries(label, desc, input);
    // nothing is evaluated over an empty spatial grid
    if input.h == 0 || input.w == 0 || input.b == 0 {
        for e in &mut report.entries {
            e.flops = 0;
        }
    }
    report
}

fn cost_entries(label: &str, desc: &ModuleDesc, input: Dims) -> CostReport {
    let b = input.b as u64;
    let (h, w) = (input.h as u64, input.w as u64);
    let entry = |name: &str, params: u64, flops: u64| CostEntry {
        layer: label.to_string(),
        name: name.to_string(),
        params,
        flops,
    };
    let mut report = CostReport::default();
    match desc {
        ModuleDesc::Conv {
            c_out,
            c_in,
            k_h,
            k_w,
            stride,
            padding,
            bias,
        } => {
            let (co, ci, kh, kw) = (*c_out as u64, *c_in as u64, *k_h as u64, *k_w as u64);
            let oh = out_len(input.h, *k_h, padding.0, *stride);
            let ow = out_len(input.w, *k_w, padding.1, *stride);
            let params = co * ci * kh * kw + if *bias { co } else { 0 };
            let mut flops = b * 2 * co * ci * kh * kw * oh * ow;
            if *bias {
                flops += b * co * oh * ow;
            }
            report.entries.push(entry("conv", params, flops));
        }
        ModuleDesc::DepthwiseStrip {
            channels,
            k_h,
            k_w,
            bias,
        } => {
            let c = *channels as u64;
            let taps = (*k_h as u64) * (*k_w as u64);
            let params = c * taps + if *bias { c } else { 0 };
            let mut flops = b * 2 * c * taps * h * w;
            if *bias {
                flops += b * c * h * w;
            }
            report.entries.push(entry("strip", params, flops));
        }
        ModuleDesc::Identity => {
            report.entries.push(entry("identity", 0, 0));
        }
        ModuleDesc::Rdconv { channels, cfg } => {
            report.extend(rdconv_report(label, "", *channels, cfg, input));
        }
        ModuleDesc::Sgdm { channels, cfg } => {
            let c1 = (cfg.r_split * *channels as f64).floor() as usize;
            let rd_in = Dims::new(input.b, c1, input.h, input.w);
            report.extend(rdconv_report(label, "rd.", c1, &cfg.rdconv, rd_in));

            // guidance: the n candidate kernels are modulated entrywise, and
            // the ψ fold itself is one add per guide cell
            let ci = intrinsic(c1, &cfg.rdconv) as u64;
            let (n, kd2) = (cfg.rdconv.n_kernels as u64, (cfg.k_d * cfg.k_d) as u64);
            report
                .entries
                .push(entry("guide", 0, b * (n * ci * ci * kd2 + ci * kd2)));

            for (name, kh, kw) in [("h_static", cfg.k_s, 1), ("w_static", 1, cfg.k_s)] {
                let sub = cost_report(
                    label,
                    &ModuleDesc::DepthwiseStrip {
                        channels: c1,
                        k_h: kh,
                        k_w: kw,
                        bias: true,
                    },
                    input,
                );
                report.entries.push(entry(
                    name,
                    sub.total_params(),
                    sub.total_flops(),
                ));
            }
            report.entries.push(entry("identity", 0, 0));
        }
    }
    report
}

fn intrinsic(channels: usize, cfg: &RdconvConfig) -> usize {
    ((cfg.r_razor * channels as f64).floor() as usize).min(channels)
}

fn rdconv_report(
    label: &str,
    prefix: &str,
    channels: usize,
    cfg: &RdconvConfig,
    input: Dims,
) -> CostReport {
    let b = input.b as u64;
    let (h, w) = (input.h as u64, input.w as u64);
    let ci = intrinsic(channels, cfg) as u64;
    let n = cfg.n_kernels as u64;
    let kd2 = (cfg.k_d * cfg.k_d) as u64;
    let sk = cfg.spatial_k as u64;
    let c_att = ci;
    let entry = |name: String, params: u64, flops: u64| CostEntry {
        layer: label.to_string(),
        name,
        params,
        flops,
    };
    let mut report = CostReport::default();

    // n candidate convolutions plus the α-weighted blend of their outputs
    report.entries.push(entry(
        format!("{prefix}dynamic_kernels"),
        n * ci * ci * kd2,
        b * (n * 2 * ci * ci * kd2 * h * w + 2 * n * ci * h * w),
    ));
    // razor projection (1×1 conv), GAP, linear map, sigmoid
    report.entries.push(entry(
        format!("{prefix}attention"),
        c_att * ci + n * c_att + n,
        b * (2 * c_att * ci * h * w + c_att + 2 * n * c_att + n),
    ));
    // directional pools, two dense strips with bias, add + sigmoid + gate
    report.entries.push(entry(
        format!("{prefix}spatial"),
        2 * (ci * ci * sk + ci),
        b * (2 * ci * h + 2 * ci * w + 2 * ci * ci * sk * (h + w) + 3 * ci * h * w),
    ));
    report
        .entries
        .push(entry(format!("{prefix}passthrough"), 0, 0));
    report
}
