//! Ablation sweeps: vary one block hyper-parameter, report parameter and
//! FLOP counts on the reference shape, and optionally train each setting.
//!
//! Costs are always quoted for the guided module on 512 channels with a
//! (2, 512, 40, 40) input so rows are comparable across sweeps.

use std::str::FromStr;

use dynconv::stats::{cost_report, ModuleDesc};
use dynconv::tensor::Dims;

use crate::config::{RunConfig, Variant};
use crate::train::train;
use crate::{HarnessError, Result};

pub const REFERENCE_CHANNELS: usize = 512;

pub fn reference_input() -> Dims {
    Dims::new(2, REFERENCE_CHANNELS, 40, 40)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    RRazor,
    SpatialK,
    RSplit,
}

impl SweepParam {
    pub fn label(self) -> &'static str {
        match self {
            SweepParam::RRazor => "r_razor",
            SweepParam::SpatialK => "spatial_k",
            SweepParam::RSplit => "r_split",
        }
    }

    /// The grids used by the stock ablations.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::RRazor => vec![0.75, 0.5, 0.25, 0.125, 0.0625],
            SweepParam::SpatialK => vec![7.0, 9.0, 11.0, 13.0, 15.0],
            SweepParam::RSplit => vec![0.15, 0.2, 0.25, 0.3],
        }
    }

    /// Write the value into a config, rejecting values the block cannot be
    /// built from.
    fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::RRazor => cfg.r_razor = value,
            SweepParam::RSplit => cfg.r_split = value,
            SweepParam::SpatialK => {
                if value <= 0.0 || value.fract() != 0.0 {
                    return Err(HarnessError::config(format!(
                        "spatial_k must be a positive integer, got {value}"
                    )));
                }
                cfg.spatial_k = value as usize;
            }
        }
        cfg.validate()
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<SweepParam> {
        match s {
            "r_razor" | "razor" => Ok(SweepParam::RRazor),
            "spatial_k" | "spatial-k" => Ok(SweepParam::SpatialK),
            "r_split" | "split" => Ok(SweepParam::RSplit),
            other => Err(HarnessError::config(format!(
                "unknown sweep parameter {other:?}; expected r_razor, spatial_k or r_split"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub params: u64,
    pub flops: u64,
    /// Final eval accuracy when the sweep also trains each setting.
    pub eval_acc: Option<f64>,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// One message per skipped (invalid) value.
    pub warnings: Vec<String>,
}

/// Sweep `param` over `values`. Invalid values are skipped with a warning
/// instead of aborting the run. With `train_each`, every surviving setting
/// is trained with the guided variant and its final eval accuracy recorded.
pub fn sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
    train_each: bool,
) -> Result<SweepOutcome> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &value in values {
        let mut c = cfg.clone();
        if let Err(e) = param.apply(&mut c, value) {
            warnings.push(format!("skipping {}={}: {}", param.label(), value, e));
            continue;
        }
        let desc = ModuleDesc::Sgdm {
            channels: REFERENCE_CHANNELS,
            cfg: c.sgdm_config(),
        };
        let report = cost_report("sgdm", &desc, reference_input());
        let eval_acc = if train_each {
            Some(train(&c, Variant::Sgdm)?.final_eval_acc)
        } else {
            None
        };
        rows.push(SweepRow {
            value,
            params: report.total_params(),
            flops: report.total_flops(),
            eval_acc,
        });
    }
    Ok(SweepOutcome { rows, warnings })
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = String::from("parameter,value,params,flops,eval_acc\n");
    for r in rows {
        let acc = match r.eval_acc {
            Some(a) => format!("{a:.4}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{acc}\n",
            param.label(),
            r.value,
            r.params,
            r.flops
        ));
    }
    out
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:<10} {:>12} {:>12} {:>9}\n",
        param.label(),
        "params (M)",
        "flops (G)",
        "eval_acc"
    );
    for r in rows {
        let acc = match r.eval_acc {
            Some(a) => format!("{a:.4}"),
            None => "-".into(),
        };
        out.push_str(&format!(
            "{:<10} {:>12.3} {:>12.3} {:>9}\n",
            r.value,
            r.params as f64 / 1e6,
            r.flops as f64 / 1e9,
            acc
        ));
    }
    out
}
