//! Run configuration: every knob for training, noise evaluation and the
//! sweeps, settable from `key=value` config files or CLI flags.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use dynconv::rdconv::RdconvConfig;
use dynconv::sgdm::SgdmConfig;

use crate::{HarnessError, Result};

/// Which block sits in the third stage of the toy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// No extra block; the stage is a plain identity.
    Baseline,
    /// Static-guided dynamic module over a four-way channel split.
    Sgdm,
    /// A razor dynamic layer over the full width, no static guidance.
    PureDynamic,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Sgdm, Variant::PureDynamic];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Sgdm => "sgdm",
            Variant::PureDynamic => "pure-dynamic",
        }
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "sgdm" => Ok(Variant::Sgdm),
            "pure-dynamic" | "pure_dynamic" | "dynamic" => Ok(Variant::PureDynamic),
            other => Err(HarnessError::config(format!(
                "unknown variant {other:?}; expected baseline, sgdm or pure-dynamic"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Images generated per class; split 80/20 into train/eval.
    pub samples_per_class: usize,
    /// Noise levels for `noise-eval`.
    pub sigmas: Vec<f64>,
    // Block hyper-parameters.
    pub r_split: f64,
    pub r_razor: f64,
    pub n_kernels: usize,
    pub k_d: usize,
    pub k_s: usize,
    pub spatial_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            epochs: 20,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.937,
            weight_decay: 5e-4,
            samples_per_class: 50,
            sigmas: vec![0.0, 0.05, 0.1, 0.2],
            r_split: 0.25,
            r_razor: 0.5,
            n_kernels: 4,
            k_d: 3,
            k_s: 9,
            spatial_k: 15,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| HarnessError::config(format!("cannot parse {key}={value:?}")))
}

impl RunConfig {
    /// Apply one `key=value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "samples_per_class" => self.samples_per_class = parse_num(key, value)?,
            "sigmas" => {
                let mut parsed = Vec::new();
                for part in value.split(',') {
                    parsed.push(parse_num::<f64>(key, part)?);
                }
                self.sigmas = parsed;
            }
            "r_split" => self.r_split = parse_num(key, value)?,
            "r_razor" => self.r_razor = parse_num(key, value)?,
            "n_kernels" => self.n_kernels = parse_num(key, value)?,
            "k_d" => self.k_d = parse_num(key, value)?,
            "k_s" => self.k_s = parse_num(key, value)?,
            "spatial_k" => self.spatial_k = parse_num(key, value)?,
            other => {
                return Err(HarnessError::config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parse a config file of `key=value` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            self.apply_kv(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HarnessError::config("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(HarnessError::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HarnessError::config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(HarnessError::config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.samples_per_class < 2 {
            return Err(HarnessError::config(
                "samples_per_class must be at least 2 so the eval split is non-empty",
            ));
        }
        for &s in &self.sigmas {
            if !(s.is_finite() && s >= 0.0) {
                return Err(HarnessError::config(format!("sigma must be non-negative, got {s}")));
            }
        }
        self.sgdm_config().validate().map_err(HarnessError::Lib)
    }

    pub fn rdconv_config(&self) -> RdconvConfig {
        RdconvConfig {
            r_razor: self.r_razor,
            n_kernels: self.n_kernels,
            k_d: self.k_d,
            spatial_k: self.spatial_k,
        }
    }

    pub fn sgdm_config(&self) -> SgdmConfig {
        SgdmConfig {
            r_split: self.r_split,
            k_d: self.k_d,
            k_s: self.k_s,
            rdconv: self.rdconv_config(),
        }
    }

    /// The fields a checkpoint needs to rebuild the exact model and dataset,
    /// as metadata pairs.
    pub fn meta_pairs(&self) -> Vec<(String, String)> {
        let sigmas = self
            .sigmas
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("seed".into(), self.seed.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("momentum".into(), self.momentum.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("samples_per_class".into(), self.samples_per_class.to_string()),
            ("sigmas".into(), sigmas),
            ("r_split".into(), self.r_split.to_string()),
            ("r_razor".into(), self.r_razor.to_string()),
            ("n_kernels".into(), self.n_kernels.to_string()),
            ("k_d".into(), self.k_d.to_string()),
            ("k_s".into(), self.k_s.to_string()),
            ("spatial_k".into(), self.spatial_k.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_recipe() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.lr, 1e-2);
        assert_eq!(cfg.momentum, 0.937);
        assert_eq!(cfg.weight_decay, 5e-4);
        assert_eq!(cfg.sigmas, vec![0.0, 0.05, 0.1, 0.2]);
        assert_eq!(cfg.r_split, 0.25);
        assert_eq!(cfg.r_razor, 0.5);
        assert_eq!(cfg.n_kernels, 4);
        assert_eq!(cfg.k_d, 3);
        assert_eq!(cfg.k_s, 9);
        assert_eq!(cfg.spatial_k, 15);
        cfg.validate().unwrap();
    }

    #[test]
    fn text_overrides_comments_and_blanks() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# a comment\n\nseed = 7\nlr=0.05\nsigmas=0,0.3\n  epochs=3  \n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lr, 0.05);
        assert_eq!(cfg.sigmas, vec![0.0, 0.3]);
        assert_eq!(cfg.epochs, 3);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.batch_size, 16);
    }

    #[test]
    fn unknown_keys_and_malformed_lines_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_kv("learning_rate", "0.1").is_err());
        assert!(cfg.apply_kv("lr", "fast").is_err());
        assert!(cfg.apply_text("just a line without equals").is_err());
    }

    #[test]
    fn validation_rejects_bad_numbers() {
        let mut cfg = RunConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.lr = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.sigmas = vec![0.1, -0.2];
        assert!(cfg.validate().is_err());

        // Block hyper-parameters are validated through the library.
        let mut cfg = RunConfig::default();
        cfg.r_split = 0.4; // 3 * 0.4 > 1
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.k_s = 8; // must equal k_d^2
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert!("resnet".parse::<Variant>().is_err());
    }

    #[test]
    fn meta_pairs_round_trip_through_apply_kv() {
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        cfg.lr = 0.025;
        cfg.sigmas = vec![0.0, 0.15];
        let mut rebuilt = RunConfig::default();
        for (k, v) in cfg.meta_pairs() {
            rebuilt.apply_kv(&k, &v).unwrap();
        }
        assert_eq!(rebuilt, cfg);
    }
}
