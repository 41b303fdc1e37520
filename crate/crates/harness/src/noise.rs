//! Gaussian-noise robustness: evaluate a trained model while adding
//! N(0, sigma^2) pixel noise to the eval split. Each sigma gets its own
//! ChaCha8 stream derived from the run seed, and the draws are consumed
//! even at sigma = 0, so the sigma = 0 row reproduces the clean accuracy
//! exactly while the per-sigma streams stay aligned across sigmas.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Variant};
use crate::dataset::{gaussian, generate_with, Sample};
use crate::model::ToyCnn;
use crate::train::{evaluate, load_model, train};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub variant: String,
    pub seed: u64,
    pub sigma: f64,
    pub accuracy: f64,
}

fn sigma_stream_seed(seed: u64, sigma_index: usize) -> u64 {
    seed ^ ((sigma_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Accuracy on copies of `samples` with per-pixel noise in row-major order.
pub fn noisy_accuracy<R: Rng>(
    model: &ToyCnn,
    samples: &[Sample],
    sigma: f64,
    rng: &mut R,
    batch_size: usize,
) -> Result<f64> {
    let mut noisy = Vec::with_capacity(samples.len());
    for s in samples {
        let mut image = s.image.clone();
        for v in image.data_mut() {
            *v += sigma * gaussian(rng);
        }
        noisy.push(Sample {
            image,
            label: s.label,
        });
    }
    evaluate(model, &noisy, batch_size)
}

/// One accuracy per sigma, each from its own stream.
pub fn noise_curve(
    model: &ToyCnn,
    samples: &[Sample],
    sigmas: &[f64],
    seed: u64,
    batch_size: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut curve = Vec::with_capacity(sigmas.len());
    for (si, &sigma) in sigmas.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sigma_stream_seed(seed, si));
        let acc = noisy_accuracy(model, samples, sigma, &mut rng, batch_size)?;
        curve.push((sigma, acc));
    }
    Ok(curve)
}

/// Evaluate a saved checkpoint. The dataset is regenerated from the stored
/// config, so the eval split is the one the model was trained against.
pub fn noise_eval_checkpoint(dir: &Path, sigmas: Option<&[f64]>) -> Result<Vec<NoiseRow>> {
    let (model, cfg, variant) = load_model(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dataset = generate_with(&mut rng, cfg.samples_per_class);
    let sigmas = sigmas.unwrap_or(&cfg.sigmas);
    let curve = noise_curve(&model, &dataset.eval, sigmas, cfg.seed, cfg.batch_size)?;
    Ok(curve
        .into_iter()
        .map(|(sigma, accuracy)| NoiseRow {
            variant: variant.label().into(),
            seed: cfg.seed,
            sigma,
            accuracy,
        })
        .collect())
}

/// Train every variant across `n_seeds` consecutive seeds and evaluate the
/// full noise curve for each run.
pub fn noise_experiment(cfg: &RunConfig, n_seeds: usize) -> Result<Vec<NoiseRow>> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        for s in 0..n_seeds {
            let mut sub = cfg.clone();
            sub.seed = cfg.seed + s as u64;
            let out = train(&sub, variant)?;
            let curve = noise_curve(
                &out.model,
                &out.dataset.eval,
                &sub.sigmas,
                sub.seed,
                sub.batch_size,
            )?;
            for (sigma, accuracy) in curve {
                rows.push(NoiseRow {
                    variant: variant.label().into(),
                    seed: sub.seed,
                    sigma,
                    accuracy,
                });
            }
        }
    }
    Ok(rows)
}

/// Collapse seeds: mean accuracy per (variant, sigma), in first-appearance
/// order.
pub fn aggregate_rows(rows: &[NoiseRow]) -> Vec<(String, f64, f64)> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for row in rows {
        let key = (row.variant.clone(), row.sigma);
        match keys.iter().position(|k| *k == key) {
            Some(i) => {
                sums[i].0 += row.accuracy;
                sums[i].1 += 1;
            }
            None => {
                keys.push(key);
                sums.push((row.accuracy, 1));
            }
        }
    }
    keys.into_iter()
        .zip(sums)
        .map(|((variant, sigma), (sum, n))| (variant, sigma, sum / n as f64))
        .collect()
}

/// The headline table: one row per (variant, sigma).
pub fn noise_table_csv(agg: &[(String, f64, f64)]) -> String {
    let mut out = String::from("variant,sigma,accuracy\n");
    for (variant, sigma, accuracy) in agg {
        out.push_str(&format!("{variant},{sigma},{accuracy:.4}\n"));
    }
    out
}

/// Raw per-run rows, one per (variant, seed, sigma).
pub fn per_seed_csv(rows: &[NoiseRow]) -> String {
    let mut out = String::from("variant,seed,sigma,accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.4}\n",
            r.variant, r.seed, r.sigma, r.accuracy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.epochs = 2;
        cfg.samples_per_class = 20;
        cfg.batch_size = 8;
        cfg
    }

    #[test]
    fn sigma_zero_reproduces_clean_accuracy_exactly() {
        let cfg = quick_cfg();
        let out = train(&cfg, Variant::Baseline).unwrap();
        let clean = evaluate(&out.model, &out.dataset.eval, cfg.batch_size).unwrap();
        let curve = noise_curve(&out.model, &out.dataset.eval, &[0.0, 0.1], cfg.seed, 8).unwrap();
        assert_eq!(curve[0].0, 0.0);
        assert_eq!(curve[0].1, clean, "sigma=0 must match clean bit for bit");
    }

    #[test]
    fn overwhelming_noise_destroys_the_signal() {
        let cfg = quick_cfg();
        let out = train(&cfg, Variant::Baseline).unwrap();
        let curve = noise_curve(&out.model, &out.dataset.eval, &[50.0], cfg.seed, 8).unwrap();
        // At sigma = 50 the shapes are invisible; accuracy collapses toward
        // chance on the 12-image eval split.
        assert!(curve[0].1 < 0.8, "accuracy {} at sigma=50", curve[0].1);
    }

    #[test]
    fn curves_are_deterministic() {
        let cfg = quick_cfg();
        let out = train(&cfg, Variant::Sgdm).unwrap();
        let a = noise_curve(&out.model, &out.dataset.eval, &cfg.sigmas, cfg.seed, 8).unwrap();
        let b = noise_curve(&out.model, &out.dataset.eval, &cfg.sigmas, cfg.seed, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregation_means_over_seeds_and_keeps_order() {
        let rows = vec![
            NoiseRow { variant: "baseline".into(), seed: 1, sigma: 0.0, accuracy: 0.9 },
            NoiseRow { variant: "baseline".into(), seed: 2, sigma: 0.0, accuracy: 0.7 },
            NoiseRow { variant: "sgdm".into(), seed: 1, sigma: 0.0, accuracy: 1.0 },
            NoiseRow { variant: "baseline".into(), seed: 1, sigma: 0.1, accuracy: 0.5 },
        ];
        let agg = aggregate_rows(&rows);
        assert_eq!(agg.len(), 3);
        assert_eq!(agg[0].0, "baseline");
        assert_eq!(agg[0].1, 0.0);
        assert!((agg[0].2 - 0.8).abs() < 1e-12);
        assert_eq!(agg[1].0, "sgdm");
        let csv = noise_table_csv(&agg);
        assert!(csv.starts_with("variant,sigma,accuracy\n"));
        assert!(csv.contains("baseline,0,0.8000"));
    }

    #[test]
    fn experiment_covers_every_variant_seed_and_sigma() {
        let mut cfg = quick_cfg();
        cfg.epochs = 1;
        cfg.samples_per_class = 5;
        cfg.sigmas = vec![0.0, 0.2];
        let rows = noise_experiment(&cfg, 2).unwrap();
        assert_eq!(rows.len(), 3 * 2 * 2);
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.accuracy));
        }
        // Per-seed CSV has one line per row plus the header.
        assert_eq!(per_seed_csv(&rows).lines().count(), rows.len() + 1);
        // Every variant appears with both seeds.
        for v in ["baseline", "sgdm", "pure-dynamic"] {
            for seed in [cfg.seed, cfg.seed + 1] {
                assert!(rows.iter().any(|r| r.variant == v && r.seed == seed));
            }
        }
    }
}
