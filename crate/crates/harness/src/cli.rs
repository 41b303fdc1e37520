//! Command-line surface. Global flags pick the seed, an optional
//! `key=value` config file and the output directory; each subcommand wires
//! the corresponding module and writes its CSVs under `--out`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dynconv::stats::{cost_report, ModuleDesc};
use dynconv::tensor::Dims;

use crate::config::{RunConfig, Variant};
use crate::gradcheck::{all_passed, render_report, run_gradcheck, DEFAULT_TOLERANCE};
use crate::noise::{
    aggregate_rows, noise_eval_checkpoint, noise_experiment, noise_table_csv, per_seed_csv,
};
use crate::sweep::{sweep, sweep_csv, sweep_table, SweepParam};
use crate::train::{metrics_csv, save_model, train, write_text};
use crate::{HarnessError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "dynconv-harness",
    about = "Training, gradient checks, noise robustness and cost sweeps \
             for razor dynamic convolution"
)]
pub struct Cli {
    /// Master seed: dataset, initialization and shuffles all derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Config file of key=value lines, applied before other flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for CSVs and checkpoints.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Verify every analytic gradient against central differences.
    Gradcheck {
        /// Max allowed relative error per entry.
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Train one variant; writes metrics.csv and a checkpoint directory.
    Train {
        /// baseline, sgdm or pure-dynamic.
        #[arg(long, default_value = "sgdm")]
        variant: String,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Noise-robustness table for a checkpoint, or a full multi-seed
    /// experiment over all variants.
    NoiseEval {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Train all variants across seeds instead of loading a checkpoint.
        #[arg(long)]
        experiment: bool,
        /// Seeds per variant in experiment mode.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Override the configured epoch count (experiment mode).
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated noise levels, overriding the config.
        #[arg(long)]
        sigmas: Option<String>,
    },
    /// Sweep one hyper-parameter; reports cost and, optionally, accuracy.
    Sweep {
        /// r_razor, spatial_k or r_split.
        #[arg(long)]
        parameter: String,
        /// Comma-separated values; defaults to the stock grid.
        #[arg(long)]
        values: Option<String>,
        /// Also train the guided variant at every setting.
        #[arg(long)]
        train: bool,
        /// Override the configured epoch count when training.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Parameter and FLOP accounting for the guided module.
    Stats {
        /// Channel count the module is built for.
        #[arg(long, default_value_t = 512)]
        channels: usize,
        /// Input dims as BxCxHxW.
        #[arg(long, default_value = "2x512x40x40")]
        input: String,
    },
}

fn parse_float_list(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::config(format!("cannot parse {key} entry {p:?}")))
        })
        .collect()
}

fn parse_input_dims(text: &str) -> Result<Dims> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 4 {
        return Err(HarnessError::config(format!(
            "input must be BxCxHxW, got {text:?}"
        )));
    }
    let mut nums = [0usize; 4];
    for (slot, part) in nums.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<usize>()
            .map_err(|_| HarnessError::config(format!("bad dimension {part:?} in {text:?}")))?;
    }
    Ok(Dims::new(nums[0], nums[1], nums[2], nums[3]))
}

/// Execute a parsed command line. Returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match cli.command {
        Command::Gradcheck { tolerance } => {
            let reports = run_gradcheck(cfg.seed, tolerance)?;
            print!("{}", render_report(&reports));
            if all_passed(&reports) {
                println!("gradcheck: {} groups within tolerance {tolerance:e}", reports.len());
                Ok(0)
            } else {
                println!("gradcheck: FAILED at tolerance {tolerance:e}");
                Ok(1)
            }
        }
        Command::Train { variant, epochs } => {
            let variant: Variant = variant.parse()?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let outcome = train(&cfg, variant)?;
            let run_dir = cli
                .out
                .join(format!("train-{}-seed{}", variant.label(), cfg.seed));
            write_text(&run_dir.join("metrics.csv"), &metrics_csv(&outcome.metrics))?;
            save_model(&run_dir.join("checkpoint"), &outcome.model, &cfg)?;
            for m in &outcome.metrics {
                println!(
                    "epoch {:>3}  loss {:.6}  train_acc {:.4}  eval_acc {:.4}",
                    m.epoch, m.loss, m.train_acc, m.eval_acc
                );
            }
            println!(
                "trained {} for {} epochs: final eval accuracy {:.4}",
                variant.label(),
                cfg.epochs,
                outcome.final_eval_acc
            );
            println!("metrics and checkpoint under {}", run_dir.display());
            Ok(0)
        }
        Command::NoiseEval {
            checkpoint,
            experiment,
            seeds,
            epochs,
            sigmas,
        } => {
            let sigma_override = match &sigmas {
                Some(text) => Some(parse_float_list("sigmas", text)?),
                None => None,
            };
            if experiment {
                if let Some(e) = epochs {
                    cfg.epochs = e;
                }
                if let Some(s) = &sigma_override {
                    cfg.sigmas = s.clone();
                }
                let rows = noise_experiment(&cfg, seeds)?;
                let agg = aggregate_rows(&rows);
                write_text(&cli.out.join("noise-experiment.csv"), &noise_table_csv(&agg))?;
                write_text(
                    &cli.out.join("noise-experiment-per-seed.csv"),
                    &per_seed_csv(&rows),
                )?;
                print!("{}", noise_table_csv(&agg));
                println!(
                    "noise experiment: {} variants x {seeds} seeds x {} sigmas -> {}",
                    Variant::ALL.len(),
                    cfg.sigmas.len(),
                    cli.out.join("noise-experiment.csv").display()
                );
            } else {
                let dir = checkpoint.ok_or_else(|| {
                    HarnessError::config("pass --checkpoint DIR or --experiment")
                })?;
                let rows = noise_eval_checkpoint(&dir, sigma_override.as_deref())?;
                let agg = aggregate_rows(&rows);
                write_text(&cli.out.join("noise-eval.csv"), &noise_table_csv(&agg))?;
                print!("{}", noise_table_csv(&agg));
            }
            Ok(0)
        }
        Command::Sweep {
            parameter,
            values,
            train: train_each,
            epochs,
        } => {
            let param: SweepParam = parameter.parse()?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let values = match &values {
                Some(text) => parse_float_list("values", text)?,
                None => param.default_values(),
            };
            let outcome = sweep(&cfg, param, &values, train_each)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", sweep_table(param, &outcome.rows));
            let path = cli.out.join(format!("sweep-{}.csv", param.label()));
            write_text(&path, &sweep_csv(param, &outcome.rows))?;
            println!("sweep written to {}", path.display());
            Ok(0)
        }
        Command::Stats { channels, input } => {
            cfg.validate()?;
            let dims = parse_input_dims(&input)?;
            let desc = ModuleDesc::Sgdm {
                channels,
                cfg: cfg.sgdm_config(),
            };
            let report = cost_report("sgdm", &desc, dims);
            print!("{}", report.render_table());
            write_text(&cli.out.join("stats.csv"), &report.to_csv())?;
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::error::ErrorKind;

    #[test]
    fn parses_every_subcommand() {
        let cli = Cli::try_parse_from(["h", "gradcheck", "--tolerance", "1e-3"]).unwrap();
        match cli.command {
            Command::Gradcheck { tolerance } => assert_eq!(tolerance, 1e-3),
            other => panic!("wrong command {other:?}"),
        }

        let cli = Cli::try_parse_from([
            "h", "--seed", "7", "--out", "tmp", "train", "--variant", "baseline", "--epochs", "2",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.out, PathBuf::from("tmp"));
        match cli.command {
            Command::Train { variant, epochs } => {
                assert_eq!(variant, "baseline");
                assert_eq!(epochs, Some(2));
            }
            other => panic!("wrong command {other:?}"),
        }

        let cli = Cli::try_parse_from([
            "h",
            "noise-eval",
            "--experiment",
            "--seeds",
            "3",
            "--sigmas",
            "0,0.1",
        ])
        .unwrap();
        match cli.command {
            Command::NoiseEval {
                experiment, seeds, sigmas, ..
            } => {
                assert!(experiment);
                assert_eq!(seeds, 3);
                assert_eq!(sigmas.as_deref(), Some("0,0.1"));
            }
            other => panic!("wrong command {other:?}"),
        }

        let cli =
            Cli::try_parse_from(["h", "sweep", "--parameter", "r_razor", "--values", "0.5,0.25"])
                .unwrap();
        match cli.command {
            Command::Sweep { parameter, values, train, .. } => {
                assert_eq!(parameter, "r_razor");
                assert_eq!(values.as_deref(), Some("0.5,0.25"));
                assert!(!train);
            }
            other => panic!("wrong command {other:?}"),
        }

        let cli = Cli::try_parse_from(["h", "stats", "--input", "1x64x8x8"]).unwrap();
        match cli.command {
            Command::Stats { channels, input } => {
                assert_eq!(channels, 512);
                assert_eq!(input, "1x64x8x8");
            }
            other => panic!("wrong command {other:?}"),
        }
    }

    #[test]
    fn missing_subcommand_is_a_usage_error() {
        let err = Cli::try_parse_from(["h"]).unwrap_err();
        assert!(
            matches!(
                err.kind(),
                ErrorKind::MissingSubcommand
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ),
            "expected a usage error, got {:?}",
            err.kind()
        );
    }

    #[test]
    fn helper_parsers_catch_garbage() {
        assert_eq!(
            parse_input_dims("2x512x40x40").unwrap(),
            Dims::new(2, 512, 40, 40)
        );
        assert!(parse_input_dims("2x512x40").is_err());
        assert!(parse_input_dims("2x512x40xbad").is_err());
        assert_eq!(parse_float_list("v", "0.5, 0.25").unwrap(), vec![0.5, 0.25]);
        assert!(parse_float_list("v", "0.5,huge").is_err());
    }
}
