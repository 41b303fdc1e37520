//! SGD training on the synthetic shapes, deterministic end to end: the
//! seed fixes the dataset, the initialization and every shuffle, so two
//! runs with the same config produce byte-identical metrics.

use std::fs;
use std::path::Path;

use dynconv::checkpoint::{load_checkpoint, save_checkpoint};
use dynconv::Tensor64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Variant};
use crate::dataset::{generate_with, stack_batch, Dataset, Sample};
use crate::model::{count_correct, softmax_cross_entropy, ToyCnn};
use crate::{HarnessError, Result};

/// Momentum SGD with decoupled-by-flag weight decay: biases decay nothing.
///
///   v <- momentum * v + grad + weight_decay * w
///   w <- w - lr * v
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Sgd {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor64, bool)],
        grads: &[(String, &Tensor64)],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(HarnessError::config(format!(
                "optimizer got {} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|(_, t, _)| Tensor64::zeros(t.dims()))
                .collect();
        }
        for (i, ((pname, w, is_bias), (gname, g))) in
            params.iter_mut().zip(grads.iter()).enumerate()
        {
            if pname != gname {
                return Err(HarnessError::config(format!(
                    "param/grad order mismatch: {pname} vs {gname}"
                )));
            }
            let wd = if *is_bias { 0.0 } else { self.weight_decay };
            let v = &mut self.velocity[i];
            for ((vv, &gv), wv) in v
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(w.data_mut().iter_mut())
            {
                *vv = self.momentum * *vv + gv + wd * *wv;
                *wv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
}

pub struct TrainOutcome {
    pub model: ToyCnn,
    pub dataset: Dataset,
    pub metrics: Vec<EpochMetrics>,
    pub final_eval_acc: f64,
}

pub fn evaluate(model: &ToyCnn, samples: &[Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(HarnessError::config("cannot evaluate on an empty split"));
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = stack_batch(samples, chunk);
        let logits = model.forward(&x)?;
        correct += count_correct(&logits, &labels);
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Run the full recipe: generate data, initialize the variant, train for
/// `cfg.epochs` epochs. Non-finite losses abort with `Diverged`.
pub fn train(cfg: &RunConfig, variant: Variant) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dataset = generate_with(&mut rng, cfg.samples_per_class);

    let mut model = {
        let mut uni = || rng.gen::<f64>();
        ToyCnn::init(variant, cfg, &mut uni)?
    };
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);

    let n = dataset.train.len();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Fisher-Yates on the index vector; one gen_range per swap.
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = stack_batch(&dataset.train, chunk);
            let (logits, cache) = model.forward_cached(&x)?;
            let (loss, d_logits) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(HarnessError::Diverged { epoch, loss });
            }
            loss_sum += loss * labels.len() as f64;
            correct += count_correct(&logits, &labels);
            let grads = model.backward(&cache, &d_logits)?;
            opt.step(&mut model.named_params_mut(), &grads.named())?;
        }

        let eval_acc = evaluate(&model, &dataset.eval, cfg.batch_size)?;
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            eval_acc,
        });
    }

    let final_eval_acc = match metrics.last() {
        Some(m) => m.eval_acc,
        None => evaluate(&model, &dataset.eval, cfg.batch_size)?,
    };
    Ok(TrainOutcome {
        model,
        dataset,
        metrics,
        final_eval_acc,
    })
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,train_acc,eval_acc\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{:.6},{:.4},{:.4}\n",
            m.epoch, m.loss, m.train_acc, m.eval_acc
        ));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Persist the model as a checkpoint directory: one .t4 per parameter plus
/// the variant and full config in the metadata file.
pub fn save_model(dir: &Path, model: &ToyCnn, cfg: &RunConfig) -> Result<()> {
    let tensors: Vec<(String, &Tensor64)> = model.named_params();
    let mut meta = vec![("variant".to_string(), model.variant.label().to_string())];
    meta.extend(cfg.meta_pairs());
    save_checkpoint(dir, &tensors, &meta)?;
    Ok(())
}

/// Rebuild a model from a checkpoint directory written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<(ToyCnn, RunConfig, Variant)> {
    let ck = load_checkpoint::<f64>(dir)?;
    let mut cfg = RunConfig::default();
    let mut variant = None;
    for (k, v) in &ck.meta {
        if k == "variant" {
            variant = Some(v.parse::<Variant>()?);
        } else {
            cfg.apply_kv(k, v)?;
        }
    }
    let variant = variant
        .ok_or_else(|| HarnessError::io(dir, "checkpoint metadata is missing the variant"))?;

    // Initialize with a throwaway source, then overwrite every tensor.
    let mut uni = || 0.5;
    let mut model = ToyCnn::init(variant, &cfg, &mut uni)?;
    let mut assigned = 0usize;
    for (name, tensor, _) in model.named_params_mut() {
        let stored = ck.get(&name).ok_or_else(|| {
            HarnessError::io(dir, format!("checkpoint is missing tensor {name:?}"))
        })?;
        if stored.dims() != tensor.dims() {
            return Err(HarnessError::io(
                dir,
                format!(
                    "tensor {name:?} dims {} do not match the model ({})",
                    stored.dims(),
                    tensor.dims()
                ),
            ));
        }
        tensor.data_mut().copy_from_slice(stored.data());
        assigned += 1;
    }
    if assigned != ck.tensors.len() {
        return Err(HarnessError::io(
            dir,
            format!(
                "checkpoint has {} tensors but the model uses {assigned}",
                ck.tensors.len()
            ),
        ));
    }
    Ok((model, cfg, variant))
}
