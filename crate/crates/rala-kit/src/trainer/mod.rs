//! Toy-scale supervised training: synthetic class-conditional data, Adam
//! with linear warm-up and cosine decay, and binary checkpoints. Training
//! math is f64; checkpoints store f32.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use serde::{Deserialize, Serialize};

use crate::attention::Variant;
use crate::autodiff::Tape;
use crate::backbone::{init_weights, model_forward_graph, ModelConfig, ModelWeights, WeightBinding};
use crate::error::{Error, Result};
use crate::linalg::rng::stream_rng;
use crate::linalg::{randn_matrix, Matrix};

fn default_preset() -> String {
    "toy".to_string()
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    10
}
fn default_lr() -> f64 {
    1e-3
}
fn default_wd() -> f64 {
    0.05
}
fn default_warmup() -> usize {
    5
}
fn default_samples() -> usize {
    100
}
fn default_sigma() -> f64 {
    0.3
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_true")]
    pub kv_augment: bool,
    #[serde(default = "default_true")]
    pub out_augment: bool,
    /// Stop once train accuracy reaches this fraction.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(&self.preset)?;
        cfg.kv_augment = self.kv_augment;
        cfg.out_augment = self.out_augment;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.n_samples == 0 {
            return Err(Error::invalid(
                "train_config",
                "epochs, batch_size, and n_samples must be positive",
            ));
        }
        if self.base_lr < 0.0 || self.weight_decay < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::invalid(
                "train_config",
                "base_lr, weight_decay, and noise_sigma must be nonnegative",
            ));
        }
        self.model_config()?.validate()
    }
}

/// Class-conditional images: a fixed random frequency pattern per class plus
/// per-sample Gaussian noise. Labels cycle 0..n_classes, so classes are
/// balanced whenever n_classes divides n_samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Matrix<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub resolution: usize,
}

pub fn synth_dataset(
    seed: u64,
    n_samples: usize,
    n_classes: usize,
    resolution: usize,
    sigma: f64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::invalid("synth_dataset", "need at least 2 classes"));
    }
    if resolution % 32 != 0 || resolution == 0 {
        return Err(Error::invalid(
            "synth_dataset",
            format!("resolution {resolution} not divisible by 32"),
        ));
    }
    if n_samples == 0 {
        return Err(Error::invalid("synth_dataset", "need at least 1 sample"));
    }
    use rand::Rng as _;
    let mut rng = stream_rng(seed, 3);
    let tau = std::f64::consts::TAU;
    // Per class, per channel: (fx, fy, phase).
    let patterns: Vec<Matrix<f64>> = (0..n_classes)
        .map(|_| {
            let params: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(1.0..8.0),
                        rng.gen_range(1.0..8.0),
                        rng.gen_range(0.0..tau),
                    )
                })
                .collect();
            let mut data = Vec::with_capacity(resolution * resolution * 3);
            for y in 0..resolution {
                for x in 0..resolution {
                    for &(fx, fy, phase) in &params {
                        let arg = tau * (fx * x as f64 + fy * y as f64) / resolution as f64;
                        data.push((arg + phase).sin());
                    }
                }
            }
            Matrix::from_vec(resolution * resolution, 3, data).expect("sized by construction")
        })
        .collect();

    let mut images = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let label = i % n_classes;
        let img = if sigma == 0.0 {
            patterns[label].clone()
        } else {
            let noise: Matrix<f64> = randn_matrix(resolution * resolution, 3, &mut rng);
            patterns[label].add(&noise.scale(sigma))?
        };
        images.push(img);
        labels.push(label);
    }
    Ok(Dataset {
        images,
        labels,
        n_classes,
        resolution,
    })
}

/// Linear warm-up over `warmup` epochs, then cosine decay to 0 across the
/// remaining epochs.
pub fn lr_at(base_lr: f64, warmup: usize, epochs: usize, epoch: usize) -> f64 {
    if epoch < warmup {
        return base_lr * (epoch + 1) as f64 / warmup as f64;
    }
    if epochs <= warmup + 1 {
        return base_lr;
    }
    let progress = (epoch - warmup) as f64 / (epochs - warmup) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Debug)]
pub struct AdamState {
    m: Vec<Matrix<f64>>,
    v: Vec<Matrix<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        let zeros: Vec<Matrix<f64>> = weights
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Decoupled weight decay applies to projection/conv weights only, never to
/// biases or norm scales.
fn decays(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    matches!(
        last,
        "weight" | "w_q" | "w_k" | "w_v" | "w_phi" | "w_out" | "w1" | "w2"
    )
}

pub fn adam_step(
    weights: &mut ModelWeights,
    grads: &[Matrix<f64>],
    state: &mut AdamState,
    hp: &AdamHyper,
) -> Result<()> {
    if grads.len() != weights.len() || state.m.len() != weights.len() {
        return Err(Error::invalid(
            "adam_step",
            format!(
                "{} weights, {} grads, {} states",
                weights.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    let decay_flags: Vec<bool> = weights.iter().map(|(n, _)| decays(n)).collect();
    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for (i, w) in weights.mats_mut().iter_mut().enumerate() {
        let g = &grads[i];
        if g.shape() != w.shape() {
            return Err(Error::shape("adam_step", w.shape(), g.shape()));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let wd = &w.data().to_vec();
        let w_data = w.data_mut();
        for (j, &gj) in g.data().iter().enumerate() {
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * gj;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            w_data[j] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            if decay_flags[i] {
                w_data[j] -= hp.lr * hp.weight_decay * wd[j];
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,accuracy,lr\n");
    for m in metrics {
        out.push_str(&format!("{},{},{},{}\n", m.epoch, m.loss, m.accuracy, m.lr));
    }
    out
}

pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub weights: ModelWeights,
    pub model_config: ModelConfig,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// One forward/backward pass for a single sample. Returns (loss, correct,
/// per-weight gradients in binding order; missing gradients are zeros).
fn sample_grads(
    config: &ModelConfig,
    weights: &ModelWeights,
    image: &Matrix<f64>,
    label: usize,
) -> Result<(f64, bool, Vec<Matrix<f64>>)> {
    let mut tape = Tape::new();
    let binding = WeightBinding::bind(&mut tape, weights);
    let img = tape.leaf(image.clone());
    let logits = model_forward_graph(&mut tape, config, &binding, img, Variant::Rala, None)?;
    let loss_node = tape.cross_entropy_mean(logits, &[label])?;
    let loss = tape.value(loss_node).get(0, 0);
    let correct = argmax(tape.value(logits).row(0)) == label;
    let grads = tape.backward(loss_node, &Matrix::ones(1, 1))?;
    let out = binding
        .ids()
        .iter()
        .zip(weights.iter())
        .map(|(&id, (_, w))| match grads.wrt(id) {
            Some(g) => g.clone(),
            None => Matrix::zeros(w.rows(), w.cols()),
        })
        .collect();
    Ok((loss, correct, out))
}

/// Full-batch gradient descent over the synthetic task. Deterministic for a
/// given config: fixed data order, batch-index-order gradient accumulation.
pub fn train_loop(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let model_config = config.model_config()?;
    let data = synth_dataset(
        config.seed,
        config.n_samples,
        model_config.num_classes,
        model_config.input_resolution,
        config.noise_sigma,
    )?;
    let mut rng = stream_rng(config.seed, 0);
    let mut weights = init_weights(&model_config, &mut rng)?;
    let mut state = AdamState::new(&weights);
    let mut metrics = Vec::new();

    for epoch in 0..config.epochs {
        let lr = lr_at(config.base_lr, config.warmup_epochs, config.epochs, epoch);
        let hp = AdamHyper::new(lr, config.weight_decay);
        let mut loss_sum = 0.0;
        let mut n_correct = 0usize;
        for batch_start in (0..data.images.len()).step_by(config.batch_size) {
            let batch_end = (batch_start + config.batch_size).min(data.images.len());
            let mut acc: Option<Vec<Matrix<f64>>> = None;
            for i in batch_start..batch_end {
                let (loss, correct, grads) =
                    sample_grads(&model_config, &weights, &data.images[i], data.labels[i])?;
                if !loss.is_finite() {
                    return Err(Error::numerical(
                        "train_loop",
                        format!("loss diverged to {loss} at epoch {epoch}"),
                    ));
                }
                loss_sum += loss;
                n_correct += correct as usize;
                acc = Some(match acc {
                    None => grads,
                    Some(prev) => prev
                        .iter()
                        .zip(&grads)
                        .map(|(a, g)| a.add(g))
                        .collect::<Result<_>>()?,
                });
            }
            let scale = 1.0 / (batch_end - batch_start) as f64;
            let grads: Vec<Matrix<f64>> =
                acc.expect("nonempty batch").iter().map(|g| g.scale(scale)).collect();
            adam_step(&mut weights, &grads, &mut state, &hp)?;
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / data.images.len() as f64,
            accuracy: n_correct as f64 / data.images.len() as f64,
            lr,
        };
        let acc = m.accuracy;
        metrics.push(m);
        if config.target_accuracy.is_some_and(|t| acc >= t) {
            break;
        }
    }
    Ok(TrainOutcome {
        metrics,
        weights,
        model_config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays_to_near_zero() {
        let base = 1e-3;
        assert_eq!(lr_at(base, 5, 200, 0), base / 5.0);
        assert_eq!(lr_at(base, 5, 200, 4), base);
        assert!(lr_at(base, 5, 200, 100) < base);
        assert!(lr_at(base, 5, 200, 199) <= 1e-3 * base, "cosine tail");
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_weights_unchanged() {
        let mut w = ModelWeights::new();
        w.push("block.w1", Matrix::ones(2, 3));
        let grads = vec![Matrix::zeros(2, 3)];
        let mut state = AdamState::new(&w);
        adam_step(&mut w, &grads, &mut state, &AdamHyper::new(0.1, 0.0)).unwrap();
        assert_eq!(w.get("block.w1").unwrap(), &Matrix::ones(2, 3));
    }

    #[test]
    fn first_step_is_signed_lr_for_large_gradients() {
        let mut w = ModelWeights::new();
        w.push("block.b1", Matrix::zeros(1, 2));
        let grads = vec![Matrix::from_rows(&[vec![1e9, -1e9]]).unwrap()];
        let mut state = AdamState::new(&w);
        adam_step(&mut w, &grads, &mut state, &AdamHyper::new(0.1, 0.0)).unwrap();
        let got = w.get("block.b1").unwrap();
        assert!((got.get(0, 0) + 0.1).abs() < 1e-6);
        assert!((got.get(0, 1) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        // f(w) = w^2, grad 2w, from w = 1 at lr 0.1.
        let mut w = ModelWeights::new();
        w.push("q.w1", Matrix::ones(1, 1));
        let mut state = AdamState::new(&w);
        let hp = AdamHyper::new(0.1, 0.0);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let cur = w.get("q.w1").unwrap().get(0, 0);
            let grads = vec![Matrix::from_rows(&[vec![2.0 * cur]]).unwrap()];
            adam_step(&mut w, &grads, &mut state, &hp).unwrap();
            let next = w.get("q.w1").unwrap().get(0, 0).abs();
            assert!(next < prev, "step did not shrink |w|: {next} vs {prev}");
            prev = next;
        }
    }

    #[test]
    fn decay_skips_biases_and_norms() {
        assert!(decays("stages.0.blocks.0.attn.w_q"));
        assert!(decays("stem.conv1.weight"));
        assert!(decays("stages.1.blocks.0.ffn.w2"));
        assert!(!decays("stages.0.blocks.0.attn.b_q"));
        assert!(!decays("stages.0.blocks.0.norm1.gamma"));
        assert!(!decays("head.bias"));
    }

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let a = synth_dataset(9, 20, 10, 64, 0.3).unwrap();
        let b = synth_dataset(9, 20, 10, 64, 0.3).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x, y);
        }
        assert_eq!(a.labels, b.labels);
        for c in 0..10 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 2);
        }
    }

    #[test]
    fn zero_noise_collapses_within_class() {
        let d = synth_dataset(4, 20, 10, 64, 0.0).unwrap();
        assert_eq!(d.images[0], d.images[10]);
        assert_ne!(d.images[0], d.images[1]);
    }

    #[test]
    fn dataset_rejects_bad_sizes() {
        assert!(synth_dataset(0, 10, 1, 64, 0.3).is_err());
        assert!(synth_dataset(0, 10, 10, 60, 0.3).is_err());
        assert!(synth_dataset(0, 0, 10, 64, 0.3).is_err());
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            base_lr: 0.0,
            warmup_epochs: 1,
            n_samples: 4,
            noise_sigma: 0.0,
            ..TrainConfig::default()
        };
        let out = train_loop(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 2);
        let d = (out.metrics[0].loss - out.metrics[1].loss).abs();
        assert!(d < 1e-12, "loss drifted {d} with lr 0");
    }

    #[test]
    fn ablated_variant_trains_without_error() {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            n_samples: 4,
            kv_augment: false,
            out_augment: false,
            ..TrainConfig::default()
        };
        let out = train_loop(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert!(out.metrics[0].loss.is_finite());
    }

    #[test]
    fn same_config_same_metrics() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            n_samples: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_loop(&cfg).unwrap();
        let b = train_loop(&cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    }
}
