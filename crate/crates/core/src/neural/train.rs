use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{mse_grad, mse_loss, Network};
use super::optim::{lr_schedule, Adam};
use super::tensor::Tensor;
use super::NeuralError;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub l1: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 128,
            initial_lr: 0.01,
            l1: 0.0001,
            l2: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let positive = self.epochs > 0
            && self.batch_size > 0
            && self.initial_lr > 0.0
            && self.l1 >= 0.0
            && self.l2 >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !positive {
            return Err(NeuralError::InvalidConfig(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

/// Input/target pairs with flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    /// Per-sample input shape.
    pub input_shape: Vec<usize>,
    pub inputs: Vec<f64>,
    pub target_len: usize,
    pub targets: Vec<f64>,
}

impl Samples {
    pub fn new(
        input_shape: Vec<usize>,
        inputs: Vec<f64>,
        target_len: usize,
        targets: Vec<f64>,
    ) -> Result<Self, NeuralError> {
        let per: usize = input_shape.iter().product();
        if per == 0 || target_len == 0 || inputs.len() % per != 0 {
            return Err(NeuralError::Shape(format!(
                "{} input values do not split into samples of {per}",
                inputs.len()
            )));
        }
        if inputs.len() / per * target_len != targets.len() {
            return Err(NeuralError::Shape(format!(
                "{} samples but {} target values of width {target_len}",
                inputs.len() / per,
                targets.len()
            )));
        }
        Ok(Samples {
            input_shape,
            inputs,
            target_len,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.target_len
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Gathers the listed samples into an input and a target tensor.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let per = self.input_len();
        let mut x = Vec::with_capacity(idx.len() * per);
        let mut y = Vec::with_capacity(idx.len() * self.target_len);
        for &i in idx {
            x.extend_from_slice(&self.inputs[i * per..(i + 1) * per]);
            y.extend_from_slice(&self.targets[i * self.target_len..(i + 1) * self.target_len]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.input_shape);
        (
            Tensor { shape, data: x },
            Tensor {
                shape: vec![idx.len(), self.target_len],
                data: y,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean data loss (MSE, no penalty) over each epoch's batches.
    pub train_loss: Vec<f64>,
    /// Evaluation-mode MSE on the validation set after each epoch.
    pub val_loss: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub test_loss: Option<f64>,
}

/// Evaluation-mode MSE over a whole set, in chunks of `batch`.
pub fn evaluate(net: &Network, set: &Samples, batch: usize) -> Result<f64, NeuralError> {
    let n = set.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = set.gather(chunk);
        let p = net.predict(&x)?;
        total += mse_loss(&p, &y)? * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

/// Mean-predictor baseline: MSE of always predicting the target mean.
pub fn target_variance(set: &Samples) -> f64 {
    let n = set.len();
    let k = set.target_len;
    let mut mean = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            mean[j] += set.targets[i * k + j] / n as f64;
        }
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..k {
            let d = set.targets[i * k + j] - mean[j];
            s += d * d;
        }
    }
    s / (n * k) as f64
}

/// Mini-batch Adam with the per-epoch schedule from
/// [`lr_schedule`]. Shuffling and dropout masks derive from `cfg.seed`, so
/// equal inputs give bit-identical weights.
pub fn train(
    net: &mut Network,
    train_set: &Samples,
    val_set: Option<&Samples>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64, f64),
) -> Result<TrainReport, NeuralError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NeuralError::InvalidConfig("empty training set".into()));
    }
    if train_set.target_len != net.output_len() {
        return Err(NeuralError::Shape(format!(
            "targets have {} values, network outputs {}",
            train_set.target_len,
            net.output_len()
        )));
    }
    let schedule = lr_schedule(cfg.initial_lr, cfg.epochs);
    let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let shuffle_seed = seed::derive(cfg.seed, "shuffle");
    let dropout_seed = seed::derive(cfg.seed, "dropout");
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        learning_rates: schedule.clone(),
        test_loss: None,
    };
    for (epoch, lr) in schedule.iter().enumerate() {
        order.shuffle(&mut seed::rng(seed::derive_index(shuffle_seed, epoch as u64)));
        let mut rng = seed::rng(seed::derive_index(dropout_seed, epoch as u64));
        let mut sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // batch statistics are undefined for a single sample
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = train_set.gather(chunk);
            net.zero_grad();
            let pred = net.forward_train(&x, &mut rng)?;
            let loss = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(NeuralError::Diverged { epoch: epoch + 1, batch: b });
            }
            net.backward(&mse_grad(&pred, &y)?);
            net.add_penalty_grad(cfg.l1, cfg.l2);
            adam.step(&mut net.trainable_params_mut(), *lr);
            sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = if seen > 0 { sum / seen as f64 } else { f64::NAN };
        let val_loss = match val_set {
            Some(v) => evaluate(net, v, cfg.batch_size)?,
            None => f64::NAN,
        };
        if val_set.is_some() && !val_loss.is_finite() {
            return Err(NeuralError::Diverged {
                epoch: epoch + 1,
                batch: usize::MAX,
            });
        }
        progress(epoch + 1, train_loss, val_loss);
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
    }
    net.clear_cache();
    Ok(report)
}

/// Wall-clock helper for callers that log timing separately from
/// reproducible artifacts.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}
