//! Minibatch gradient-descent training of the classifier MLP with softmax
//! cross-entropy. Gradients come from the same reverse-mode machinery the
//! estimators use: the loss cotangent is pushed through `vjp`.

use ntk_core::rng::{derive_seed, SplitMix64};
use ntk_core::{
    init_params, JacobianContext, JacobianOps, MlpConfig, ModelConfig, ParamVector, StateTensor,
};

use crate::error::{HarnessError, Result};
use crate::mnist::MnistDataset;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            lr: 0.5,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Running-average loss after each minibatch of the first epoch.
    pub first_epoch_running_loss: Vec<f64>,
    pub final_loss: f64,
}

fn batch_inputs(data: &MnistDataset, idxs: &[usize]) -> StateTensor {
    let dim = data.input_dim();
    let mut flat = Vec::with_capacity(idxs.len() * dim);
    for &i in idxs {
        flat.extend_from_slice(data.images.row(i));
    }
    StateTensor::new(
        flat,
        vec![("batch".into(), idxs.len()), ("input".into(), dim)],
    )
    .expect("batch shape")
}

/// Softmax cross-entropy loss and its gradient in the logits, averaged over
/// the batch. Log-sum-exp stabilized.
fn softmax_ce(logits: &[f64], labels: &[u8], classes: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for b in 0..batch {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &z in row {
            denom += (z - max).exp();
        }
        let log_denom = denom.ln() + max;
        let target = labels[b] as usize;
        loss += log_denom - row[target];
        for c in 0..classes {
            let p = (row[c] - max).exp() / denom;
            grad[b * classes + c] = (p - if c == target { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, grad)
}

/// Fraction of examples whose argmax logit matches the label.
pub fn accuracy(config: &MlpConfig, params: &ParamVector, data: &MnistDataset) -> Result<f64> {
    let classes = config.output_dim.unwrap_or(config.hidden_dim);
    let mut correct = 0usize;
    let mut offset = 0usize;
    let chunk = 256usize;
    while offset < data.len() {
        let end = (offset + chunk).min(data.len());
        let idxs: Vec<usize> = (offset..end).collect();
        let mut cfg = config.clone();
        cfg.batch = idxs.len();
        let ctx = JacobianContext::new(
            ModelConfig::Mlp(cfg),
            params.clone(),
            batch_inputs(data, &idxs),
        )?;
        let logits = &ctx.output().data;
        for (k, &i) in idxs.iter().enumerate() {
            let row = &logits[k * classes..(k + 1) * classes];
            let mut best = 0usize;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            if best == data.labels[i] as usize {
                correct += 1;
            }
        }
        offset = end;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains the classifier and returns (initial, final) parameters with a
/// small report. Deterministic in (config, data, opts).
pub fn train_mnist_mlp(
    config: &MlpConfig,
    data: &MnistDataset,
    opts: &TrainConfig,
) -> Result<(ParamVector, ParamVector, TrainReport)> {
    if data.is_empty() {
        return Err(HarnessError::Empty("training set is empty".into()));
    }
    if data.input_dim() != config.input_dim {
        return Err(HarnessError::Config(format!(
            "model expects input dim {}, dataset provides {}",
            config.input_dim,
            data.input_dim()
        )));
    }
    let classes = config.output_dim.unwrap_or(config.hidden_dim);
    let initial = init_params(
        &ModelConfig::Mlp(config.clone()),
        derive_seed(opts.seed, 11),
    )?;
    let mut params = initial.clone();
    let mut shuffle_rng = SplitMix64::new(derive_seed(opts.seed, 12));

    let mut first_epoch_running_loss = Vec::new();
    let mut final_loss = f64::NAN;
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut running_sum = 0.0;
        let mut running_count = 0usize;
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let mut cfg = config.clone();
            cfg.batch = chunk.len();
            let ctx = JacobianContext::new(
                ModelConfig::Mlp(cfg),
                params.clone(),
                batch_inputs(data, chunk),
            )?;
            let labels: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, grad_logits) = softmax_ce(&ctx.output().data, &labels, classes);
            let grad = ctx.vjp(&grad_logits)?;
            for (p, g) in params.data.iter_mut().zip(&grad) {
                *p -= opts.lr * g;
            }
            running_sum += loss;
            running_count += 1;
            if epoch == 0 {
                first_epoch_running_loss.push(running_sum / running_count as f64);
            }
            final_loss = loss;
        }
    }
    Ok((
        initial,
        params,
        TrainReport {
            first_epoch_running_loss,
            final_loss,
        },
    ))
}
