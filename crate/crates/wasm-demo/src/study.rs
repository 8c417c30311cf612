//! A self-contained training study for the browser: a small classifier
//! learns Gaussian class blobs while the demo tracks how its kernel drifts
//! from initialization — alignment, effective rank and norm, each as an
//! exact n-pass value next to its sketched estimate.

use ntk_core::estimators::{
    alignment, effective_rank, frobenius_norm_sq, EstimatorConfig, MetricMethod,
};
use ntk_core::operator::{exact_alignment, exact_effective_rank, exact_frobenius_sq, NtkOperator};
use ntk_core::rng::{derive_seed, SplitMix64};
use ntk_core::{
    init_params, Activation, JacobianContext, JacobianOps, MlpConfig, ModelConfig, ParamVector,
    StateTensor,
};

pub struct Checkpoint {
    pub step: usize,
    pub loss: f64,
    pub align_exact: f64,
    pub align_est: f64,
    pub effrank_exact: f64,
    pub effrank_est: f64,
    pub norm_exact: f64,
    pub norm_est: f64,
}

const CLASSES: usize = 4;

fn classifier_config() -> MlpConfig {
    MlpConfig {
        input_dim: 16,
        hidden_dim: 16,
        num_layers: 2,
        output_dim: Some(CLASSES),
        activation: Activation::Tanh,
        batch: 24, // evaluation examples; n = 96
    }
}

struct Blobs {
    inputs: Vec<f64>, // count x dim
    labels: Vec<usize>,
}

fn blobs(count: usize, dim: usize, seed: u64) -> Blobs {
    let mut centers_rng = SplitMix64::new(derive_seed(seed, 0));
    let mut centers = vec![0.0; CLASSES * dim];
    for c in centers.iter_mut() {
        *c = 0.25 + 0.5 * centers_rng.next_f64();
    }
    let mut rng = SplitMix64::new(derive_seed(seed, 1));
    let mut inputs = vec![0.0; count * dim];
    let mut labels = vec![0usize; count];
    for i in 0..count {
        let class = i % CLASSES;
        labels[i] = class;
        for d in 0..dim {
            let x = centers[class * dim + d] + 0.08 * rng.next_standard_normal();
            inputs[i * dim + d] = x.clamp(0.0, 1.0);
        }
    }
    Blobs { inputs, labels }
}

fn softmax_ce_grad(logits: &[f64], labels: &[usize]) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for b in 0..batch {
        let row = &logits[b * CLASSES..(b + 1) * CLASSES];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|z| (z - max).exp()).sum();
        loss += denom.ln() + max - row[labels[b]];
        for c in 0..CLASSES {
            let p = (row[c] - max).exp() / denom;
            grad[b * CLASSES + c] = (p - if c == labels[b] { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, grad)
}

fn eval_context(config: &MlpConfig, params: &ParamVector, eval: &Blobs) -> JacobianContext {
    let inputs = StateTensor::new(
        eval.inputs.clone(),
        vec![
            ("batch".into(), config.batch),
            ("input".into(), config.input_dim),
        ],
    )
    .expect("eval shape");
    JacobianContext::new(ModelConfig::Mlp(config.clone()), params.clone(), inputs)
        .expect("context build")
}

/// Trains for `steps` gradient-descent steps, stopping `checkpoints` times
/// along the way to compare exact and estimated kernel statistics at sample
/// budget `m`.
pub fn kernel_drift(
    steps: usize,
    checkpoints: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<Checkpoint>, String> {
    let config = classifier_config();
    let train = blobs(160, config.input_dim, derive_seed(seed, 10));
    let eval = blobs(config.batch, config.input_dim, derive_seed(seed, 10));
    let lr = 0.5;
    let minibatch = 16;

    let initial = init_params(&ModelConfig::Mlp(config.clone()), derive_seed(seed, 11))
        .map_err(|e| e.to_string())?;
    let ctx0 = eval_context(&config, &initial, &eval);

    let checkpoints = checkpoints.clamp(2, steps.max(2));
    let mut marks: Vec<usize> = (0..checkpoints)
        .map(|k| k * steps / (checkpoints - 1))
        .collect();
    marks.dedup();

    let mut params = initial.clone();
    let mut shuffle_rng = SplitMix64::new(derive_seed(seed, 12));
    let mut order: Vec<usize> = (0..train.labels.len()).collect();
    let mut cursor = 0usize;
    let mut last_loss = f64::NAN;
    let mut out = Vec::new();

    let cfg = EstimatorConfig::new(m.max(3), derive_seed(seed, 13));
    for step in 0..=steps {
        if marks.contains(&step) {
            let ctx_t = eval_context(&config, &params, &eval);
            let op0 = NtkOperator::new(&ctx0);
            let opt = NtkOperator::new(&ctx_t);
            let align_exact = exact_alignment(&op0, &opt).map_err(|e| e.to_string())?;
            let effrank_exact = exact_effective_rank(&opt).map_err(|e| e.to_string())?;
            let norm_exact = exact_frobenius_sq(&opt).map_err(|e| e.to_string())?;
            let op0 = NtkOperator::new(&ctx0);
            let opt = NtkOperator::new(&ctx_t);
            let align_est = alignment(&op0, &opt, &cfg, MetricMethod::HutchPlusPlus)
                .map_err(|e| e.to_string())?
                .value;
            let opt = NtkOperator::new(&ctx_t);
            let effrank_est = effective_rank(&opt, &cfg, MetricMethod::HutchPlusPlus)
                .map_err(|e| e.to_string())?
                .value;
            let opt = NtkOperator::new(&ctx_t);
            let norm_est = frobenius_norm_sq(&opt, &cfg, MetricMethod::HutchPlusPlus)
                .map_err(|e| e.to_string())?
                .value;
            out.push(Checkpoint {
                step,
                loss: last_loss,
                align_exact,
                align_est,
                effrank_exact,
                effrank_est,
                norm_exact,
                norm_est,
            });
        }
        if step == steps {
            break;
        }

        // One minibatch step.
        if cursor + minibatch > order.len() {
            shuffle_rng.shuffle(&mut order);
            cursor = 0;
        }
        let chunk = &order[cursor..cursor + minibatch];
        cursor += minibatch;
        let mut mb_cfg = config.clone();
        mb_cfg.batch = minibatch;
        let flat: Vec<f64> = chunk
            .iter()
            .flat_map(|&i| {
                train.inputs[i * config.input_dim..(i + 1) * config.input_dim]
                    .iter()
                    .copied()
            })
            .collect();
        let inputs = StateTensor::new(
            flat,
            vec![
                ("batch".into(), minibatch),
                ("input".into(), config.input_dim),
            ],
        )
        .map_err(|e| e.to_string())?;
        let ctx = JacobianContext::new(ModelConfig::Mlp(mb_cfg), params.clone(), inputs)
            .map_err(|e| e.to_string())?;
        let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
        let (loss, grad_logits) = softmax_ce_grad(&ctx.output().data, &labels);
        let grad = ctx.vjp(&grad_logits).map_err(|e| e.to_string())?;
        for (p, g) in params.data.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        last_loss = loss;
    }
    Ok(out)
}
