use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::policy::{mix_seed, rng_from_seed, TabularLM};
use crate::types::PreferencePair;

use super::gradient::{accumulate_gradient, PairTokens};
use super::{learning_rate, ObjectiveConfig, ObjectiveKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub per_pair: Vec<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_margin: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TabularLM,
    pub log: Vec<TrainLogEntry>,
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Mean loss and mean gradient over a batch, accumulated in index order.
pub fn batch_loss(model: &TabularLM, batch: &[&PairTokens], cfg: &ObjectiveConfig) -> Result<(LossReport, Vec<f64>, f64)> {
    let mut grad = vec![0.0; model.logits().len()];
    let scale = 1.0 / batch.len() as f64;
    let mut per_pair = Vec::with_capacity(batch.len());
    let mut margin = 0.0;
    for (i, pair) in batch.iter().enumerate() {
        let eval = accumulate_gradient(model, pair, cfg, scale, &mut grad).map_err(Error::at(i))?;
        per_pair.push(eval.loss);
        margin += eval.margin;
    }
    let loss = per_pair.iter().sum::<f64>() * scale;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok((
        LossReport {
            loss,
            per_pair,
            grad_norm,
        },
        grad,
        margin * scale,
    ))
}

/// Mini-batch AdamW on the logit table against a frozen reference.
///
/// Each epoch visits the dataset once in an order shuffled from
/// `cfg.seed` and the epoch index. The log holds one entry per step with
/// the loss and margin measured before that step's update.
pub fn train(model: &TabularLM, reference: &TabularLM, dataset: &[PreferencePair], cfg: &ObjectiveConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return invalid("training needs at least one pair");
    }
    if model.vocab() != reference.vocab() || model.order() != reference.order() {
        return invalid("policy and reference shapes differ");
    }
    if cfg.kind == ObjectiveKind::Wpo {
        if let Some(i) = dataset.iter().position(|p| !p.is_weighted()) {
            return Err(Error::WeightUnavailable(format!("pair {i} has no consistency weights")));
        }
    }
    let pairs = dataset
        .iter()
        .enumerate()
        .map(|(i, p)| PairTokens::new(p, reference).map_err(Error::at(i)))
        .collect::<Result<Vec<_>>>()?;

    let steps_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut params = model.logits().to_vec();
    let mut current = model.clone();
    let mut opt = AdamW::new(params.len(), cfg.weight_decay);
    let mut log = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let step = log.len();
            let batch: Vec<&PairTokens> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (report, grad, margin) = batch_loss(&current, &batch, cfg)?;
            if !report.loss.is_finite() || !report.grad_norm.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let lr = learning_rate(step, total, cfg.learning_rate, cfg.warmup_ratio, cfg.schedule);
            opt.step(&mut params, &grad, lr);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss { step });
            }
            current = current.with_logits(params.clone())?;
            log.push(TrainLogEntry {
                step,
                lr,
                loss: report.loss,
                grad_norm: report.grad_norm,
                mean_margin: margin,
            });
        }
    }
    Ok(TrainOutcome { model: current, log })
}
