use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::task::Dataset;
use crate::attention::{backward_from, clip_spectral, forward, forward_cached, ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::par::pairwise_sum;
use crate::rng;

/// Losses are clipped into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `min(1, ‖ŷ − y‖² / 4k)`; targets live in `[-1, 1]^k`.
    #[default]
    BoundedSquared,
    /// `min(1, CE / (2 ln k))` against the class `argmax y`.
    BoundedCrossEntropy,
}

impl LossKind {
    /// Loss value and its gradient with respect to the model output. The
    /// gradient is zero wherever the clip is active.
    pub fn eval(self, output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        let k = output.len();
        if k != target.len() {
            return Err(Error::shape(format!("output has {k} entries, target {}", target.len())));
        }
        match self {
            LossKind::BoundedSquared => {
                let denom = 4.0 * k as f64;
                let raw: f64 = output.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / denom;
                if raw >= 1.0 {
                    return Ok((1.0, vec![0.0; k]));
                }
                let grad = output.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / denom).collect();
                Ok((raw, grad))
            }
            LossKind::BoundedCrossEntropy => {
                if k < 2 {
                    return Err(Error::domain("cross-entropy needs at least 2 outputs"));
                }
                let class = (0..k).fold(0, |b, j| if target[j] > target[b] { j } else { b });
                let max = output.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = output.iter().map(|o| (o - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let ce = z.ln() + max - output[class];
                let denom = 2.0 * (k as f64).ln();
                let raw = ce / denom;
                if raw >= 1.0 {
                    return Ok((1.0, vec![0.0; k]));
                }
                let grad = exps
                    .iter()
                    .enumerate()
                    .map(|(j, e)| (e / z - if j == class { 1.0 } else { 0.0 }) / denom)
                    .collect();
                Ok((raw.max(0.0), grad))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Passes over the training set; when set, replaces `steps` with
    /// `⌈epochs · m / batch⌉`.
    pub epochs: Option<usize>,
    /// Examples per step; 0 means full batch.
    pub batch_size: usize,
    /// Spectral-norm cap applied to every weight after each step.
    pub clip: Option<f64>,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            steps: 200,
            epochs: None,
            batch_size: 32,
            clip: None,
            loss: LossKind::BoundedSquared,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::domain(format!("lr = {} must be nonnegative", self.lr)));
        }
        if let Some(b) = self.clip {
            if !(b > 0.0) {
                return Err(Error::domain(format!("clip = {b} must be positive")));
            }
        }
        Ok(())
    }

    pub fn batch_len(&self, m: usize) -> usize {
        if self.batch_size == 0 {
            m
        } else {
            self.batch_size.min(m)
        }
    }

    /// Number of gradient steps for a training set of size `m`.
    pub fn steps_for(&self, m: usize) -> usize {
        match self.epochs {
            Some(e) => (e * m).div_ceil(self.batch_len(m).max(1)),
            None => self.steps,
        }
    }
}

/// A run diverges once the step loss stays above this multiple of the initial
/// loss for [`DIVERGENCE_PATIENCE`] consecutive steps.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Full-training-set loss before the first step.
    pub initial_loss: f64,
    /// Full-training-set loss after the last step.
    pub final_loss: f64,
    /// Mean loss of the batch used at each step, measured before the update.
    pub curve: Vec<f64>,
}

/// Mean loss over a dataset.
pub fn mean_loss(params: &ModelParams, spec: &ModelSpec, data: &Dataset, loss: LossKind) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let losses = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(x, y)| {
            let (out, _) = forward(params, spec, x)?;
            Ok(loss.eval(&out, y)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&losses) / losses.len() as f64)
}

fn batch_step(
    params: &ModelParams,
    spec: &ModelSpec,
    data: &Dataset,
    batch: &[usize],
    loss: LossKind,
) -> Result<(f64, ModelParams)> {
    let mut grad = ModelParams::zeros(spec);
    let mut losses = Vec::with_capacity(batch.len());
    let w = 1.0 / batch.len() as f64;
    for &i in batch {
        let cache = forward_cached(params, spec, &data.inputs[i])?;
        let (l, dl) = loss.eval(cache.output(), &data.targets[i])?;
        losses.push(l);
        if dl.iter().any(|&g| g != 0.0) {
            let g = backward_from(params, spec, &cache, &dl)?;
            grad.axpy(w, &g.params)?;
        }
    }
    Ok((pairwise_sum(&losses) / batch.len() as f64, grad))
}

/// Gradient descent from a seeded initialization. Mini-batches walk through
/// seeded shuffles of the training set, one epoch at a time.
pub fn train(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let mut params = ModelParams::init(spec, &mut rng::seeded(rng::split(cfg.seed, 0)));
    if let Some(b) = cfg.clip {
        params = clip_spectral(&params, b)?;
    }
    let initial_loss = mean_loss(&params, spec, data, cfg.loss)?;

    let m = data.len();
    let batch_size = cfg.batch_len(m);
    let steps = cfg.steps_for(m);
    let mut order: Vec<usize> = (0..m).collect();
    let mut shuffle_rng = rng::seeded(rng::split(cfg.seed, 1));
    let mut cursor = m;
    let mut batch = Vec::with_capacity(batch_size);
    let mut curve = Vec::with_capacity(steps);
    let mut over = 0usize;

    for step in 0..steps {
        batch.clear();
        if batch_size == m {
            batch.extend(0..m);
        } else {
            while batch.len() < batch_size {
                if cursor == m {
                    order.shuffle(&mut shuffle_rng);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }
        }
        let (loss, grad) = batch_step(&params, spec, data, &batch, cfg.loss)?;
        curve.push(loss);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if loss > DIVERGENCE_FACTOR * initial_loss {
            over += 1;
            if over >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence { step, loss });
            }
        } else {
            over = 0;
        }
        if cfg.lr > 0.0 {
            params.axpy(-cfg.lr, &grad)?;
            if let Some(b) = cfg.clip {
                params = clip_spectral(&params, b)?;
            }
            if !params.is_finite() {
                return Err(Error::Divergence { step, loss: f64::NAN });
            }
        }
    }
    let final_loss = mean_loss(&params, spec, data, cfg.loss)?;
    Ok(TrainOutcome {
        params,
        initial_loss,
        final_loss,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMeasurement {
    #[serde(rename = "L_S")]
    pub train_loss: f64,
    #[serde(rename = "L_D_hat")]
    pub test_loss: f64,
    pub gap: f64,
}

pub fn measure_gap(
    params: &ModelParams,
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    loss: LossKind,
) -> Result<GapMeasurement> {
    let train_loss = mean_loss(params, spec, train, loss)?;
    let test_loss = mean_loss(params, spec, test, loss)?;
    Ok(GapMeasurement {
        train_loss,
        test_loss,
        gap: test_loss - train_loss,
    })
}
