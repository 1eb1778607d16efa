use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{backward, forward, objective, Mode, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::events::StepSeries;
use crate::rng::mix_seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub steps: StepSeries,
    pub outcome: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    /// Row 0 evaluates the initial parameters.
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Area under the ROC curve with mid-rank tie handling. Returns 0.5 when
/// one class is missing.
pub fn auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&k| labels[order[k]]).count() as f64 * mid_rank;
        i = j + 1;
    }
    (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Mean objective and final-step scores in eval mode.
fn evaluate(params: &ModelParams, data: &[TrainingExample], eta: f64) -> Result<(f64, f64)> {
    let results: Vec<Result<(f64, f64)>> = data
        .par_iter()
        .map(|ex| {
            let (risk, cache) = forward(params, &ex.steps, Mode::Eval)?;
            let score = risk.p.last().copied().unwrap_or(risk.p_base);
            Ok((objective(&risk, &cache, ex.outcome, eta), score))
        })
        .collect();
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(data.len());
    for r in results {
        let (l, s) = r?;
        total += l;
        scores.push(s);
    }
    let labels: Vec<bool> = data.iter().map(|e| e.outcome).collect();
    Ok((total / data.len().max(1) as f64, auroc(&scores, &labels)))
}

/// Adam with global-norm clipping over shuffled gradient-accumulation
/// batches, early stopping on validation loss. Returns the parameters of the
/// best validation epoch.
pub fn train(
    train_set: &[TrainingExample],
    validation: &[TrainingExample],
    config: &ModelConfig,
) -> Result<(ModelParams, TrainingReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    let input_dim = train_set[0].steps.dim();
    if let Some(ex) = train_set.iter().chain(validation).find(|e| e.steps.dim() != input_dim) {
        return Err(Error::Dimension(format!("mixed input dimensions {} and {}", input_dim, ex.steps.dim())));
    }

    let mut params = ModelParams::init(config, input_dim)?;
    let mut flat = params.flat();
    let mut adam = Adam::new(flat.len());

    let mut report = TrainingReport::default();
    let (train_loss0, _) = evaluate(&params, train_set, config.eta)?;
    let (val_loss0, val_auc0) = evaluate(&params, validation, config.eta)?;
    report.epochs.push(EpochReport { epoch: 0, train_loss: train_loss0, val_loss: val_loss0, val_auroc: val_auc0 });
    let mut best = (val_loss0, params.clone());
    let mut since_best = 0;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_seed = mix_seed(mix_seed(config.seed, epoch as u64), batch_index as u64);
            let per_example: Vec<Result<(f64, ModelParams)>> = batch
                .par_iter()
                .enumerate()
                .map(|(i, &idx)| {
                    let ex = &train_set[idx];
                    let spec = config.dropout(mix_seed(batch_seed, i as u64));
                    let (risk, cache) = forward(&params, &ex.steps, Mode::Train(spec))?;
                    let l = objective(&risk, &cache, ex.outcome, config.eta);
                    let (g, _) = backward(&params, &cache, &ex.steps, ex.outcome, config.eta)?;
                    Ok((l, g))
                })
                .collect();

            let mut sum = params.zeros_like();
            for r in per_example {
                let (l, g) = r?;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch, detail: format!("non-finite loss in batch {batch_index}") });
                }
                epoch_loss += l;
                sum.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            let mut grads = sum.flat();
            let norm = clip_global_norm(&mut grads, config.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("non-finite gradient norm in batch {batch_index}"),
                });
            }
            adam.update(&mut flat, &grads, config.learning_rate);
            params.set_flat(&flat);
        }
        if !params.is_finite() {
            return Err(Error::Diverged { epoch, detail: "non-finite parameters".into() });
        }

        let (val_loss, val_auroc) = evaluate(&params, validation, config.eta)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: "non-finite validation loss".into() });
        }
        report.epochs.push(EpochReport { epoch, train_loss: epoch_loss / train_set.len() as f64, val_loss, val_auroc });
        if val_loss < best.0 {
            best = (val_loss, params.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok((best.1, report))
}
