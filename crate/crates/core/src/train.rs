//! Mini-batch training with AdamW and parallel evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ArcMode, ModelConfig};
use crate::data::DialogueExample;
use crate::error::{Error, Result};
use crate::head::{rank_metrics, LossReduction, RankMetrics, ScoredExample};
use crate::model::{Irrgn, Prediction};
use crate::scalar::Scalar;
use crate::tensor::{AdamW, AdamWConfig, CosineSchedule, Graph, ParameterStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub reduction: LossReduction,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_every: usize,
    pub eval_workers: usize,
    /// Rescale each batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.01,
            reduction: LossReduction::Mean,
            eval_every: 1,
            eval_workers: 1,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 || self.eval_workers == 0 {
            return Err(Error::config("epochs, batch_size, eval_every and eval_workers must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("bad lr {} or weight decay {}", self.lr, self.weight_decay)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub r4_at_1: Option<f64>,
    pub r4_at_2: Option<f64>,
    pub mrr: Option<f64>,
    /// Learning rate of the last update in the epoch.
    pub lr: f64,
}

pub struct EpochEvent<'a, S> {
    pub log: &'a EpochLog,
    /// The validation R@1 beat every earlier epoch.
    pub improved: bool,
    pub params: &'a ParameterStore<S>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub best: ParameterStore<S>,
    pub best_epoch: usize,
    pub best_metrics: RankMetrics,
    pub logs: Vec<EpochLog>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: RankMetrics,
    pub mean_loss: f64,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    pub fn scored(&self) -> Vec<ScoredExample> {
        self.predictions.iter().map(|p| p.scored.clone()).collect()
    }
}

/// Cut examples down to the configured turn and sentence limits.
pub fn prepare(examples: &[DialogueExample], cfg: &ModelConfig) -> Vec<DialogueExample> {
    examples.iter().map(|e| e.truncated(cfg.max_turns, cfg.max_sentence_tokens)).collect()
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Predict every example, spreading the work over `workers` threads. The
/// result does not depend on the worker count.
pub fn evaluate<S: Scalar>(
    model: &Irrgn,
    params: &ParameterStore<S>,
    data: &[DialogueExample],
    mode: ArcMode,
    workers: usize,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let workers = workers.clamp(1, data.len());
    let chunk = data.len().div_ceil(workers);
    let parts: Vec<Result<Vec<Prediction>>> = if workers == 1 {
        vec![data.iter().map(|ex| model.predict(params, ex, mode)).collect()]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = data
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|ex| model.predict(params, ex, mode)).collect()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let mut predictions = Vec::with_capacity(data.len());
    for part in parts {
        predictions.extend(part?);
    }
    let scored: Vec<ScoredExample> = predictions.iter().map(|p| p.scored.clone()).collect();
    let mean_loss = predictions.iter().map(|p| p.loss).sum::<f64>() / predictions.len() as f64;
    Ok(Evaluation { metrics: rank_metrics(&scored)?, mean_loss, predictions })
}

/// Accumulate the gradient of one batch into `params` and return the summed
/// loss.
fn batch_gradient<S: Scalar>(
    model: &Irrgn,
    params: &mut ParameterStore<S>,
    batch: &[&DialogueExample],
    reduction: LossReduction,
) -> Result<f64> {
    let seed = match reduction {
        LossReduction::Mean => S::one() / S::of_usize(batch.len()),
        LossReduction::Sum => S::one(),
    };
    let mode = model.config().mode;
    let mut total = 0.0;
    for ex in batch {
        let mut g = Graph::new();
        let f = model.forward(&mut g, params, ex, mode)?;
        let loss = g.scalar_value(f.loss).to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss on example `{}`", ex.id)));
        }
        total += loss;
        g.backward_scaled(f.loss, seed)?;
        params.accumulate_grads(&g)?;
    }
    Ok(total)
}

/// Train `params` in place. Validation runs in hard arc mode; the returned
/// outcome holds the parameters of the epoch with the best validation R@1.
pub fn train<S: Scalar>(
    model: &Irrgn,
    params: &mut ParameterStore<S>,
    train: &[DialogueExample],
    val: &[DialogueExample],
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochEvent<'_, S>) -> Result<()>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("training needs non-empty train and validation sets"));
    }
    let batches = train.len().div_ceil(cfg.batch_size);
    let schedule = CosineSchedule { initial_lr: cfg.lr, total_steps: batches * cfg.epochs };
    let mut opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, schedule);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, RankMetrics, ParameterStore<S>)> = None;
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed(seed, epoch)));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&DialogueExample> = idx.iter().map(|&i| &train[i]).collect();
            params.zero_grad();
            loss_sum += batch_gradient(model, params, &batch, cfg.reduction)?;
            if let Some(max) = cfg.clip_norm {
                let norm = params.grad_norm();
                if norm > S::of(max) {
                    params.scale_grads(S::of(max) / norm);
                }
            }
            lr = opt.step(params)?;
        }
        params.zero_grad();
        let mut log = EpochLog { epoch, loss: loss_sum / train.len() as f64, r4_at_1: None, r4_at_2: None, mrr: None, lr };
        let mut improved = false;
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let m = evaluate(model, params, val, ArcMode::Hard, cfg.eval_workers)?.metrics;
            log.r4_at_1 = Some(m.r4_at_1);
            log.r4_at_2 = Some(m.r4_at_2);
            log.mrr = Some(m.mrr);
            improved = best.as_ref().is_none_or(|(_, b, _)| m.r4_at_1 > b.r4_at_1);
            if improved {
                best = Some((epoch, m, params.clone()));
            }
        }
        on_epoch(&EpochEvent { log: &log, improved, params })?;
        logs.push(log);
    }
    let (best_epoch, best_metrics, best) = best.expect("the last epoch is always validated");
    Ok(TrainOutcome { best, best_epoch, best_metrics, logs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec, Vocabulary};

    fn tiny_corpus() -> (Vec<DialogueExample>, Vec<DialogueExample>, usize) {
        let spec = SyntheticSpec { train_size: 24, val_size: 8, ..SyntheticSpec::default() };
        let corpus = gen_synthetic(&spec).unwrap();
        let vocab = Vocabulary::from_records(&corpus.train);
        let conv = |rs| DialogueExample::from_records(rs, &vocab).unwrap();
        (conv(&corpus.train), conv(&corpus.val), vocab.len())
    }

    #[test]
    fn clip_norm_must_be_positive() {
        assert!(TrainConfig { clip_norm: Some(0.0), ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { clip_norm: Some(1.0), ..TrainConfig::default() }.validate().is_ok());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let (model, store) = Irrgn::init::<f64>(ModelConfig::tiny(), 10).unwrap();
        assert!(evaluate(&model, &store, &[], ArcMode::Hard, 2).is_err());
    }

    #[test]
    fn worker_count_does_not_change_metrics() {
        let (_, val, v) = tiny_corpus();
        let (model, store) = Irrgn::init::<f64>(ModelConfig::tiny(), v).unwrap();
        let one = evaluate(&model, &store, &val, ArcMode::Hard, 1).unwrap();
        let four = evaluate(&model, &store, &val, ArcMode::Hard, 4).unwrap();
        assert_eq!(one.metrics, four.metrics);
        assert_eq!(one.mean_loss.to_bits(), four.mean_loss.to_bits());
    }

    #[test]
    fn training_is_reproducible_and_keeps_best() {
        let (tr, val, v) = tiny_corpus();
        let cfg = TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() };
        let run = || {
            let (model, mut store) = Irrgn::init::<f64>(ModelConfig::tiny(), v).unwrap();
            let out = train(&model, &mut store, &tr, &val, &cfg, 3, |_| Ok(())).unwrap();
            let again = evaluate(&model, &out.best, &val, ArcMode::Hard, 1).unwrap().metrics;
            assert_eq!(again, out.best_metrics);
            out.logs
        };
        let a = run();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|l| l.loss.is_finite() && l.r4_at_1.is_some()));
        assert_eq!(a, run());
    }
}
