use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::LabeledSequence;
use crate::embeddings::Embedder;
use crate::error::{Error, Result};
use crate::labels::Label;
use crate::models::{build_model, labels_from_distributions, ModelInstance, ModelSpec};
use crate::numeric::{Layer, Matrix};

use super::{adam_step, masked_cross_entropy, AdamState, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 0.5), got {}",
                self.val_fraction
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    /// Loss of the end-of-epoch parameters on the validation set.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LossCurve {
    pub records: Vec<EpochRecord>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Final validation loss minus final training loss.
pub fn generalization_gap(curve: &LossCurve) -> Result<f64> {
    let last = curve
        .last()
        .ok_or_else(|| Error::Contract("generalization gap of an empty loss curve".into()))?;
    let val = last
        .val_loss
        .ok_or_else(|| Error::Contract("loss curve has no validation losses".into()))?;
    Ok(val - last.train_loss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub curve: LossCurve,
    /// Epoch whose parameters the model holds (1-based).
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
    pub train_essays: usize,
    pub val_essays: usize,
}

/// Split sequences by essay: a seeded shuffle of the distinct essay ids puts
/// `round(val_fraction · essays)` of them (at least one) in validation.
pub fn split_by_essay<'a>(
    sequences: &'a [LabeledSequence],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<&'a LabeledSequence>, Vec<&'a LabeledSequence>)> {
    let mut ids: Vec<&str> = sequences.iter().map(|s| s.essay_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Config(
            "a validation split by essay needs at least two essays".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5611_7a11);
    ids.shuffle(&mut rng);
    let n_val = ((val_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let val_ids: std::collections::HashSet<&str> = ids[..n_val].iter().copied().collect();
    let (val, train): (Vec<_>, Vec<_>) = sequences
        .iter()
        .partition(|s| val_ids.contains(s.essay_id.as_str()));
    Ok((train, val))
}

fn gold_of(batch: &[&LabeledSequence]) -> Vec<Vec<Label>> {
    batch.iter().map(|s| s.labels.clone()).collect()
}

fn non_empty<'a>(seqs: &[&'a LabeledSequence]) -> Vec<&'a LabeledSequence> {
    seqs.iter().copied().filter(|s| !s.is_empty()).collect()
}

/// Token-weighted mean cross-entropy over `sequences`.
pub fn dataset_loss(
    model: &ModelInstance,
    sequences: &[&LabeledSequence],
    embedder: &Embedder,
    batch_size: usize,
) -> Result<f64> {
    let seqs = non_empty(sequences);
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in seqs.chunks(batch_size.max(1)) {
        let x = embedder.vectorize_batch(chunk)?;
        let probs = model.distributions(&x)?;
        let (loss, _) = masked_cross_entropy(&probs, &gold_of(chunk))?;
        let n: usize = chunk.iter().map(|s| s.len()).sum();
        total += loss * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::Contract("loss over a set with no tokens".into()));
    }
    Ok(total / tokens as f64)
}

fn snapshot(model: &ModelInstance) -> Vec<Matrix> {
    model.parameters().iter().map(|p| p.value.clone()).collect()
}

fn restore(model: &mut ModelInstance, values: &[Matrix]) {
    for (p, v) in model.parameters_mut().into_iter().zip(values) {
        p.value = v.clone();
    }
}

/// Train with an essay-level validation split taken from `sequences`.
pub fn train(
    model: &mut ModelInstance,
    sequences: &[LabeledSequence],
    embedder: &Embedder,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::Contract("no training sequences".into()));
    }
    let (train_set, val_set) = split_by_essay(sequences, cfg.val_fraction, cfg.seed)?;
    let essays = |s: &[&LabeledSequence]| {
        let mut ids: Vec<&str> = s.iter().map(|q| q.essay_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    let mut outcome = train_with_validation(model, &train_set, &val_set, embedder, cfg)?;
    outcome.train_essays = essays(&train_set);
    outcome.val_essays = essays(&val_set);
    Ok(outcome)
}

/// Mini-batch Adam on `train_set`. With a non-empty `val_set`, stops after
/// more than `cfg.patience` epochs without a lower validation loss and
/// restores the best parameters. On a non-finite loss the model is left
/// with the last finite parameters and [`Error::Diverged`] is returned.
pub fn train_with_validation(
    model: &mut ModelInstance,
    train_set: &[&LabeledSequence],
    val_set: &[&LabeledSequence],
    embedder: &Embedder,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    if embedder.dim() != model.spec().input_dim {
        return Err(Error::Config(format!(
            "embeddings are {}-dimensional, the model expects {}",
            embedder.dim(),
            model.spec().input_dim
        )));
    }
    let mut order = non_empty(train_set);
    if order.is_empty() {
        return Err(Error::Contract("no non-empty training sequences".into()));
    }
    let val = non_empty(val_set);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut curve = LossCurve::default();
    let mut best = (f64::INFINITY, 0usize, snapshot(model));
    let mut bad_epochs = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let before = snapshot(model);
            let x = embedder.vectorize_batch(chunk)?;
            model.zero_grad();
            let (probs, caches) = model.forward(&x)?;
            let (loss, grad) = masked_cross_entropy(&probs, &gold_of(chunk))?;
            if !loss.is_finite() {
                restore(model, &before);
                return Err(Error::Diverged { epoch });
            }
            model.backward(&caches, &grad)?;
            let step = adam_step(&mut model.parameters_mut(), &mut adam, cfg.learning_rate);
            let finite = model.parameters().iter().all(|p| p.value.is_finite());
            if step.is_err() || !finite {
                restore(model, &before);
                return Err(Error::Diverged { epoch });
            }
            let n: usize = chunk.iter().map(|s| s.len()).sum();
            total += loss * n as f64;
            tokens += n;
        }
        let train_loss = total / tokens as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(dataset_loss(model, &val, embedder, cfg.batch_size)?)
        };
        if val_loss.is_some_and(|v| !v.is_finite()) {
            restore(model, &best.2);
            return Err(Error::Diverged { epoch });
        }
        curve.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if let Some(v) = val_loss {
            if v < best.0 {
                best = (v, epoch, snapshot(model));
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs > cfg.patience {
                    stopped_early = epoch < cfg.max_epochs;
                    break;
                }
            }
        }
    }

    let (best_val_loss, best_epoch) = if val.is_empty() {
        (None, curve.len())
    } else {
        restore(model, &best.2);
        (Some(best.0), best.1)
    };
    Ok(TrainOutcome {
        curve,
        best_epoch,
        best_val_loss,
        stopped_early,
        train_essays: 0,
        val_essays: 0,
    })
}

/// Argmax labels for every sequence, in input order.
pub fn predict_sequences(
    model: &ModelInstance,
    sequences: &[&LabeledSequence],
    embedder: &Embedder,
    batch_size: usize,
) -> Result<Vec<Vec<Label>>> {
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(batch_size.max(1)) {
        let present = non_empty(chunk);
        let mut predicted = if present.is_empty() {
            Vec::new()
        } else {
            let x = embedder.vectorize_batch(&present)?;
            labels_from_distributions(&model.distributions(&x)?)
        }
        .into_iter();
        for s in chunk {
            out.push(if s.is_empty() {
                Vec::new()
            } else {
                predicted.next().expect("one prediction per non-empty sequence")
            });
        }
    }
    Ok(out)
}

/// Token-level scores of `model` on `sequences`.
pub fn evaluate(
    model: &ModelInstance,
    sequences: &[&LabeledSequence],
    embedder: &Embedder,
) -> Result<MetricsReport> {
    let predicted = predict_sequences(model, sequences, embedder, 64)?;
    Ok(MetricsReport::from_labels(
        sequences
            .iter()
            .zip(&predicted)
            .map(|(s, p)| (s.labels.as_slice(), p.as_slice())),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Best validation loss, or the error that ended the trial.
    pub result: std::result::Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct LrSearchOutcome {
    pub best: TrainConfig,
    pub model: ModelInstance,
    pub train: TrainOutcome,
    pub trials: Vec<TrialOutcome>,
}

pub const DEFAULT_LR_TRIALS: usize = 4;
pub const DEFAULT_LR_RANGE: (f64, f64) = (1e-4, 1e-2);

/// Log-uniform draws from `[lo, hi]`.
pub fn sample_learning_rates(n: usize, range: (f64, f64), seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a7e_5eed);
    let (lo, hi) = (range.0.ln(), range.1.ln());
    (0..n)
        .map(|_| rng.gen_range(lo..=hi).exp().clamp(range.0, range.1))
        .collect()
}

/// Random search over the learning rate. Trial `i` uses seed `cfg.seed + i`
/// for both initialisation and training; the trial with the lowest
/// validation loss of its restored parameters wins.
pub fn lr_search(
    spec: &ModelSpec,
    sequences: &[LabeledSequence],
    embedder: &Embedder,
    cfg: &TrainConfig,
    trials: usize,
    range: (f64, f64),
) -> Result<LrSearchOutcome> {
    if trials == 0 {
        return Err(Error::Config("lr_search needs at least one trial".into()));
    }
    if !(range.0 > 0.0 && range.0 <= range.1) {
        return Err(Error::Config(format!("invalid learning-rate range {range:?}")));
    }
    let rates = sample_learning_rates(trials, range, cfg.seed);
    let mut outcomes = Vec::with_capacity(trials);
    let mut best: Option<(f64, TrainConfig, ModelInstance, TrainOutcome)> = None;
    for (i, &lr) in rates.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let trial_cfg = TrainConfig {
            learning_rate: lr,
            seed,
            ..cfg.clone()
        };
        let mut model = build_model(&spec.clone().with_seed(seed))?;
        let result = train(&mut model, sequences, embedder, &trial_cfg);
        let loss = result.as_ref().map_err(|e| e.to_string()).and_then(|o| {
            o.best_val_loss.ok_or_else(|| "no validation loss".to_string())
        });
        outcomes.push(TrialOutcome {
            trial: i,
            learning_rate: lr,
            seed,
            result: loss.clone(),
        });
        if let (Ok(l), Ok(o)) = (loss, result) {
            if best.as_ref().map_or(true, |b| l < b.0) {
                best = Some((l, trial_cfg, model, o));
            }
        }
    }
    match best {
        Some((_, best, model, train)) => Ok(LrSearchOutcome {
            best,
            model,
            train,
            trials: outcomes,
        }),
        None => Err(Error::SearchFailed(
            outcomes
                .iter()
                .map(|t| {
                    format!(
                        "trial {} (lr {:.3e}): {}",
                        t.trial,
                        t.learning_rate,
                        t.result.as_ref().err().cloned().unwrap_or_default()
                    )
                })
                .collect(),
        )),
    }
}
