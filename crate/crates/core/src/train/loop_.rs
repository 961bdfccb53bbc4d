use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Confusion;
use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Adam, AdamConfig, ParamStore, Tape};

/// Probabilities at or above this value predict label 1.
pub const THRESHOLD: f64 = 0.5;

/// Separates the shuffling stream from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x5eed_5b0f;

/// Per-epoch record of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_uar: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub probabilities: Vec<f64>,
    pub predictions: Vec<u8>,
    pub confusion: Confusion,
    pub uar: f64,
}

pub fn predict_labels(model: &Model, samples: &[&SequenceSample]) -> Result<Vec<f64>> {
    samples.iter().map(|s| model.predict(s)).collect()
}

pub fn evaluate(model: &Model, samples: &[&SequenceSample]) -> Result<Evaluation> {
    let probabilities = predict_labels(model, samples)?;
    let predictions: Vec<u8> = probabilities
        .iter()
        .map(|&p| u8::from(p >= THRESHOLD))
        .collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let confusion = Confusion::from_predictions(&predictions, &labels)?;
    Ok(Evaluation {
        probabilities,
        predictions,
        uar: confusion.uar()?,
        confusion,
    })
}

/// Trains `model` in place with Adam and mini-batch BCE for
/// `config.epochs` epochs, then restores the parameters of the epoch with
/// the best validation UAR (earliest on ties).
pub fn train(
    model: &mut Model,
    train_set: &[&SequenceSample],
    val_set: &[&SequenceSample],
) -> Result<TrainHistory> {
    train_observed(model, train_set, val_set, &mut |_| {})
}

/// As [`train`], calling `seen` for every sample the model is run on.
pub fn train_observed(
    model: &mut Model,
    train_set: &[&SequenceSample],
    val_set: &[&SequenceSample],
    seen: &mut dyn FnMut(&SequenceSample),
) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    model.prepare(train_set)?;
    let cfg = model.config().clone();
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut tape = Tape::new();
    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_uar: Vec::with_capacity(cfg.epochs),
        selected_epoch: 0,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample = train_set[i];
                seen(sample);
                tape.clear();
                let bound = model.params().bind(&mut tape);
                let out = model.forward(&mut tape, &bound, sample, None)?;
                let loss = tape.bce(out.prob, &[f64::from(sample.label)])?;
                let value = tape.value(loss)[0];
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch, loss: value });
                }
                total += value;
                let grads = tape.backward(loss)?;
                model.params_mut().accumulate(&grads, &bound, scale)?;
            }
            adam.step(model.params_mut())?;
        }
        let mean_loss = total / train_set.len() as f64;
        let probs = val_set
            .iter()
            .map(|s| {
                seen(s);
                model.predict(s)
            })
            .collect::<Result<Vec<_>>>()?;
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= THRESHOLD)).collect();
        let labels: Vec<u8> = val_set.iter().map(|s| s.label).collect();
        let val = Confusion::from_predictions(&preds, &labels)?.uar()?;
        history.train_loss.push(mean_loss);
        history.val_uar.push(val);
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, model.params().clone()));
            history.selected_epoch = epoch;
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().copy_values_from(&params)?;
    }
    Ok(history)
}
