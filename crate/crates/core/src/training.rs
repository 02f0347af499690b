//! Mini-batch Adam training with best-epoch selection, shared by every
//! neural classifier, plus prediction records.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::neural::{derive_seed, softmax, softmax_cross_entropy, AdamConfig, AdamState, HasParams, HyperParams};

/// A two-class model trained by [`train_classifier`].
pub trait Classifier: HasParams + Sync {
    type Input: Sync;

    /// Eval-mode class probabilities `[p_non_sarcastic, p_sarcastic]`.
    fn probs(&self, input: &Self::Input) -> Result<[f64; 2]>;

    /// Train-mode forward pass returning logits; the model keeps whatever
    /// [`Classifier::backward_last`] needs.
    fn forward_train(&mut self, input: &Self::Input, seed: u64) -> Result<[f64; 2]>;

    /// Backpropagates `dlogits` through the most recent `forward_train`.
    fn backward_last(&mut self, input: &Self::Input, dlogits: &[f64]) -> Result<()>;
}

/// Arg-max with exact ties going to non-sarcastic.
pub fn predict_label(probs: [f64; 2]) -> Label {
    if probs[1] > probs[0] {
        Label::Sarcastic
    } else {
        Label::NonSarcastic
    }
}

pub fn probs_from_logits(logits: &[f64]) -> [f64; 2] {
    let p = softmax(logits);
    [p[0], p[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn from_hp(hp: &HyperParams, seed: u64) -> Self {
        Self {
            epochs: hp.epochs,
            batch_size: hp.batch_size,
            adam: AdamConfig::new(hp.learning_rate, hp.adam_epsilon, hp.weight_decay),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Running train-mode accuracy over the epoch.
    pub train_accuracy: f64,
    pub selection_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// `"validation"`, or `"train"` when the validation set is empty.
    pub selected_on: String,
    pub first_batch_loss: f64,
    pub steps: u64,
}

/// Eval-mode accuracy, scored in parallel.
pub fn accuracy_of<M: Classifier>(model: &M, data: &[(M::Input, Label)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::data("accuracy of an empty set"));
    }
    let correct = data
        .par_iter()
        .map(|(x, y)| Ok(usize::from(predict_label(model.probs(x)?) == *y)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}

/// Trains in place and restores the parameters of the best epoch, judged on
/// `validation` accuracy (training accuracy if `validation` is empty; the
/// earliest epoch wins ties).
pub fn train_classifier<M: Classifier>(
    model: &mut M,
    train: &[(M::Input, Label)],
    validation: &[(M::Input, Label)],
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    if train.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::HyperParams("epochs and batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        selected_on: if validation.is_empty() { "train" } else { "validation" }.into(),
        first_batch_loss: f64::NAN,
        steps: 0,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            model.zero_grads();
            let mut batch_loss = 0.0;
            for (j, &i) in batch.iter().enumerate() {
                let (input, label) = &train[i];
                let example_seed = derive_seed(cfg.seed, log.steps * cfg.batch_size as u64 + j as u64 + 1);
                let logits = model.forward_train(input, example_seed)?;
                let (loss, dlogits) = softmax_cross_entropy(&logits, label.index());
                if !loss.is_finite() {
                    return Err(Error::Training(format!("non-finite loss at epoch {epoch}, batch {b}")));
                }
                if predict_label(probs_from_logits(&logits)) == *label {
                    correct += 1;
                }
                batch_loss += loss;
                model.backward_last(input, &dlogits)?;
            }
            if log.steps == 0 {
                log.first_batch_loss = batch_loss / batch.len() as f64;
            }
            loss_sum += batch_loss;
            model.scale_grads(1.0 / batch.len() as f64);
            adam.step(&mut model.params_mut(), &cfg.adam)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
            log.steps += 1;
        }
        let selection_accuracy = if validation.is_empty() {
            accuracy_of(model, train)?
        } else {
            accuracy_of(model, validation)?
        };
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            selection_accuracy,
        });
        if best.as_ref().map_or(true, |(acc, _)| selection_accuracy > *acc) {
            best = Some((selection_accuracy, model.flat_values()));
            log.best_epoch = epoch;
        }
    }
    if let Some((_, values)) = best {
        let mut offset = 0;
        for p in model.params_mut() {
            let n = p.len();
            p.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }
    Ok(log)
}

/// One scored example as written to prediction JSONL files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred: Label,
    pub p_sarcastic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cold_start_user: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cold_start_forum: Option<bool>,
}

impl Prediction {
    pub fn from_probs(id: impl Into<String>, probs: [f64; 2]) -> Self {
        Self {
            id: id.into(),
            pred: predict_label(probs),
            p_sarcastic: probs[1],
            cold_start_user: None,
            cold_start_forum: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Dense, Param};
    use ndarray::Array1;

    /// Logistic regression over fixed feature vectors.
    struct Linear(Dense);

    impl HasParams for Linear {
        fn params(&self) -> Vec<&Param> {
            self.0.params()
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            self.0.params_mut()
        }
    }

    impl Classifier for Linear {
        type Input = Vec<f64>;
        fn probs(&self, x: &Vec<f64>) -> Result<[f64; 2]> {
            Ok(probs_from_logits(self.0.forward_vec(Array1::from(x.clone()).view()).as_slice().unwrap()))
        }
        fn forward_train(&mut self, x: &Vec<f64>, _: u64) -> Result<[f64; 2]> {
            let l = self.0.forward_vec(Array1::from(x.clone()).view());
            Ok([l[0], l[1]])
        }
        fn backward_last(&mut self, x: &Vec<f64>, d: &[f64]) -> Result<()> {
            self.0.backward_vec(Array1::from(x.clone()).view(), Array1::from(d.to_vec()).view());
            Ok(())
        }
    }

    fn data() -> Vec<(Vec<f64>, Label)> {
        (0..40)
            .map(|i| {
                let s = i % 2 == 0;
                (vec![if s { 1.0 } else { -1.0 }, (i as f64 * 0.37).sin()], if s { Label::Sarcastic } else { Label::NonSarcastic })
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { epochs: 20, batch_size: 4, adam: AdamConfig::new(0.05, 1e-8, 0.0), seed: 3 }
    }

    #[test]
    fn ties_go_to_non_sarcastic() {
        assert_eq!(predict_label([0.5, 0.5]), Label::NonSarcastic);
        assert_eq!(predict_label([0.9, 0.1]), Label::NonSarcastic);
        assert_eq!(predict_label([0.2, 0.8]), Label::Sarcastic);
    }

    #[test]
    fn zero_init_first_loss_is_ln2_and_learns() {
        let mut m = Linear(Dense::zeros("lin", 2, 2));
        let log = train_classifier(&mut m, &data(), &[], &cfg()).unwrap();
        assert!((log.first_batch_loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(log.selected_on, "train");
        assert_eq!(accuracy_of(&m, &data()).unwrap(), 1.0);
        assert_eq!(log.steps, 20 * 10);
    }

    #[test]
    fn deterministic_and_keeps_best_epoch() {
        let run = || {
            let mut m = Linear(Dense::zeros("lin", 2, 2));
            let d = data();
            let log = train_classifier(&mut m, &d, &d[..10], &cfg()).unwrap();
            (m.flat_values(), log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let best = la.epochs.iter().map(|e| e.selection_accuracy).fold(0.0, f64::max);
        assert_eq!(la.epochs[la.best_epoch - 1].selection_accuracy, best);
        assert!(la.epochs[..la.best_epoch - 1].iter().all(|e| e.selection_accuracy < best));
    }

    #[test]
    fn prediction_jsonl_shape() {
        let p = Prediction::from_probs("x1", [0.25, 0.75]);
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"id":"x1","pred":1,"p_sarcastic":0.75}"#);
    }
}
