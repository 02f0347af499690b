//! Confusion counts, accuracy, F1, and the paired bootstrap test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

pub const DEFAULT_BOOTSTRAP: usize = 10_000;

/// Counts with sarcastic as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(preds: &[Label], gold: &[Label]) -> Result<ConfusionCounts> {
    if preds.len() != gold.len() {
        return Err(Error::data(format!("{} predictions for {} gold labels", preds.len(), gold.len())));
    }
    if preds.is_empty() {
        return Err(Error::data("no predictions to score"));
    }
    let mut c = ConfusionCounts::default();
    for (p, g) in preds.iter().zip(gold) {
        match (p, g) {
            (Label::Sarcastic, Label::Sarcastic) => c.tp += 1,
            (Label::NonSarcastic, Label::NonSarcastic) => c.tn += 1,
            (Label::Sarcastic, Label::NonSarcastic) => c.fp += 1,
            (Label::NonSarcastic, Label::Sarcastic) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::data("accuracy of zero examples")),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// `2tp / (2tp + fp + fn)`, the harmonic mean of precision and recall.
/// With no positives predicted or present (`tp = fp = fn = 0`) it is 1.
pub fn f1(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::data("F1 of zero examples"));
    }
    let denom = 2 * c.tp + c.fp + c.fn_;
    Ok(if denom == 0 { 1.0 } else { (2 * c.tp) as f64 / denom as f64 })
}

/// Two-sided paired bootstrap on the accuracy difference A - B.
///
/// Resamples example indices with replacement `n_boot` times; the p-value is
/// twice the fraction of resamples whose difference has the opposite sign to
/// the observed one or is zero, clamped to 1. Identical systems give 1.
pub fn significance(a: &[Label], b: &[Label], gold: &[Label], n_boot: usize, seed: u64) -> Result<f64> {
    if a.len() != gold.len() || b.len() != gold.len() {
        return Err(Error::data(format!(
            "significance needs equal lengths, got {}, {} and {} gold",
            a.len(),
            b.len(),
            gold.len()
        )));
    }
    if gold.is_empty() || n_boot == 0 {
        return Err(Error::data("significance needs at least one example and one resample"));
    }
    let diff: Vec<i64> = a
        .iter()
        .zip(b)
        .zip(gold)
        .map(|((x, y), g)| i64::from(x == g) - i64::from(y == g))
        .collect();
    let observed = diff.iter().sum::<i64>().signum();
    let n = diff.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut against = 0usize;
    for _ in 0..n_boot {
        let d: i64 = (0..n).map(|_| diff[rng.gen_range(0..n)]).sum();
        if d * observed <= 0 {
            against += 1;
        }
    }
    Ok((2.0 * against as f64 / n_boot as f64).min(1.0))
}
