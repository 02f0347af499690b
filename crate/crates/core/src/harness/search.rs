//! Seeded random search over hyperparameters.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::DatasetSplit;
use crate::error::{Error, Result};
use crate::neural::HyperParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    Choice { values: Vec<Value> },
}

impl Distribution {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Value> {
        let bad = |m: &str| Err(Error::Search(format!("bad distribution {self:?}: {m}")));
        match self {
            Self::Uniform { low, high } => {
                if !(low <= high && low.is_finite() && high.is_finite()) {
                    return bad("needs finite low <= high");
                }
                Ok(Value::from(low + (high - low) * rng.gen::<f64>()))
            }
            Self::LogUniform { low, high } => {
                if !(*low > 0.0 && low <= high && high.is_finite()) {
                    return bad("needs 0 < low <= high");
                }
                let (a, b) = (low.ln(), high.ln());
                Ok(Value::from((a + (b - a) * rng.gen::<f64>()).exp()))
            }
            Self::Choice { values } => {
                if values.is_empty() {
                    return bad("no values");
                }
                Ok(values[rng.gen_range(0..values.len())].clone())
            }
        }
    }
}

/// One searched dimension. Every field in `fields` receives the same draw,
/// which ties dimensions such as `ds = dp = dt = k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParam {
    pub fields: Vec<String>,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<SearchParam>,
    pub budget: usize,
    pub seed: u64,
}

fn choice<T: Into<Value> + Copy>(fields: &[&str], values: &[T]) -> SearchParam {
    SearchParam {
        fields: fields.iter().map(|s| s.to_string()).collect(),
        distribution: Distribution::Choice { values: values.iter().map(|&v| v.into()).collect() },
    }
}

impl SearchSpace {
    /// Tied `{ds, dp, dt, k}` in {50, 100, 150}, `ks` in {2, 3},
    /// `m` in {64, 128, 256}, learning rate log-uniform on [1e-4, 1e-2].
    pub fn cascade(budget: usize, seed: u64) -> Self {
        Self {
            params: vec![
                choice(&["ds", "dp", "dt", "k"], &[50, 100, 150]),
                choice(&["ks"], &[2, 3]),
                choice(&["m"], &[64, 128, 256]),
                SearchParam {
                    fields: vec!["learning_rate".into()],
                    distribution: Distribution::LogUniform { low: 1e-4, high: 1e-2 },
                },
            ],
            budget,
            seed,
        }
    }

    /// The reported RCNN settings with the learning rate in {1e-5, 2e-5, 5e-5}.
    pub fn rcnn(budget: usize, seed: u64) -> Self {
        Self { params: vec![choice(&["learning_rate"], &[1e-5, 2e-5, 5e-5])], budget, seed }
    }

    /// Draws `budget` points over `base`, in order. Fails if a field name is
    /// unknown or a draw violates the hyperparameter invariants.
    pub fn sample(&self, base: &HyperParams) -> Result<Vec<(Value, HyperParams)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let base_json = serde_json::to_value(base)?;
        (0..self.budget)
            .map(|_| {
                let mut drawn = serde_json::Map::new();
                let mut point = base_json.clone();
                for p in &self.params {
                    let v = p.distribution.sample(&mut rng)?;
                    for f in &p.fields {
                        drawn.insert(f.clone(), v.clone());
                        point[f.as_str()] = v.clone();
                    }
                }
                let hp: HyperParams = serde_json::from_value(point)
                    .map_err(|e| Error::Search(format!("sampled point does not map onto hyperparameters: {e}")))?;
                hp.validate()?;
                Ok((Value::Object(drawn), hp))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: Value,
    pub validation_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: HyperParams,
    pub best_trial: usize,
    pub trials: Vec<Trial>,
}

impl SearchOutcome {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Evaluates every sampled point with `train_eval` (which returns validation
/// accuracy) and keeps the best; the earliest trial wins ties. Trials run in
/// parallel and are logged in index order. A failing trial is recorded and
/// skipped; if all fail the search fails.
pub fn random_search<F>(space: &SearchSpace, base: &HyperParams, split: &DatasetSplit, train_eval: F) -> Result<SearchOutcome>
where
    F: Fn(&HyperParams, &DatasetSplit) -> Result<f64> + Sync,
{
    if space.budget == 0 {
        return Err(Error::Search("search budget must be at least 1".into()));
    }
    let points = space.sample(base)?;
    let trials: Vec<Trial> = points
        .par_iter()
        .enumerate()
        .map(|(index, (params, hp))| {
            let outcome = train_eval(hp, split).and_then(|acc| {
                if acc.is_finite() {
                    Ok(acc)
                } else {
                    Err(Error::Training(format!("non-finite validation accuracy {acc}")))
                }
            });
            match outcome {
                Ok(acc) => Trial { index, params: params.clone(), validation_accuracy: Some(acc), error: None },
                Err(e) => Trial { index, params: params.clone(), validation_accuracy: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for t in &trials {
        if let Some(acc) = t.validation_accuracy {
            if best.map_or(true, |(_, b)| acc > b) {
                best = Some((t.index, acc));
            }
        }
    }
    let (best_trial, _) = best.ok_or_else(|| {
        Error::Search(format!("all {} trials failed; first error: {}", trials.len(), trials[0].error.as_deref().unwrap_or("")))
    })?;
    Ok(SearchOutcome { best: points[best_trial].1.clone(), best_trial, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_split() -> DatasetSplit {
        DatasetSplit { train: vec![], validation: vec![], test: vec![], seed: 0, test_fraction: 0.2, val_fraction: 0.2 }
    }

    #[test]
    fn defaults_sample_valid_points() {
        let base = HyperParams::cnn_preset();
        for p in SearchSpace::cascade(50, 3).sample(&base).unwrap().iter().map(|p| &p.1) {
            assert!(p.ds == p.dp && p.dp == p.dt && p.dt == p.k && [50, 100, 150].contains(&p.k));
            assert!([2, 3].contains(&p.ks) && [64, 128, 256].contains(&p.m));
            assert!((1e-4..=1e-2).contains(&p.learning_rate));
        }
        for (_, p) in SearchSpace::rcnn(10, 0).sample(&HyperParams::default()).unwrap() {
            assert!([1e-5, 2e-5, 5e-5].contains(&p.learning_rate));
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let space = SearchSpace { params: vec![choice(&["nope"], &[1])], budget: 1, seed: 0 };
        assert!(space.sample(&HyperParams::default()).is_err());
    }

    #[test]
    fn argmax_ties_and_failures() {
        let space = SearchSpace::cascade(12, 5);
        let base = HyperParams::cnn_preset();
        // Score by m, failing for ks = 3.
        let f = |hp: &HyperParams, _: &DatasetSplit| {
            if hp.ks == 3 {
                Err(Error::Training("boom".into()))
            } else {
                Ok(hp.m as f64)
            }
        };
        let out = random_search(&space, &base, &empty_split(), f).unwrap();
        let max = out.trials.iter().filter_map(|t| t.validation_accuracy).fold(f64::MIN, f64::max);
        assert_eq!(out.trials[out.best_trial].validation_accuracy, Some(max));
        let first = out.trials.iter().position(|t| t.validation_accuracy == Some(max)).unwrap();
        assert_eq!(out.best_trial, first);
        assert!(out.trials.iter().any(|t| t.error.is_some()));
        assert_eq!(out, random_search(&space, &base, &empty_split(), f).unwrap());

        let one = random_search(&SearchSpace::cascade(1, 9), &base, &empty_split(), |_, _| Ok(0.5)).unwrap();
        assert_eq!(one.best, SearchSpace::cascade(1, 9).sample(&base).unwrap()[0].1);
        assert!(random_search(&space, &base, &empty_split(), |_, _| Err(Error::Training("x".into()))).is_err());
        assert!(random_search(&SearchSpace::cascade(0, 0), &base, &empty_split(), |_, _| Ok(1.0)).is_err());
    }
}
