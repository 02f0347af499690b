//! PV-DBOW paragraph vectors trained with negative sampling.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvConfig {
    pub dim: usize,
    pub epochs: usize,
    pub negative: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl PvConfig {
    pub fn new(dim: usize, epochs: usize, negative: usize, seed: u64) -> Self {
        Self {
            dim,
            epochs,
            negative,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            seed,
        }
    }
}

/// Document vectors keyed by sorted document id.
#[derive(Debug, Clone, PartialEq)]
pub struct DocEmbeddings {
    pub ids: Vec<String>,
    pub vectors: Array2<f64>,
    pub config: PvConfig,
}

impl DocEmbeddings {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn get(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        let row = self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok()?;
        Some(self.vectors.row(row))
    }

    pub fn to_map(&self) -> BTreeMap<String, Vec<f64>> {
        self.ids
            .iter()
            .zip(self.vectors.outer_iter())
            .map(|(id, v)| (id.clone(), v.to_vec()))
            .collect()
    }
}

/// Unigram^0.75 noise distribution over the word vocabulary.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[usize]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// Trains one vector per document to predict the document's own words
/// against `negative` noise words, with a linearly decaying learning rate.
pub fn train_paragraph_vectors(docs: &BTreeMap<String, Vec<String>>, cfg: &PvConfig) -> Result<DocEmbeddings> {
    if docs.is_empty() {
        return Err(Error::data("paragraph vectors: empty corpus"));
    }
    if cfg.dim == 0 {
        return Err(Error::data("paragraph vectors: dim must be positive"));
    }
    if let Some((id, _)) = docs.iter().find(|(_, toks)| toks.is_empty()) {
        return Err(Error::data(format!("paragraph vectors: document `{id}` has no tokens")));
    }

    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for toks in docs.values() {
        for t in toks {
            *word_counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let word_index: BTreeMap<&str, usize> = word_counts.keys().enumerate().map(|(i, w)| (*w, i)).collect();
    let counts: Vec<usize> = word_counts.values().copied().collect();
    let noise = NoiseTable::new(&counts);
    let encoded: Vec<Vec<usize>> = docs
        .values()
        .map(|toks| toks.iter().map(|t| word_index[t.as_str()]).collect())
        .collect();

    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut doc_vecs = Array2::from_shape_simple_fn((docs.len(), dim), || (rng.gen::<f64>() - 0.5) / dim as f64);
    let mut out_vecs = Array2::<f64>::zeros((counts.len(), dim));

    let total_words = (encoded.iter().map(Vec::len).sum::<usize>() * cfg.epochs) as f64;
    let mut processed = 0usize;
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut grad_doc = Array1::<f64>::zeros(dim);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &d in &order {
            for &word in &encoded[d] {
                let progress = processed as f64 / total_words;
                let lr = (cfg.learning_rate - (cfg.learning_rate - cfg.min_learning_rate) * progress)
                    .max(cfg.min_learning_rate);
                processed += 1;
                grad_doc.fill(0.0);
                for n in 0..=cfg.negative {
                    let (target, label) = if n == 0 {
                        (word, 1.0)
                    } else {
                        let w = noise.sample(&mut rng);
                        if w == word {
                            continue;
                        }
                        (w, 0.0)
                    };
                    let doc = doc_vecs.row(d);
                    let mut out = out_vecs.row_mut(target);
                    let g = (label - sigmoid(doc.dot(&out))) * lr;
                    grad_doc.scaled_add(g, &out);
                    out.scaled_add(g, &doc);
                }
                doc_vecs.row_mut(d).scaled_add(1.0, &grad_doc);
            }
        }
    }
    if doc_vecs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("paragraph vectors diverged".into()));
    }
    Ok(DocEmbeddings {
        ids: docs.keys().cloned().collect(),
        vectors: doc_vecs,
        config: *cfg,
    })
}

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let denom = a.dot(&a).sqrt() * b.dot(&b).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(&b) / denom
    }
}
