//! Big-Five personality scoring.
//!
//! A scorer maps one comment to five trait activations in `[0, 1]` (openness,
//! conscientiousness, extraversion, agreeableness, neuroticism) and to a
//! `dp`-dimensional projected vector. Two scorers ship: a fixed lexicon and
//! a small CNN trainable on any trait-labelled corpus.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::corpus::{tokenize, tokenize_pad, Vocabulary};
use crate::error::{Error, Result};
use crate::neural::{
    sigmoid, sigmoid_bce, Activation, AdamConfig, AdamState, ContentCnn, Dense, Embedding, HasParams, Param,
};

pub const TRAITS: [&str; 5] = ["openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism"];

pub trait PersonalityScorer: Send + Sync {
    fn name(&self) -> String;
    /// Width of [`PersonalityScorer::score`] output.
    fn dim(&self) -> usize;
    fn traits(&self, text: &str) -> Result<[f64; 5]>;
    /// Projected trait representation of one comment.
    fn score(&self, text: &str) -> Result<Vec<f64>>;
}

/// Arithmetic mean of the per-comment projected vectors.
pub fn personality_vector(history: &[String], scorer: &dyn PersonalityScorer) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::data("personality_vector: empty history"));
    }
    let mut acc = vec![0.0; scorer.dim()];
    for comment in history {
        let v = scorer.score(comment)?;
        if v.len() != acc.len() {
            return Err(Error::shape(format!("scorer returned {} values, expected {}", v.len(), acc.len())));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = history.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

const LEXICON_TSV: &str = include_str!("../../data/personality_lexicon.tsv");
const LEXICON_PROJECTION_SEED: u64 = 0x5eed_b16_f1e;

/// Lexicon scorer: each trait is `sigmoid(2 * mean weight)` over matched
/// words (0.5 when nothing matches); the projection is a fixed seeded
/// Gaussian map of the centred traits, so neutral text projects to zero.
#[derive(Debug, Clone)]
pub struct LexiconScorer {
    weights: HashMap<String, [f64; 5]>,
    projection: Array2<f64>,
}

impl LexiconScorer {
    pub fn new(dp: usize) -> Self {
        let mut weights = HashMap::new();
        for line in LEXICON_TSV.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let mut cols = line.split('\t');
            let word = cols.next().unwrap().to_string();
            let mut w = [0.0; 5];
            for slot in &mut w {
                *slot = cols.next().and_then(|c| c.parse().ok()).expect("malformed lexicon row");
            }
            weights.insert(word, w);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(LEXICON_PROJECTION_SEED);
        let scale = 1.0 / (5.0f64).sqrt();
        let projection = Array2::from_shape_simple_fn((5, dp), || scale * rng.sample::<f64, _>(StandardNormal));
        Self { weights, projection }
    }

    pub fn lexicon_size(&self) -> usize {
        self.weights.len()
    }
}

impl PersonalityScorer for LexiconScorer {
    fn name(&self) -> String {
        "lexicon".into()
    }

    fn dim(&self) -> usize {
        self.projection.ncols()
    }

    fn traits(&self, text: &str) -> Result<[f64; 5]> {
        let mut sum = [0.0; 5];
        let mut hits = 0usize;
        for tok in tokenize(text) {
            let word = tok.trim_matches(|c: char| !c.is_alphanumeric());
            if let Some(w) = self.weights.get(word) {
                hits += 1;
                for (s, x) in sum.iter_mut().zip(w) {
                    *s += x;
                }
            }
        }
        let mut out = [0.5; 5];
        if hits > 0 {
            for (o, s) in out.iter_mut().zip(sum) {
                *o = sigmoid(2.0 * s / hits as f64);
            }
        }
        Ok(out)
    }

    fn score(&self, text: &str) -> Result<Vec<f64>> {
        let centred = Array1::from_iter(self.traits(text)?.iter().map(|t| t - 0.5));
        Ok(centred.dot(&self.projection).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnScorerConfig {
    pub dem: usize,
    pub ks: usize,
    pub filters: usize,
    pub dp: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_len: usize,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for CnnScorerConfig {
    fn default() -> Self {
        Self {
            dem: 50,
            ks: 2,
            filters: 64,
            dp: 100,
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            max_len: 100,
            min_freq: 1,
            seed: 0,
        }
    }
}

/// One trait-labelled training text; targets may be soft scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitExample {
    pub text: String,
    pub traits: [f64; 5],
}

/// Embedding, CNN, `dp`-wide ReLU hidden layer, five sigmoid outputs. The hidden
/// layer is the learned projection returned by `score`.
#[derive(Debug, Clone)]
pub struct CnnTraitScorer {
    vocab: Vocabulary,
    config: CnnScorerConfig,
    embedding: Embedding,
    cnn: ContentCnn,
    hidden: Dense,
    head: Dense,
}

struct ScorerPass {
    ids: Vec<u32>,
    emb: Array2<f64>,
    cnn: crate::neural::CnnCache,
    pooled: Array1<f64>,
    hidden_pre: Array1<f64>,
    hidden: Array1<f64>,
    logits: Vec<f64>,
}

impl CnnTraitScorer {
    pub fn new(vocab: Vocabulary, config: CnnScorerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 0.05;
        Self {
            embedding: Embedding::new("personality.embedding", vocab.len(), config.dem, scale, &mut rng),
            cnn: ContentCnn::new("personality.cnn", config.ks, config.dem, config.filters, Activation::Relu, scale, &mut rng),
            hidden: Dense::new("personality.hidden", config.filters, config.dp, scale, &mut rng),
            head: Dense::new("personality.head", config.dp, 5, scale, &mut rng),
            vocab,
            config,
        }
    }

    fn pass(&self, text: &str) -> Result<ScorerPass> {
        let seq = tokenize_pad(text, &self.vocab, self.config.max_len.max(self.config.ks))?;
        let emb = self.embedding.forward(&seq.ids)?;
        let (pooled, cnn) = self.cnn.forward(emb.view())?;
        let hidden_pre = self.hidden.forward_vec(pooled.view());
        let hidden = hidden_pre.mapv(|v| v.max(0.0));
        let logits = self.head.forward_vec(hidden.view()).to_vec();
        Ok(ScorerPass { ids: seq.ids, emb, cnn, pooled, hidden_pre, hidden, logits })
    }

    fn backward(&mut self, p: &ScorerPass, dlogits: &[f64]) {
        let dh = self.head.backward_vec(p.hidden.view(), Array1::from(dlogits.to_vec()).view());
        let dh_pre = Array1::from_shape_fn(dh.len(), |i| if p.hidden_pre[i] > 0.0 { dh[i] } else { 0.0 });
        let dpooled = self.hidden.backward_vec(p.pooled.view(), dh_pre.view());
        let demb = self.cnn.backward(p.emb.view(), &p.cnn, dpooled.as_slice().unwrap());
        self.embedding.backward(&p.ids, demb.view());
    }

    /// Trains with mean sigmoid cross-entropy and Adam; returns the scorer and
    /// the mean loss of each epoch.
    pub fn train(corpus: &[TraitExample], config: CnnScorerConfig) -> Result<(Self, Vec<f64>)> {
        if corpus.is_empty() {
            return Err(Error::data("personality corpus is empty"));
        }
        if corpus.iter().any(|e| e.traits.iter().any(|t| !(0.0..=1.0).contains(t))) {
            return Err(Error::data("trait targets must lie in [0, 1]"));
        }
        let vocab = Vocabulary::fit(corpus.iter().map(|e| e.text.as_str()), config.min_freq)?;
        let mut model = Self::new(vocab, config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        let mut adam = AdamState::new();
        let adam_cfg = AdamConfig::new(config.learning_rate, 1e-8, 0.0);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut losses = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size.max(1)) {
                model.zero_grads();
                for &i in batch {
                    let p = model.pass(&corpus[i].text)?;
                    let (loss, grad) = sigmoid_bce(&p.logits, &corpus[i].traits);
                    if !loss.is_finite() {
                        return Err(Error::Training("personality scorer loss is not finite".into()));
                    }
                    total += loss;
                    model.backward(&p, &grad);
                }
                model.scale_grads(1.0 / batch.len() as f64);
                adam.step(&mut model.params_mut(), &adam_cfg)?;
            }
            losses.push(total / corpus.len() as f64);
        }
        Ok((model, losses))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "config": self.config, "vocab": self.vocab });
        let mut archive = Archive::new("personality-cnn", meta);
        self.write_blocks(&mut archive);
        archive.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::read_kind(path, "personality-cnn")?;
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        let config: CnnScorerConfig = serde_json::from_value(archive.meta["config"].clone())?;
        let vocab: Vocabulary = serde_json::from_value(archive.meta["vocab"].clone())?;
        let mut model = Self::new(vocab, config);
        model.load_blocks(&archive).map_err(bad)?;
        Ok(model)
    }
}

impl HasParams for CnnTraitScorer {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.embedding.params();
        v.extend(self.cnn.params());
        v.extend(self.hidden.params());
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embedding.params_mut();
        v.extend(self.cnn.params_mut());
        v.extend(self.hidden.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}

impl PersonalityScorer for CnnTraitScorer {
    fn name(&self) -> String {
        "cnn".into()
    }

    fn dim(&self) -> usize {
        self.config.dp
    }

    fn traits(&self, text: &str) -> Result<[f64; 5]> {
        let p = self.pass(text)?;
        let mut out = [0.0; 5];
        for (o, z) in out.iter_mut().zip(&p.logits) {
            *o = sigmoid(*z);
        }
        Ok(out)
    }

    fn score(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.pass(text)?.hidden.to_vec())
    }
}
