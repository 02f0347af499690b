//! SVM baselines: bag-of-words, CNN features, and CNN features plus the
//! user's stylometric vector, all sharing one Pegasos-trained linear SVM.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArtifactRef, TensorBlock};
use crate::cascade::{cascade_train, load_referenced_profiles, CascadeContext, CascadeModel};
use crate::corpus::{build_vocab, tokenize_pad, DatasetSplit, Label, SequenceExample, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::neural::{derive_seed, sigmoid, HyperParams};
use crate::profiles::ProfileStore;
use crate::training::{Prediction, TrainingLog};

pub const BOW_KIND: &str = "bow-svm";
pub const CNN_KIND: &str = "cnn-svm";
pub const CUE_KIND: &str = "cue-svm";
const SVM_STREAM: u64 = 41;

/// Token counts over a vocabulary; out-of-vocabulary words land on the unknown id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseCounts {
    pub dim: usize,
    pub counts: BTreeMap<u32, u32>,
}

impl SparseCounts {
    pub fn from_sequence(seq: &TokenSequence, dim: usize) -> Self {
        let mut counts = BTreeMap::new();
        for &id in seq.tokens() {
            *counts.entry(id).or_insert(0) += 1;
        }
        Self { dim, counts }
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }
}

/// Counts of the (truncated, pre-padding) tokens of `text`.
pub fn bow_features(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<SparseCounts> {
    Ok(SparseCounts::from_sequence(&tokenize_pad(text, vocab, max_len)?, vocab.len()))
}

/// An SVM input vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(Vec<f64>),
    Sparse { dim: usize, entries: Vec<(u32, f64)> },
}

impl From<SparseCounts> for Features {
    fn from(c: SparseCounts) -> Self {
        Features::Sparse { dim: c.dim, entries: c.counts.into_iter().map(|(i, n)| (i, f64::from(n))).collect() }
    }
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(v) => v.len(),
            Features::Sparse { dim, .. } => *dim,
        }
    }

    fn dot(&self, w: &[f64]) -> f64 {
        match self {
            Features::Dense(v) => v.iter().zip(w).map(|(a, b)| a * b).sum(),
            Features::Sparse { entries, .. } => entries.iter().map(|&(i, x)| w[i as usize] * x).sum(),
        }
    }

    fn axpy(&self, a: f64, w: &mut [f64]) {
        match self {
            Features::Dense(v) => w.iter_mut().zip(v).for_each(|(wi, x)| *wi += a * x),
            Features::Sparse { entries, .. } => entries.iter().for_each(|&(i, x)| w[i as usize] += a * x),
        }
    }

    fn norm2(&self) -> f64 {
        match self {
            Features::Dense(v) => v.iter().map(|x| x * x).sum(),
            Features::Sparse { entries, .. } => entries.iter().map(|(_, x)| x * x).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Primal objective after each epoch.
    pub objective: Vec<f64>,
}

impl LinearSvm {
    pub fn decision(&self, x: &Features) -> Result<f64> {
        if x.dim() != self.w.len() {
            return Err(Error::shape(format!("SVM expects {} features, got {}", self.w.len(), x.dim())));
        }
        Ok(x.dot(&self.w) + self.b)
    }

    fn to_blocks(&self, archive: &mut Archive) {
        archive.push(TensorBlock::from_f64("svm.w", vec![self.w.len()], &self.w));
        archive.push(TensorBlock::from_f64("svm.b", vec![1], &[self.b]));
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "lambda": self.lambda, "epochs": self.epochs, "seed": self.seed, "objective": self.objective })
    }

    fn from_archive(archive: &Archive, dim: usize, path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        let m = &archive.meta["svm"];
        Ok(Self {
            w: archive.tensor("svm.w", &[dim]).map_err(bad)?.to_f64(),
            b: archive.tensor("svm.b", &[1]).map_err(bad)?.to_f64()[0],
            lambda: m["lambda"].as_f64().unwrap_or(0.0),
            epochs: m["epochs"].as_u64().unwrap_or(0) as usize,
            seed: m["seed"].as_u64().unwrap_or(0),
            objective: serde_json::from_value(m["objective"].clone()).unwrap_or_default(),
        })
    }
}

/// `sign(w.x + b)`, with a zero score going to non-sarcastic.
pub fn svm_predict(model: &LinearSvm, x: &Features) -> Result<Label> {
    Ok(if model.decision(x)? > 0.0 { Label::Sarcastic } else { Label::NonSarcastic })
}

/// `lambda/2 (|w|^2 + b^2) + mean hinge`.
fn objective(w: &[f64], b: f64, lambda: f64, xs: &[Features], ys: &[f64]) -> f64 {
    let hinge: f64 = xs.iter().zip(ys).map(|(x, y)| (1.0 - y * (x.dot(w) + b)).max(0.0)).sum();
    let norm: f64 = w.iter().map(|v| v * v).sum::<f64>() + b * b;
    0.5 * lambda * norm + hinge / xs.len() as f64
}

/// Pegasos: one pass per epoch over a seeded shuffle, step `1/(lambda t)`,
/// projection onto the `1/sqrt(lambda)` ball. The bias is an extra
/// always-one feature, so it is regularized with the weights.
pub fn svm_train(xs: &[Features], labels: &[Label], lambda: f64, epochs: usize, seed: u64) -> Result<LinearSvm> {
    if xs.len() != labels.len() {
        return Err(Error::shape(format!("{} feature rows but {} labels", xs.len(), labels.len())));
    }
    if !labels.contains(&Label::Sarcastic) || !labels.contains(&Label::NonSarcastic) {
        return Err(Error::data("SVM training needs at least one example of each class"));
    }
    if !(lambda.is_finite() && lambda > 0.0) || epochs == 0 {
        return Err(Error::HyperParams(format!("SVM needs lambda > 0 and epochs > 0, got {lambda}, {epochs}")));
    }
    let dim = xs[0].dim();
    if xs.iter().any(|x| x.dim() != dim) {
        return Err(Error::shape("SVM feature rows differ in width"));
    }
    let ys: Vec<f64> = labels.iter().map(|l| l.sign()).collect();

    // w = scale * v, so the shrink step is O(1) on sparse inputs.
    let mut v = vec![0.0; dim];
    let mut vb = 0.0;
    let mut scale = 1.0;
    let mut v_norm2 = 0.0;
    let radius2 = 1.0 / lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut t = 0u64;
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let margin = ys[i] * scale * (xs[i].dot(&v) + vb);
            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|x| *x = 0.0);
                vb = 0.0;
                v_norm2 = 0.0;
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let a = eta * ys[i] / scale;
                v_norm2 += 2.0 * a * (xs[i].dot(&v) + vb) + a * a * (xs[i].norm2() + 1.0);
                xs[i].axpy(a, &mut v);
                vb += a;
            }
            let w_norm2 = scale * scale * v_norm2.max(0.0);
            if w_norm2 > radius2 {
                scale *= (radius2 / w_norm2).sqrt();
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|x| *x *= scale);
                vb *= scale;
                v_norm2 *= scale * scale;
                scale = 1.0;
            }
        }
        let w: Vec<f64> = v.iter().map(|x| x * scale).collect();
        log.push(objective(&w, vb * scale, lambda, xs, &ys));
    }
    let w: Vec<f64> = v.iter().map(|x| x * scale).collect();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Training("SVM weights diverged".into()));
    }
    Ok(LinearSvm { w, b: vb * scale, lambda, epochs, seed, objective: log })
}

fn svm_seed(hp: &HyperParams) -> u64 {
    derive_seed(hp.seed, SVM_STREAM)
}

fn scored(id: &str, svm: &LinearSvm, x: &Features) -> Result<Prediction> {
    let score = svm.decision(x)?;
    Ok(Prediction {
        id: id.to_string(),
        pred: svm_predict(svm, x)?,
        p_sarcastic: sigmoid(score),
        cold_start_user: None,
        cold_start_forum: None,
    })
}

/// Bag-of-words counts into a linear SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct BowSvm {
    /// Run seed the SVM stream was derived from.
    pub seed: u64,
    pub vocab: Vocabulary,
    pub max_len: usize,
    pub svm: LinearSvm,
}

impl BowSvm {
    pub fn train(split: &DatasetSplit, hp: &HyperParams) -> Result<Self> {
        let vocab = build_vocab(&split.train, hp.min_freq)?;
        let xs = split
            .train
            .par_iter()
            .map(|ex| Ok(bow_features(&ex.response, &vocab, hp.max_len)?.into()))
            .collect::<Result<Vec<Features>>>()?;
        let labels: Vec<Label> = split.train.iter().map(|e| e.label).collect();
        let svm = svm_train(&xs, &labels, hp.svm_lambda, hp.svm_epochs, svm_seed(hp))?;
        Ok(Self { seed: hp.seed, vocab, max_len: hp.max_len, svm })
    }

    pub fn features(&self, ex: &SequenceExample) -> Result<Features> {
        Ok(bow_features(&ex.response, &self.vocab, self.max_len)?.into())
    }

    pub fn predict(&self, examples: &[SequenceExample]) -> Result<Vec<Prediction>> {
        examples.par_iter().map(|ex| scored(&ex.id, &self.svm, &self.features(ex)?)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "seed": self.seed, "vocab": self.vocab, "max_len": self.max_len, "svm": self.svm.meta() });
        let mut archive = Archive::new(BOW_KIND, meta);
        self.svm.to_blocks(&mut archive);
        archive.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::read_kind(path, BOW_KIND)?;
        let vocab: Vocabulary = serde_json::from_value(archive.meta["vocab"].clone())?;
        let max_len = archive.meta["max_len"].as_u64().unwrap_or(100) as usize;
        let svm = LinearSvm::from_archive(&archive, vocab.len(), path)?;
        let seed = archive.meta["seed"].as_u64().unwrap_or(0);
        Ok(Self { seed, vocab, max_len, svm })
    }
}

/// Content CNN trained end to end, frozen, and its pooled features fed to an
/// SVM; optionally with the author's stylometric vector appended.
#[derive(Debug, Clone)]
pub struct CnnSvm {
    pub cnn: CascadeModel,
    pub profiles: Option<Arc<ProfileStore>>,
    pub svm: LinearSvm,
    pub cnn_log: TrainingLog,
}

impl CnnSvm {
    /// CNN-SVM: `M` content features.
    pub fn train(split: &DatasetSplit, hp: &HyperParams) -> Result<Self> {
        Self::fit(split, None, hp)
    }

    /// CUE-SVM: `M` content features plus the `ds` stylometric user vector
    /// (zeros for users without a profile).
    pub fn train_cue(split: &DatasetSplit, profiles: Arc<ProfileStore>, hp: &HyperParams) -> Result<Self> {
        Self::fit(split, Some(profiles), hp)
    }

    fn fit(split: &DatasetSplit, profiles: Option<Arc<ProfileStore>>, hp: &HyperParams) -> Result<Self> {
        let (cnn, cnn_log) = cascade_train(split, CascadeContext::ContentOnly, hp)?;
        let mut model = Self {
            cnn,
            profiles,
            svm: LinearSvm { w: vec![], b: 0.0, lambda: hp.svm_lambda, epochs: 0, seed: 0, objective: vec![] },
            cnn_log,
        };
        let xs = split.train.par_iter().map(|ex| model.features(ex)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<Label> = split.train.iter().map(|e| e.label).collect();
        model.svm = svm_train(&xs, &labels, hp.svm_lambda, hp.svm_epochs, svm_seed(hp))?;
        Ok(model)
    }

    pub fn kind(&self) -> &'static str {
        if self.profiles.is_some() {
            CUE_KIND
        } else {
            CNN_KIND
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.cnn.hp.m + self.profiles.as_ref().map_or(0, |p| p.meta.ds)
    }

    /// Feature vector plus whether the user lookup fell back to zeros.
    fn features_with_flag(&self, ex: &SequenceExample) -> Result<(Features, Option<bool>)> {
        let seq = tokenize_pad(&ex.response, self.cnn.vocab(), self.cnn.hp.max_len)?;
        let mut x = self.cnn.content_features(&seq)?;
        let cold = self.profiles.as_ref().map(|p| {
            let s = p.stylometric(&ex.author);
            x.extend(s.vector);
            s.cold_start
        });
        Ok((Features::Dense(x), cold))
    }

    pub fn features(&self, ex: &SequenceExample) -> Result<Features> {
        Ok(self.features_with_flag(ex)?.0)
    }

    pub fn predict(&self, examples: &[SequenceExample]) -> Result<Vec<Prediction>> {
        examples
            .par_iter()
            .map(|ex| {
                let (x, cold) = self.features_with_flag(ex)?;
                let mut p = scored(&ex.id, &self.svm, &x)?;
                p.cold_start_user = cold;
                Ok(p)
            })
            .collect()
    }

    pub fn save(&self, path: &Path, profiles: Option<&ArtifactRef>) -> Result<()> {
        let mut archive = self.cnn.to_archive(self.kind(), None);
        if let serde_json::Value::Object(m) = &mut archive.meta {
            m.insert("svm".into(), self.svm.meta());
            m.insert("profiles".into(), serde_json::to_value(profiles)?);
        }
        self.svm.to_blocks(&mut archive);
        archive.write(path)
    }

    /// Loads either kind; CUE-SVM uses `store` if given, else the recorded profile archive.
    pub fn load(path: &Path, store: Option<Arc<ProfileStore>>) -> Result<Self> {
        let archive = Archive::read(path)?;
        let profiles = match archive.kind.as_str() {
            CNN_KIND => None,
            CUE_KIND => Some(match store {
                Some(s) => s,
                None => Arc::new(load_referenced_profiles(&archive.meta["profiles"], path)?),
            }),
            other => {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    message: format!("expected kind `{CNN_KIND}` or `{CUE_KIND}`, found `{other}`"),
                })
            }
        };
        let cnn = CascadeModel::from_archive(&archive, path, None)?;
        let dim = cnn.hp.m + profiles.as_ref().map_or(0, |p| p.meta.ds);
        let svm = LinearSvm::from_archive(&archive, dim, path)?;
        let cnn_log = TrainingLog { epochs: vec![], best_epoch: 0, selected_on: String::new(), first_batch_loss: f64::NAN, steps: cnn.steps() };
        Ok(Self { cnn, profiles, svm, cnn_log })
    }
}
