//! One entry point per model family for training, scoring and checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArtifactRef};
use crate::baselines::{BowSvm, CnnSvm, BOW_KIND, CNN_KIND, CUE_KIND};
use crate::cascade::{self, cascade_predict, cascade_train, CascadeContext, CascadeModel};
use crate::corpus::{DatasetSplit, Label, SequenceExample};
use crate::error::{Error, Result};
use crate::neural::HyperParams;
use crate::profiles::ProfileStore;
use crate::rcnn::{self, rcnn_predict, rcnn_train, EncoderSpec, MiniConfig, RcnnModel};
use crate::training::{Prediction, TrainingLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BowSvm,
    CnnSvm,
    CueSvm,
    Cascade,
    /// CASCADE with the context block held at zero.
    CascadeZeroed,
    Rcnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] =
        [Self::BowSvm, Self::CnnSvm, Self::CueSvm, Self::Cascade, Self::CascadeZeroed, Self::Rcnn];

    pub fn name(self) -> &'static str {
        match self {
            Self::BowSvm => "bow-svm",
            Self::CnnSvm => "cnn-svm",
            Self::CueSvm => "cue-svm",
            Self::Cascade => "cascade",
            Self::CascadeZeroed => "cascade-zeroed",
            Self::Rcnn => "rcnn",
        }
    }

    /// Row label in rendered reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::BowSvm => "BoW-SVM",
            Self::CnnSvm => "CNN-SVM",
            Self::CueSvm => "CUE-SVM",
            Self::Cascade => "CASCADE",
            Self::CascadeZeroed => "CASCADE (zeroed context)",
            Self::Rcnn => "RCNN",
        }
    }

    pub fn needs_profiles(self) -> bool {
        matches!(self, Self::Cascade | Self::CueSvm)
    }

    /// Starting hyperparameters before config overrides.
    pub fn default_hyperparams(self) -> HyperParams {
        match self {
            Self::Rcnn => HyperParams::default(),
            _ => HyperParams::cnn_preset(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown { what: "model", name: s.to_string() })
    }
}

/// What a model may need beyond the split and its hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelResources {
    pub profiles: Option<Arc<ProfileStore>>,
    pub encoder: EncoderSpec,
}

impl Default for ModelResources {
    fn default() -> Self {
        Self { profiles: None, encoder: EncoderSpec::Mini(MiniConfig::default()) }
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Cascade(CascadeModel),
    Rcnn(RcnnModel),
    Bow(BowSvm),
    CnnSvm(CnnSvm),
}

impl TrainedModel {
    pub fn predict(&self, examples: &[SequenceExample]) -> Result<Vec<Prediction>> {
        match self {
            Self::Cascade(m) => cascade_predict(m, examples),
            Self::Rcnn(m) => rcnn_predict(m, examples),
            Self::Bow(m) => m.predict(examples),
            Self::CnnSvm(m) => m.predict(examples),
        }
    }

    /// `profiles` is recorded in profile-backed checkpoints.
    pub fn save(&self, path: &Path, profiles: Option<&ArtifactRef>) -> Result<()> {
        match self {
            Self::Cascade(m) => m.save(path, profiles),
            Self::Rcnn(m) => m.save(path),
            Self::Bow(m) => m.save(path),
            Self::CnnSvm(m) => m.save(path, profiles),
        }
    }

    /// Loads any checkpoint, dispatching on its archive kind. Profile-backed
    /// models use `store` if given, else the profile archive they reference.
    pub fn load(path: &Path, store: Option<Arc<ProfileStore>>) -> Result<Self> {
        let archive = Archive::read(path)?;
        Ok(match archive.kind.as_str() {
            cascade::KIND => Self::Cascade(CascadeModel::from_archive(&archive, path, store)?),
            rcnn::KIND => Self::Rcnn(RcnnModel::load(path)?),
            BOW_KIND => Self::Bow(BowSvm::load(path)?),
            CNN_KIND | CUE_KIND => Self::CnnSvm(CnnSvm::load(path, store)?),
            other => {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    message: format!("archive kind `{other}` is not a classifier"),
                })
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Cascade(m) => match m.context() {
                CascadeContext::Profiles { .. } => ModelKind::Cascade,
                _ => ModelKind::CascadeZeroed,
            },
            Self::Rcnn(_) => ModelKind::Rcnn,
            Self::Bow(_) => ModelKind::BowSvm,
            Self::CnnSvm(m) if m.profiles.is_some() => ModelKind::CueSvm,
            Self::CnnSvm(_) => ModelKind::CnnSvm,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Cascade(m) => m.hp.seed,
            Self::Rcnn(m) => m.hp.seed,
            Self::Bow(m) => m.seed,
            Self::CnnSvm(m) => m.cnn.hp.seed,
        }
    }
}

fn need_profiles(kind: ModelKind, res: &ModelResources) -> Result<Arc<ProfileStore>> {
    res.profiles
        .clone()
        .ok_or_else(|| Error::data(format!("{kind} needs user and forum profiles")))
}

/// Trains one model; the log is the network's epoch log where there is one.
pub fn train_model(
    kind: ModelKind,
    split: &DatasetSplit,
    hp: &HyperParams,
    res: &ModelResources,
) -> Result<(TrainedModel, Option<TrainingLog>)> {
    hp.validate()?;
    Ok(match kind {
        ModelKind::BowSvm => (TrainedModel::Bow(BowSvm::train(split, hp)?), None),
        ModelKind::CnnSvm => {
            let m = CnnSvm::train(split, hp)?;
            let log = m.cnn_log.clone();
            (TrainedModel::CnnSvm(m), Some(log))
        }
        ModelKind::CueSvm => {
            let m = CnnSvm::train_cue(split, need_profiles(kind, res)?, hp)?;
            let log = m.cnn_log.clone();
            (TrainedModel::CnnSvm(m), Some(log))
        }
        ModelKind::Cascade => {
            let context = CascadeContext::profiles(need_profiles(kind, res)?);
            let (m, log) = cascade_train(split, context, hp)?;
            (TrainedModel::Cascade(m), Some(log))
        }
        ModelKind::CascadeZeroed => {
            let (m, log) = cascade_train(split, CascadeContext::Zeroed { k: hp.k, dt: hp.dt }, hp)?;
            (TrainedModel::Cascade(m), Some(log))
        }
        ModelKind::Rcnn => {
            let (m, log) = rcnn_train(split, res.encoder.build()?, hp)?;
            (TrainedModel::Rcnn(m), Some(log))
        }
    })
}

/// Fraction of `examples` whose prediction matches the gold label.
pub fn score_accuracy(model: &TrainedModel, examples: &[SequenceExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::data("no examples to score"));
    }
    let preds = model.predict(examples)?;
    let correct = preds.iter().zip(examples).filter(|(p, e)| p.pred == e.label).count();
    Ok(correct as f64 / examples.len() as f64)
}

/// Trains on `split.train` and returns validation accuracy (the random search objective).
pub fn validation_accuracy(kind: ModelKind, hp: &HyperParams, split: &DatasetSplit, res: &ModelResources) -> Result<f64> {
    let (model, _) = train_model(kind, split, hp, res)?;
    score_accuracy(&model, &split.validation)
}

pub fn gold_labels(examples: &[SequenceExample]) -> Vec<Label> {
    examples.iter().map(|e| e.label).collect()
}
