//! Contextual features for CASCADE: per-user stylometric and personality
//! embeddings fused with CCA, and per-forum discourse vectors.
//!
//! Only training-split comments feed the profiles. Users and forums unseen at
//! build time resolve to zero vectors and are flagged as cold starts.

mod cca;
mod paragraph;
mod personality;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cca::{cca_fit, fuse_user_embedding, CcaProjection};
pub use paragraph::{cosine, train_paragraph_vectors, DocEmbeddings, PvConfig};
pub use personality::{
    personality_vector, CnnScorerConfig, CnnTraitScorer, LexiconScorer, PersonalityScorer, TraitExample, TRAITS,
};

use crate::archive::{Archive, TensorBlock};
use crate::corpus::{tokenize, SequenceExample};
use crate::error::{Error, Result};
use crate::neural::{derive_seed, HyperParams};

const STYLE_STREAM: u64 = 11;
const DISCOURSE_STREAM: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub stylometric: Vec<f64>,
    pub personality: Vec<f64>,
    /// Set once CCA has been fitted.
    pub fused: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumProfile {
    pub id: String,
    pub discourse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub ds: usize,
    pub dp: usize,
    pub dt: usize,
    pub k: usize,
    pub seed: u64,
    pub cca_reg: f64,
    pub pv_epochs: usize,
    pub pv_negative: usize,
    pub scorer: String,
    pub excluded_users: Vec<String>,
    pub excluded_forums: Vec<String>,
}

/// Fitted, immutable contextual tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStore {
    pub users: BTreeMap<String, UserProfile>,
    pub forums: BTreeMap<String, ForumProfile>,
    pub cca: CcaProjection,
    pub meta: ProfileMeta,
}

/// A looked-up context vector and whether it fell back to zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub vector: Vec<f64>,
    pub cold_start: bool,
}

impl ProfileStore {
    fn lookup<T>(table: &BTreeMap<String, T>, id: &str, dim: usize, get: impl Fn(&T) -> Option<&Vec<f64>>) -> Lookup {
        match table.get(id).and_then(get) {
            Some(v) => Lookup { vector: v.clone(), cold_start: false },
            None => Lookup { vector: vec![0.0; dim], cold_start: true },
        }
    }

    /// Fused `K`-dimensional user embedding.
    pub fn user_vector(&self, user: &str) -> Lookup {
        Self::lookup(&self.users, user, self.meta.k, |u| u.fused.as_ref())
    }

    /// Raw `ds`-dimensional stylometric vector.
    pub fn stylometric(&self, user: &str) -> Lookup {
        Self::lookup(&self.users, user, self.meta.ds, |u| Some(&u.stylometric))
    }

    pub fn forum_vector(&self, forum: &str) -> Lookup {
        Self::lookup(&self.forums, forum, self.meta.dt, |f| Some(&f.discourse))
    }

    /// Width of `[user_vector, forum_vector]`.
    pub fn context_dim(&self) -> usize {
        self.meta.k + self.meta.dt
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let user_ids: Vec<&String> = self.users.keys().collect();
        let forum_ids: Vec<&String> = self.forums.keys().collect();
        let meta = serde_json::json!({
            "profile": self.meta,
            "user_ids": user_ids,
            "forum_ids": forum_ids,
            "counts": { "users": user_ids.len(), "forums": forum_ids.len() },
            "cca_correlations": self.cca.correlations,
        });
        let mut archive = Archive::new("profiles", meta);
        let rows = |name: &str, width: usize, vecs: Vec<&Vec<f64>>| {
            let flat: Vec<f64> = vecs.into_iter().flatten().copied().collect();
            TensorBlock::from_f64(name, vec![flat.len() / width.max(1), width], &flat)
        };
        let users: Vec<&UserProfile> = self.users.values().collect();
        archive.push(rows("user_stylometric", self.meta.ds, users.iter().map(|u| &u.stylometric).collect()));
        archive.push(rows("user_personality", self.meta.dp, users.iter().map(|u| &u.personality).collect()));
        let fused: Vec<Vec<f64>> = users
            .iter()
            .map(|u| u.fused.clone().unwrap_or_else(|| vec![0.0; self.meta.k]))
            .collect();
        archive.push(rows("user_fused", self.meta.k, fused.iter().collect()));
        archive.push(TensorBlock::from_f64("cca_wx", self.cca.wx.shape().to_vec(), self.cca.wx.as_standard_layout().as_slice().unwrap()));
        archive.push(TensorBlock::from_f64("cca_wy", self.cca.wy.shape().to_vec(), self.cca.wy.as_standard_layout().as_slice().unwrap()));
        archive.push(TensorBlock::from_f64("cca_x_mean", vec![self.meta.ds], self.cca.x_mean.as_slice().unwrap()));
        archive.push(TensorBlock::from_f64("cca_y_mean", vec![self.meta.dp], self.cca.y_mean.as_slice().unwrap()));
        archive.push(rows("forum_discourse", self.meta.dt, self.forums.values().map(|f| &f.discourse).collect()));
        archive.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::read_kind(path, "profiles")?;
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        let meta: ProfileMeta = serde_json::from_value(archive.meta["profile"].clone())?;
        let user_ids: Vec<String> = serde_json::from_value(archive.meta["user_ids"].clone())?;
        let forum_ids: Vec<String> = serde_json::from_value(archive.meta["forum_ids"].clone())?;
        let correlations: Vec<f64> = serde_json::from_value(archive.meta["cca_correlations"].clone())?;
        let (nu, nf) = (user_ids.len(), forum_ids.len());
        let table = |name: &str, rows: usize, width: usize| -> Result<Vec<Vec<f64>>> {
            let data = archive.tensor(name, &[rows, width]).map_err(bad)?.to_f64();
            Ok(data.chunks(width.max(1)).map(<[f64]>::to_vec).take(rows).collect())
        };
        let style = table("user_stylometric", nu, meta.ds)?;
        let pers = table("user_personality", nu, meta.dp)?;
        let fused = table("user_fused", nu, meta.k)?;
        let disc = table("forum_discourse", nf, meta.dt)?;
        let matrix = |name: &str, r: usize, c: usize| -> Result<Array2<f64>> {
            let data = archive.tensor(name, &[r, c]).map_err(bad)?.to_f64();
            Ok(Array2::from_shape_vec((r, c), data).expect("shape checked"))
        };
        let vector = |name: &str, n: usize| -> Result<Array1<f64>> {
            Ok(Array1::from(archive.tensor(name, &[n]).map_err(bad)?.to_f64()))
        };
        let cca = CcaProjection {
            wx: matrix("cca_wx", meta.ds, meta.k)?,
            wy: matrix("cca_wy", meta.dp, meta.k)?,
            correlations,
            reg: meta.cca_reg,
            x_mean: vector("cca_x_mean", meta.ds)?,
            y_mean: vector("cca_y_mean", meta.dp)?,
        };
        let users = user_ids
            .into_iter()
            .zip(style.into_iter().zip(pers).zip(fused))
            .map(|(id, ((stylometric, personality), fused))| {
                (id.clone(), UserProfile { id, stylometric, personality, fused: Some(fused) })
            })
            .collect();
        let forums = forum_ids
            .into_iter()
            .zip(disc)
            .map(|(id, discourse)| (id.clone(), ForumProfile { id, discourse }))
            .collect();
        Ok(Self { users, forums, cca, meta })
    }
}

/// Each author's training-split responses, in input order.
pub fn user_histories(train: &[SequenceExample]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ex in train {
        out.entry(ex.author.clone()).or_default().push(ex.response.clone());
    }
    out
}

/// Each forum's comments: every ancestor and response seen in training.
pub fn forum_documents(train: &[SequenceExample]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ex in train {
        let doc = out.entry(ex.forum.clone()).or_default();
        doc.extend(ex.ancestors.iter().cloned());
        doc.push(ex.response.clone());
    }
    out
}

fn pv_config(hp: &HyperParams, dim: usize, stream: u64) -> PvConfig {
    PvConfig {
        learning_rate: hp.pv_learning_rate,
        ..PvConfig::new(dim, hp.pv_epochs, hp.pv_negative, derive_seed(hp.seed, stream))
    }
}

/// Concatenates each group's comments into one document and embeds it.
/// Groups with no tokens are returned in the exclusion list.
fn embed_groups(
    groups: &BTreeMap<String, Vec<String>>,
    cfg: &PvConfig,
) -> Result<(BTreeMap<String, Vec<f64>>, Vec<String>)> {
    let mut docs = BTreeMap::new();
    let mut excluded = Vec::new();
    for (id, comments) in groups {
        let tokens: Vec<String> = comments.iter().flat_map(|c| tokenize(c)).collect();
        if tokens.is_empty() {
            excluded.push(id.clone());
        } else {
            docs.insert(id.clone(), tokens);
        }
    }
    if docs.is_empty() {
        return Ok((BTreeMap::new(), excluded));
    }
    Ok((train_paragraph_vectors(&docs, cfg)?.to_map(), excluded))
}

/// `ds`-dimensional writing-style vector per user, plus users excluded for
/// having no history.
pub fn user_stylometric(
    histories: &BTreeMap<String, Vec<String>>,
    hp: &HyperParams,
) -> Result<(BTreeMap<String, Vec<f64>>, Vec<String>)> {
    embed_groups(histories, &pv_config(hp, hp.ds, STYLE_STREAM))
}

/// `dt`-dimensional discourse vector per forum, plus forums excluded for
/// having no comments.
pub fn forum_discourse(
    forum_docs: &BTreeMap<String, Vec<String>>,
    hp: &HyperParams,
) -> Result<(BTreeMap<String, Vec<f64>>, Vec<String>)> {
    embed_groups(forum_docs, &pv_config(hp, hp.dt, DISCOURSE_STREAM))
}

/// Builds every profile table from the training split.
pub fn build_profiles(train: &[SequenceExample], hp: &HyperParams, scorer: &dyn PersonalityScorer) -> Result<ProfileStore> {
    hp.validate()?;
    if scorer.dim() != hp.dp {
        return Err(Error::HyperParams(format!(
            "personality scorer `{}` produces {} values but dp = {}",
            scorer.name(),
            scorer.dim(),
            hp.dp
        )));
    }
    let histories = user_histories(train);
    let forum_docs = forum_documents(train);

    let (style, discourse) = rayon::join(|| user_stylometric(&histories, hp), || forum_discourse(&forum_docs, hp));
    let (style, mut excluded_users) = style?;
    let (discourse, excluded_forums) = discourse?;

    // Ordered collect keeps the result independent of scheduling.
    let personality: Vec<(String, Vec<f64>)> = style
        .keys()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|id| Ok(((*id).clone(), personality_vector(&histories[*id], scorer)?)))
        .collect::<Result<_>>()?;
    if style.len() < 2 {
        return Err(Error::data(format!(
            "CCA needs at least 2 users with history, found {}",
            style.len()
        )));
    }

    let ids: Vec<&String> = style.keys().collect();
    let x = Array2::from_shape_fn((ids.len(), hp.ds), |(i, j)| style[ids[i]][j]);
    let y = Array2::from_shape_fn((ids.len(), hp.dp), |(i, j)| personality[i].1[j]);
    let cca = cca_fit(x.view(), y.view(), hp.k, hp.cca_reg)?;

    let mut users = BTreeMap::new();
    for (id, pers) in personality {
        let stylometric = style[&id].clone();
        let fused = cca.fuse(&stylometric, &pers)?;
        if fused.iter().chain(&pers).any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite profile for user `{id}`")));
        }
        users.insert(id.clone(), UserProfile { id, stylometric, personality: pers, fused: Some(fused) });
    }
    excluded_users.sort();
    let forums = discourse
        .into_iter()
        .map(|(id, discourse)| (id.clone(), ForumProfile { id, discourse }))
        .collect();
    Ok(ProfileStore {
        users,
        forums,
        cca,
        meta: ProfileMeta {
            ds: hp.ds,
            dp: hp.dp,
            dt: hp.dt,
            k: hp.k,
            seed: hp.seed,
            cca_reg: hp.cca_reg,
            pv_epochs: hp.pv_epochs,
            pv_negative: hp.pv_negative,
            scorer: scorer.name(),
            excluded_users,
            excluded_forums,
        },
    })
}
