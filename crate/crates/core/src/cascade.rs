//! CASCADE: content CNN features concatenated with the fused user embedding
//! and the forum discourse vector, then one linear softmax layer.

use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::archive::{Archive, ArtifactRef};
use crate::corpus::{build_vocab, tokenize_pad, DatasetSplit, Label, SequenceExample, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::neural::{derive_seed, CnnCache, ContentCnn, Dense, Embedding, HasParams, HyperParams, Param};
use crate::profiles::ProfileStore;
use crate::training::{probs_from_logits, train_classifier, Classifier, Prediction, TrainConfig, TrainingLog};

pub const KIND: &str = "cascade";
const INIT_STREAM: u64 = 21;
const SHUFFLE_STREAM: u64 = 22;

/// Where the context half of the classifier input comes from.
#[derive(Debug, Clone)]
pub enum CascadeContext {
    /// No context block at all (the content path alone).
    ContentOnly,
    /// A `k + dt` context block that is always zero.
    Zeroed { k: usize, dt: usize },
    /// Looked up in fitted profiles; either half can be zeroed for ablations.
    Profiles { store: Arc<ProfileStore>, use_user: bool, use_forum: bool },
}

impl CascadeContext {
    pub fn profiles(store: Arc<ProfileStore>) -> Self {
        Self::Profiles { store, use_user: true, use_forum: true }
    }

    /// `(user, forum)` widths.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::ContentOnly => (0, 0),
            Self::Zeroed { k, dt } => (*k, *dt),
            Self::Profiles { store, .. } => (store.meta.k, store.meta.dt),
        }
    }

    fn manifest(&self, profiles: Option<&ArtifactRef>) -> serde_json::Value {
        let (k, dt) = self.dims();
        match self {
            Self::ContentOnly => serde_json::json!({ "mode": "content-only" }),
            Self::Zeroed { .. } => serde_json::json!({ "mode": "zeroed", "k": k, "dt": dt }),
            Self::Profiles { use_user, use_forum, .. } => serde_json::json!({
                "mode": "profiles", "k": k, "dt": dt,
                "use_user": use_user, "use_forum": use_forum, "profiles": profiles,
            }),
        }
    }
}

/// One example ready for the model: padded tokens plus context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeInput {
    pub seq: TokenSequence,
    pub user: Vec<f64>,
    pub forum: Vec<f64>,
    pub cold_start_user: bool,
    pub cold_start_forum: bool,
}

#[derive(Debug, Clone)]
struct Pass {
    emb: Array2<f64>,
    cnn: CnnCache,
    z: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct CascadeModel {
    pub hp: HyperParams,
    vocab: Vocabulary,
    context: CascadeContext,
    embedding: Embedding,
    cnn: ContentCnn,
    output: Dense,
    steps: u64,
    last: Option<Pass>,
}

impl CascadeModel {
    /// Seeded uniform(-init_scale, init_scale) weights, zero biases, zero pad row.
    pub fn new(vocab: Vocabulary, context: CascadeContext, hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hp.seed, INIT_STREAM));
        let (k, dt) = context.dims();
        let s = hp.init_scale;
        Ok(Self {
            embedding: Embedding::new("cascade.embedding", vocab.len(), hp.dem, s, &mut rng),
            cnn: ContentCnn::new("cascade.cnn", hp.ks, hp.dem, hp.m, hp.activation, s, &mut rng),
            output: Dense::new("cascade.output", hp.m + k + dt, 2, s, &mut rng),
            vocab,
            context,
            hp,
            steps: 0,
            last: None,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn context(&self) -> &CascadeContext {
        &self.context
    }

    /// Input width of the output projection, `M + K + dt`.
    pub fn projection_dim(&self) -> usize {
        self.output.input_dim()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn output_layer_mut(&mut self) -> &mut Dense {
        &mut self.output
    }

    pub fn prepare(&self, ex: &SequenceExample) -> Result<CascadeInput> {
        let seq = tokenize_pad(&ex.response, &self.vocab, self.hp.max_len)?;
        let (k, dt) = self.context.dims();
        let (user, cold_user, forum, cold_forum) = match &self.context {
            CascadeContext::ContentOnly => (vec![], false, vec![], false),
            CascadeContext::Zeroed { .. } => (vec![0.0; k], true, vec![0.0; dt], true),
            CascadeContext::Profiles { store, use_user, use_forum } => {
                let u = store.user_vector(&ex.author);
                let f = store.forum_vector(&ex.forum);
                let (u, cu) = if *use_user { (u.vector, u.cold_start) } else { (vec![0.0; k], true) };
                let (f, cf) = if *use_forum { (f.vector, f.cold_start) } else { (vec![0.0; dt], true) };
                (u, cu, f, cf)
            }
        };
        Ok(CascadeInput { seq, user, forum, cold_start_user: cold_user, cold_start_forum: cold_forum })
    }

    fn check(&self, seq: &TokenSequence, user: &[f64], forum: &[f64]) -> Result<()> {
        if seq.ids.len() != self.hp.max_len {
            return Err(Error::shape(format!(
                "cascade expects {} token ids, got {}",
                self.hp.max_len,
                seq.ids.len()
            )));
        }
        let (k, dt) = self.context.dims();
        if user.len() != k || forum.len() != dt {
            return Err(Error::shape(format!(
                "context vectors must be ({k}, {dt}) wide, got ({}, {})",
                user.len(),
                forum.len()
            )));
        }
        Ok(())
    }

    fn pass(&self, seq: &TokenSequence, user: &[f64], forum: &[f64]) -> Result<(Pass, [f64; 2])> {
        self.check(seq, user, forum)?;
        let emb = self.embedding.forward(&seq.ids)?;
        let (pooled, cnn) = self.cnn.forward(emb.view())?;
        let z = concatenate(Axis(0), &[pooled.view(), Array1::from(user.to_vec()).view(), Array1::from(forum.to_vec()).view()])
            .expect("1-D concatenation");
        let logits = self.output.forward_vec(z.view());
        Ok((Pass { emb, cnn, z }, [logits[0], logits[1]]))
    }

    /// `softmax(W' [cnn(embed(seq)), user, forum] + b)`.
    pub fn cascade_forward(&self, seq: &TokenSequence, user: &[f64], forum: &[f64]) -> Result<[f64; 2]> {
        Ok(probs_from_logits(&self.pass(seq, user, forum)?.1))
    }

    /// The `M` pooled content features of one padded sequence.
    pub fn content_features(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        if seq.ids.len() != self.hp.max_len {
            return Err(Error::shape(format!(
                "cascade expects {} token ids, got {}",
                self.hp.max_len,
                seq.ids.len()
            )));
        }
        let emb = self.embedding.forward(&seq.ids)?;
        Ok(self.cnn.forward(emb.view())?.0.to_vec())
    }

    /// Overwrites embedding rows from a whitespace-separated text table
    /// (`word v1 .. v_dem` per line; a two-field header line is skipped).
    /// Returns how many vocabulary words were found.
    pub fn load_word_vectors<R: BufRead>(&mut self, reader: R) -> Result<usize> {
        let dem = self.hp.dem;
        let mut found = 0;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: n + 1, message: format!("bad vector value: {e}") })?;
            if n == 0 && values.len() == 1 {
                continue;
            }
            if values.len() != dem {
                return Err(Error::Parse { line: n + 1, message: format!("expected {dem} values, got {}", values.len()) });
            }
            if let Some(id) = self.vocab.get(word) {
                let row = id as usize * dem;
                self.embedding.table.value[row..row + dem].copy_from_slice(&values);
                found += 1;
            }
        }
        Ok(found)
    }

    /// Checkpoint manifest fields and tensors, under archive kind `kind`.
    pub fn to_archive(&self, kind: &str, profiles: Option<&ArtifactRef>) -> Archive {
        let meta = serde_json::json!({
            "hyperparams": self.hp,
            "seed": self.hp.seed,
            "steps": self.steps,
            "vocab": self.vocab,
            "context": self.context.manifest(profiles),
        });
        let mut archive = Archive::new(kind, meta);
        self.write_blocks(&mut archive);
        archive
    }

    /// Writes the checkpoint; `profiles` pins the profile archive this model reads.
    pub fn save(&self, path: &Path, profiles: Option<&ArtifactRef>) -> Result<()> {
        self.to_archive(KIND, profiles).write(path)
    }

    /// Loads a checkpoint. Profile-backed models use `store` when given,
    /// otherwise the profile archive recorded at save time (hash-checked).
    pub fn load(path: &Path, store: Option<Arc<ProfileStore>>) -> Result<Self> {
        Self::from_archive(&Archive::read_kind(path, KIND)?, path, store)
    }

    /// Rebuilds a model from an archive written by [`CascadeModel::to_archive`].
    pub fn from_archive(archive: &Archive, path: &Path, store: Option<Arc<ProfileStore>>) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        let hp: HyperParams = serde_json::from_value(archive.meta["hyperparams"].clone())?;
        let vocab: Vocabulary = serde_json::from_value(archive.meta["vocab"].clone())?;
        let ctx = &archive.meta["context"];
        let dim = |key: &str| ctx[key].as_u64().map(|v| v as usize).ok_or_else(|| bad(format!("context.{key} missing")));
        let context = match ctx["mode"].as_str() {
            Some("content-only") => CascadeContext::ContentOnly,
            Some("zeroed") => CascadeContext::Zeroed { k: dim("k")?, dt: dim("dt")? },
            Some("profiles") => {
                let store = match store {
                    Some(s) => s,
                    None => Arc::new(load_referenced_profiles(&ctx["profiles"], path)?),
                };
                if (store.meta.k, store.meta.dt) != (dim("k")?, dim("dt")?) {
                    return Err(bad("profile dimensions do not match the checkpoint".into()));
                }
                CascadeContext::Profiles {
                    store,
                    use_user: ctx["use_user"].as_bool().unwrap_or(true),
                    use_forum: ctx["use_forum"].as_bool().unwrap_or(true),
                }
            }
            other => return Err(bad(format!("unknown context mode {other:?}"))),
        };
        let mut model = Self::new(vocab, context, hp)?;
        model.load_blocks(archive).map_err(bad)?;
        model.steps = archive.meta["steps"].as_u64().unwrap_or(0);
        Ok(model)
    }
}

/// Loads the profile archive a checkpoint manifest points at, checking its hash.
pub fn load_referenced_profiles(reference: &serde_json::Value, checkpoint: &Path) -> Result<ProfileStore> {
    let reference: Option<ArtifactRef> = serde_json::from_value(reference.clone())?;
    let reference = reference.ok_or_else(|| Error::Checkpoint {
        path: checkpoint.to_path_buf(),
        message: "no profile archive recorded; pass one explicitly".into(),
    })?;
    ProfileStore::load(&reference.resolve(checkpoint.parent().unwrap_or(Path::new("")))?)
}

impl HasParams for CascadeModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.embedding.params();
        v.extend(self.cnn.params());
        v.extend(self.output.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embedding.params_mut();
        v.extend(self.cnn.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}

impl Classifier for CascadeModel {
    type Input = CascadeInput;

    fn probs(&self, x: &CascadeInput) -> Result<[f64; 2]> {
        self.cascade_forward(&x.seq, &x.user, &x.forum)
    }

    fn forward_train(&mut self, x: &CascadeInput, _seed: u64) -> Result<[f64; 2]> {
        let (pass, logits) = self.pass(&x.seq, &x.user, &x.forum)?;
        self.last = Some(pass);
        Ok(logits)
    }

    fn backward_last(&mut self, x: &CascadeInput, dlogits: &[f64]) -> Result<()> {
        let pass = self.last.take().ok_or_else(|| Error::Training("backward without forward".into()))?;
        let dz = self.output.backward_vec(pass.z.view(), Array1::from(dlogits.to_vec()).view());
        let dpooled = dz.slice(ndarray::s![..self.hp.m]).to_vec();
        let demb = self.cnn.backward(pass.emb.view(), &pass.cnn, &dpooled);
        self.embedding.backward(&x.seq.ids, demb.view());
        Ok(())
    }
}

/// Trains on `split.train`, selecting the epoch with the best validation accuracy.
pub fn cascade_train(split: &DatasetSplit, context: CascadeContext, hp: &HyperParams) -> Result<(CascadeModel, TrainingLog)> {
    let vocab = build_vocab(&split.train, hp.min_freq)?;
    let mut model = CascadeModel::new(vocab, context, hp.clone())?;
    let train = prepare_all(&model, &split.train)?;
    let validation = prepare_all(&model, &split.validation)?;
    let log = train_classifier(&mut model, &train, &validation, &TrainConfig::from_hp(hp, derive_seed(hp.seed, SHUFFLE_STREAM)))?;
    model.steps = log.steps;
    Ok((model, log))
}

fn prepare_all(model: &CascadeModel, examples: &[SequenceExample]) -> Result<Vec<(CascadeInput, Label)>> {
    examples.par_iter().map(|ex| Ok((model.prepare(ex)?, ex.label))).collect()
}

/// Scores examples in parallel; output order follows input order.
pub fn cascade_predict(model: &CascadeModel, examples: &[SequenceExample]) -> Result<Vec<Prediction>> {
    examples
        .par_iter()
        .map(|ex| {
            let input = model.prepare(ex)?;
            let mut p = Prediction::from_probs(&ex.id, model.probs(&input)?);
            if !matches!(model.context, CascadeContext::ContentOnly) {
                p.cold_start_user = Some(input.cold_start_user);
                p.cold_start_forum = Some(input.cold_start_forum);
            }
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::balanced_split;
    use crate::neural::{grad_check, softmax_cross_entropy};
    use crate::training::{accuracy_of, predict_label};
    use proptest::prelude::*;

    fn tiny_hp() -> HyperParams {
        HyperParams { dem: 6, m: 5, ks: 2, max_len: 8, k: 3, dt: 2, epochs: 3, ..HyperParams::cnn_preset() }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::fit(["the marker is here", "nothing to see"], 1).unwrap()
    }

    fn ex(id: usize, text: &str, label: Label) -> SequenceExample {
        SequenceExample {
            id: format!("x{id}"),
            author: format!("a{}", id % 4),
            forum: "f".into(),
            ancestors: vec![],
            response: text.into(),
            label,
        }
    }

    #[test]
    fn projection_width_is_m_plus_context() {
        let m = CascadeModel::new(vocab(), CascadeContext::Zeroed { k: 100, dt: 100 }, HyperParams { dem: 4, ..HyperParams::cnn_preset() }).unwrap();
        assert_eq!(m.projection_dim(), 328);
    }

    #[test]
    fn zero_projection_gives_uniform_probs() {
        let mut m = CascadeModel::new(vocab(), CascadeContext::Zeroed { k: 3, dt: 2 }, tiny_hp()).unwrap();
        let width = m.projection_dim();
        *m.output_layer_mut() = Dense::zeros("cascade.output", width, 2);
        let input = m.prepare(&ex(0, "the marker", Label::Sarcastic)).unwrap();
        assert_eq!(m.probs(&input).unwrap(), [0.5, 0.5]);
        assert_eq!(predict_label([0.5, 0.5]), Label::NonSarcastic);
    }

    #[test]
    fn rejects_wrong_lengths_and_dims() {
        let m = CascadeModel::new(vocab(), CascadeContext::Zeroed { k: 3, dt: 2 }, tiny_hp()).unwrap();
        let short = TokenSequence::from_ids(vec![2, 3], 5).unwrap();
        assert!(m.cascade_forward(&short, &[0.0; 3], &[0.0; 2]).is_err());
        let ok = TokenSequence::from_ids(vec![2, 3], 8).unwrap();
        assert!(m.cascade_forward(&ok, &[0.0; 4], &[0.0; 2]).is_err());
        assert!(m.cascade_forward(&ok, &[0.0; 3], &[0.0; 2]).is_ok());
    }

    #[test]
    fn cold_start_inputs_depend_only_on_content() {
        let m = CascadeModel::new(vocab(), CascadeContext::Zeroed { k: 3, dt: 2 }, tiny_hp()).unwrap();
        let a = ex(1, "nothing to see", Label::Sarcastic);
        let mut b = ex(2, "nothing to see", Label::NonSarcastic);
        b.author = "someone else".into();
        let preds = cascade_predict(&m, &[a, b]).unwrap();
        assert_eq!(preds[0].p_sarcastic, preds[1].p_sarcastic);
        assert_eq!(preds[0].cold_start_user, Some(true));
    }

    #[test]
    fn gradient_check_three_seeds() {
        for seed in 0..3 {
            let hp = HyperParams { seed, init_scale: 0.5, ..tiny_hp() };
            let mut m = CascadeModel::new(vocab(), CascadeContext::Zeroed { k: 3, dt: 2 }, hp).unwrap();
            // Full length, so the frozen pad row never enters the loss.
            let mut input = m.prepare(&ex(0, "the marker is here nothing to see the", Label::Sarcastic)).unwrap();
            input.user = vec![0.3, -0.2, 0.5];
            input.forum = vec![-0.4, 0.1];
            let r = grad_check(
                &mut m,
                |m, backward| {
                    let logits = m.forward_train(&input, 0).unwrap();
                    let (loss, d) = softmax_cross_entropy(&logits, 1);
                    if backward {
                        m.backward_last(&input, &d).unwrap();
                    }
                    loss
                },
                1e-5,
                200,
                seed,
            );
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }

    fn marker_split() -> DatasetSplit {
        let fill = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        let examples: Vec<_> = (0..64)
            .map(|i| {
                let s = i % 2 == 0;
                let text = format!("{} {} {}", fill[i % 8], if s { "marker" } else { fill[(i / 2) % 8] }, fill[(i * 3) % 8]);
                ex(i, &text, if s { Label::Sarcastic } else { Label::NonSarcastic })
            })
            .collect();
        balanced_split(&examples, 0.0, 0.0, 0).unwrap()
    }

    #[test]
    fn overfits_marker_corpus_and_is_deterministic() {
        let split = marker_split();
        let hp = HyperParams { dem: 16, m: 16, max_len: 10, epochs: 30, batch_size: 8, ..HyperParams::cnn_preset() };
        let ctx = CascadeContext::Zeroed { k: 4, dt: 4 };
        let (model, log) = cascade_train(&split, ctx.clone(), &hp).unwrap();
        let data = prepare_all(&model, &split.train).unwrap();
        assert!(accuracy_of(&model, &data).unwrap() >= 0.95, "{log:?}");
        assert!((log.first_batch_loss - std::f64::consts::LN_2).abs() < 0.1);
        let (again, _) = cascade_train(&split, ctx, &hp).unwrap();
        assert_eq!(model.flat_values(), again.flat_values());
    }

    #[test]
    fn checkpoint_round_trip() {
        let split = marker_split();
        let hp = HyperParams { dem: 8, m: 8, max_len: 10, epochs: 2, ..HyperParams::cnn_preset() };
        let (model, _) = cascade_train(&split, CascadeContext::Zeroed { k: 2, dt: 2 }, &hp).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        model.save(&path, None).unwrap();
        let loaded = CascadeModel::load(&path, None).unwrap();
        assert_eq!(loaded.steps(), model.steps());
        let a = cascade_predict(&model, &split.test).unwrap();
        let b = cascade_predict(&loaded, &split.test).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.p_sarcastic - y.p_sarcastic).abs() < 1e-4);
        }
    }

    #[test]
    fn word_vectors_fill_known_rows() {
        let mut m = CascadeModel::new(vocab(), CascadeContext::ContentOnly, tiny_hp()).unwrap();
        let table = "2 6\nmarker 1 2 3 4 5 6\nunseen 0 0 0 0 0 0\n";
        assert_eq!(m.load_word_vectors(table.as_bytes()).unwrap(), 1);
        let bad = "marker 1 2\n";
        assert!(m.load_word_vectors(bad.as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn probabilities_sum_to_one(seed in any::<u64>(), scale in 0.01f64..2.0) {
            let hp = HyperParams { seed, init_scale: scale, ..tiny_hp() };
            let m = CascadeModel::new(vocab(), CascadeContext::Zeroed { k: 3, dt: 2 }, hp).unwrap();
            let input = m.prepare(&ex(0, "the marker is here", Label::Sarcastic)).unwrap();
            let p = m.probs(&input).unwrap();
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        }

        #[test]
        fn batch_equals_single(n in 1usize..12) {
            let m = CascadeModel::new(vocab(), CascadeContext::Zeroed { k: 3, dt: 2 }, tiny_hp()).unwrap();
            let exs: Vec<_> = (0..n).map(|i| ex(i, if i % 3 == 0 { "the marker" } else { "nothing to see here" }, Label::Sarcastic)).collect();
            let batch = cascade_predict(&m, &exs).unwrap();
            for (e, p) in exs.iter().zip(&batch) {
                prop_assert_eq!(&cascade_predict(&m, std::slice::from_ref(e)).unwrap()[0], p);
            }
        }
    }
}
