//! RCNN over contextual token embeddings: encoder, BiLSTM, concatenation
//! with the encoder outputs, position-wise feedforward, max-over-time
//! pooling, softmax.
//!
//! The LSTM consumes the encoder outputs (the standard RCNN reading).

mod bpe;
mod encoder;

use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use bpe::ByteBpe;
pub use encoder::{
    load_encoder_weights, pretrained_dir, save_encoder_weights, ContextualEncoder, EncoderDescriptor, EncoderSpec,
    MiniConfig, MiniEncoder, PretrainedEncoder, CACHE_ENV,
};

use crate::archive::{Archive, ArtifactRef};
use crate::corpus::{DatasetSplit, Label, SequenceExample, TokenSequence};
use crate::error::{Error, Result};
use crate::neural::transformer::TransformerCache;
use crate::neural::{derive_seed, max_over_time, BiLstm, BiLstmCache, Dense, HasParams, HyperParams, Param};
use crate::training::{probs_from_logits, train_classifier, Classifier, Prediction, TrainConfig, TrainingLog};

pub const KIND: &str = "rcnn";
const INIT_STREAM: u64 = 31;
const SHUFFLE_STREAM: u64 = 32;

/// A padded sequence, plus its encoder output when the encoder is frozen.
#[derive(Debug, Clone)]
pub struct RcnnInput {
    pub seq: TokenSequence,
    pub encoded: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct HeadPass {
    emb: Array2<f64>,
    lstm: BiLstmCache,
    z: Array2<f64>,
    pre: Array2<f64>,
    pooled: Array1<f64>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RcnnModel {
    pub hp: HyperParams,
    encoder: Box<dyn ContextualEncoder>,
    bilstm: BiLstm,
    ffn: Dense,
    output: Dense,
    steps: u64,
    last: Option<(HeadPass, Option<TransformerCache>)>,
}

impl RcnnModel {
    pub fn new(encoder: Box<dyn ContextualEncoder>, hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hp.seed, INIT_STREAM));
        let d = encoder.d_model();
        let bilstm = BiLstm::new("rcnn.bilstm", d, hp.lstm_units, hp.lstm_dropout, hp.init_scale, &mut rng);
        let ffn = Dense::new("rcnn.ffn", d + bilstm.output_dim(), hp.ffn_width, hp.init_scale, &mut rng);
        let output = Dense::new("rcnn.output", hp.ffn_width, 2, hp.init_scale, &mut rng);
        Ok(Self { hp, encoder, bilstm, ffn, output, steps: 0, last: None })
    }

    pub fn encoder(&self) -> &dyn ContextualEncoder {
        self.encoder.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Input width of the feedforward, `d_model + 2 * lstm_units`.
    pub fn ffn_input_dim(&self) -> usize {
        self.ffn.input_dim()
    }

    /// Zeroes the BiLSTM, feedforward and output parameters.
    pub fn zero_head(&mut self) {
        for p in self.head_params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn head_params(&self) -> Vec<&Param> {
        let mut v = self.bilstm.params();
        v.extend(self.ffn.params());
        v.extend(self.output.params());
        v
    }

    fn head_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.bilstm.params_mut();
        v.extend(self.ffn.params_mut());
        v.extend(self.output.params_mut());
        v
    }

    pub fn prepare_text(&self, text: &str) -> Result<RcnnInput> {
        let seq = self.encoder.tokenize(text, self.hp.max_len)?;
        let encoded = if self.hp.freeze_encoder { Some(self.encoder.encode_ids(&seq)?) } else { None };
        Ok(RcnnInput { seq, encoded })
    }

    pub fn prepare(&self, ex: &SequenceExample) -> Result<RcnnInput> {
        self.prepare_text(&ex.response)
    }

    fn check(&self, seq: &TokenSequence) -> Result<()> {
        if seq.ids.len() != self.hp.max_len {
            return Err(Error::shape(format!("rcnn expects {} token ids, got {}", self.hp.max_len, seq.ids.len())));
        }
        Ok(())
    }

    fn head(&self, emb: ArrayView2<'_, f64>, train: bool, seed: u64) -> Result<(HeadPass, [f64; 2])> {
        if emb.ncols() != self.encoder.d_model() {
            return Err(Error::shape(format!(
                "embedding width {} does not match d_model {}",
                emb.ncols(),
                self.encoder.d_model()
            )));
        }
        let (h, lstm) = self.bilstm.forward(emb, train, seed)?;
        let z = concatenate(Axis(1), &[h.view(), emb]).expect("same row count");
        let pre = self.ffn.forward(z.view());
        let act = self.hp.ffn_activation;
        let u = pre.mapv(|v| act.apply(v));
        let (pooled, argmax) = max_over_time(u.view());
        let pooled = Array1::from(pooled);
        let logits = self.output.forward_vec(pooled.view());
        Ok((HeadPass { emb: emb.to_owned(), lstm, z, pre, pooled, argmax }, [logits[0], logits[1]]))
    }

    /// Class probabilities for an encoded `T x d_model` matrix.
    pub fn rcnn_forward(&self, emb: ArrayView2<'_, f64>, train: bool, seed: u64) -> Result<[f64; 2]> {
        Ok(probs_from_logits(&self.head(emb, train, seed)?.1))
    }

    fn encoded(&self, x: &RcnnInput) -> Result<Array2<f64>> {
        self.check(&x.seq)?;
        match &x.encoded {
            Some(e) => Ok(e.clone()),
            None => self.encoder.encode_ids(&x.seq),
        }
    }

    /// Gradient of the loss w.r.t. the encoder outputs.
    fn backward_head(&mut self, pass: &HeadPass, dlogits: &[f64]) -> Array2<f64> {
        let dpooled = self.output.backward_vec(pass.pooled.view(), Array1::from(dlogits.to_vec()).view());
        let act = self.hp.ffn_activation;
        let mut dpre = Array2::zeros(pass.pre.raw_dim());
        for (c, &t) in pass.argmax.iter().enumerate() {
            dpre[[t, c]] = dpooled[c] * act.derivative(pass.pre[[t, c]]);
        }
        let dz = self.ffn.backward(pass.z.view(), dpre.view());
        let units2 = self.bilstm.output_dim();
        let dh = dz.slice(s![.., ..units2]);
        let mut demb = dz.slice(s![.., units2..]).to_owned();
        demb += &self.bilstm.backward(pass.emb.view(), &pass.lstm, dh);
        demb
    }

    /// Writes the checkpoint. A fine-tuned encoder goes to a sidecar archive
    /// next to `path`, referenced by path and content hash.
    pub fn save(&self, path: &Path) -> Result<()> {
        let encoder_weights = if self.hp.freeze_encoder {
            None
        } else {
            Some(save_encoder_weights(self.encoder.as_ref(), &sidecar_path(path))?)
        };
        let meta = serde_json::json!({
            "hyperparams": self.hp,
            "seed": self.hp.seed,
            "steps": self.steps,
            "encoder": self.encoder.spec(),
            "encoder_descriptor": self.encoder.descriptor(),
            "encoder_weights": encoder_weights,
        });
        let mut archive = Archive::new(KIND, meta);
        for p in self.head_params() {
            archive.push(p.to_block());
        }
        archive.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::read_kind(path, KIND)?;
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        let hp: HyperParams = serde_json::from_value(archive.meta["hyperparams"].clone())?;
        let spec: EncoderSpec = serde_json::from_value(archive.meta["encoder"].clone())?;
        let weights: Option<ArtifactRef> = serde_json::from_value(archive.meta["encoder_weights"].clone())?;
        let mut encoder = spec.build()?;
        if let Some(w) = &weights {
            load_encoder_weights(encoder.as_mut(), w, path.parent().unwrap_or(Path::new("")))?;
        }
        let mut model = Self::new(encoder, hp)?;
        for p in model.head_params_mut() {
            p.load_from(&archive).map_err(bad)?;
        }
        model.steps = archive.meta["steps"].as_u64().unwrap_or(0);
        Ok(model)
    }
}

/// Where a checkpoint's fine-tuned encoder weights live.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".encoder");
    checkpoint.with_file_name(name)
}

impl HasParams for RcnnModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.head_params();
        if !self.hp.freeze_encoder {
            v.extend(self.encoder.network().params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let freeze = self.hp.freeze_encoder;
        let mut v = self.bilstm.params_mut();
        v.extend(self.ffn.params_mut());
        v.extend(self.output.params_mut());
        if !freeze {
            v.extend(self.encoder.network_mut().params_mut());
        }
        v
    }
}

impl Classifier for RcnnModel {
    type Input = RcnnInput;

    fn probs(&self, x: &RcnnInput) -> Result<[f64; 2]> {
        let emb = self.encoded(x)?;
        self.rcnn_forward(emb.view(), false, 0)
    }

    fn forward_train(&mut self, x: &RcnnInput, seed: u64) -> Result<[f64; 2]> {
        self.check(&x.seq)?;
        let (emb, cache) = match &x.encoded {
            Some(e) => (e.clone(), None),
            None => {
                let (e, c) = self.encoder.network().forward(x.seq.tokens())?;
                (e, Some(c))
            }
        };
        let (pass, logits) = self.head(emb.view(), true, seed)?;
        self.last = Some((pass, cache));
        Ok(logits)
    }

    fn backward_last(&mut self, _x: &RcnnInput, dlogits: &[f64]) -> Result<()> {
        let (pass, cache) = self.last.take().ok_or_else(|| Error::Training("backward without forward".into()))?;
        let demb = self.backward_head(&pass, dlogits);
        if let (Some(cache), false) = (cache, self.hp.freeze_encoder) {
            self.encoder.network_mut().backward(&cache, demb.view());
        }
        Ok(())
    }
}

fn prepare_all(model: &RcnnModel, examples: &[SequenceExample]) -> Result<Vec<(RcnnInput, Label)>> {
    examples.par_iter().map(|ex| Ok((model.prepare(ex)?, ex.label))).collect()
}

/// Trains the head (and the encoder unless `hp.freeze_encoder`), keeping the
/// best validation epoch.
pub fn rcnn_train(split: &DatasetSplit, encoder: Box<dyn ContextualEncoder>, hp: &HyperParams) -> Result<(RcnnModel, TrainingLog)> {
    let mut model = RcnnModel::new(encoder, hp.clone())?;
    let train = prepare_all(&model, &split.train)?;
    let validation = prepare_all(&model, &split.validation)?;
    let log = train_classifier(&mut model, &train, &validation, &TrainConfig::from_hp(hp, derive_seed(hp.seed, SHUFFLE_STREAM)))?;
    model.steps = log.steps;
    Ok((model, log))
}

/// Eval-mode scoring in parallel; output order follows input order.
pub fn rcnn_predict(model: &RcnnModel, examples: &[SequenceExample]) -> Result<Vec<Prediction>> {
    examples
        .par_iter()
        .map(|ex| Ok(Prediction::from_probs(&ex.id, model.probs(&model.prepare(ex)?)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::balanced_split;
    use crate::neural::{grad_check, softmax_cross_entropy};
    use crate::training::accuracy_of;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_encoder(seed: u64, d: usize) -> Box<dyn ContextualEncoder> {
        Box::new(
            MiniEncoder::new(MiniConfig { seed, buckets: 64, d_model: d, layers: 1, heads: 2, intermediate: 8, max_positions: 32 })
                .unwrap(),
        )
    }

    fn small_hp(seed: u64) -> HyperParams {
        HyperParams { lstm_units: 3, ffn_width: 6, max_len: 12, seed, init_scale: 0.5, ..HyperParams::default() }
    }

    #[test]
    fn ffn_input_is_d_model_plus_two_units() {
        let m = RcnnModel::new(Box::new(MiniEncoder::with_seed(0).unwrap()), HyperParams::default()).unwrap();
        assert_eq!(m.ffn_input_dim(), 32 + 128);
    }

    #[test]
    fn zero_head_gives_uniform_probs() {
        let mut m = RcnnModel::new(small_encoder(0, 8), small_hp(0)).unwrap();
        m.zero_head();
        let x = m.prepare_text("whatever you say").unwrap();
        assert_eq!(m.probs(&x).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn head_gradient_check_three_seeds() {
        for seed in 0..3 {
            let mut m = RcnnModel::new(small_encoder(seed, 8), HyperParams { lstm_dropout: 0.0, freeze_encoder: true, ..small_hp(seed) }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let emb = Array2::from_shape_simple_fn((5, 8), || rng.gen_range(-1.0..1.0));
            let x = RcnnInput { seq: TokenSequence::from_ids(vec![1; 5], 12).unwrap(), encoded: Some(emb) };
            let r = grad_check(
                &mut m,
                |m, backward| {
                    let logits = m.forward_train(&x, 0).unwrap();
                    let (loss, d) = softmax_cross_entropy(&logits, 0);
                    if backward {
                        m.backward_last(&x, &d).unwrap();
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

    #[test]
    fn fine_tuning_gradient_reaches_encoder() {
        let hp = HyperParams { lstm_dropout: 0.0, freeze_encoder: false, ..small_hp(4) };
        let mut m = RcnnModel::new(small_encoder(4, 8), hp).unwrap();
        let x = m.prepare_text("oh great another monday").unwrap();
        let r = grad_check(
            &mut m,
            |m, backward| {
                let logits = m.forward_train(&x, 0).unwrap();
                let (loss, d) = softmax_cross_entropy(&logits, 1);
                if backward {
                    m.backward_last(&x, &d).unwrap();
                }
                loss
            },
            1e-5,
            200,
            4,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    fn marker_split() -> DatasetSplit {
        let fill = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        let examples: Vec<_> = (0..64)
            .map(|i| {
                let s = i % 2 == 0;
                SequenceExample {
                    id: format!("m{i}"),
                    author: "a".into(),
                    forum: "f".into(),
                    ancestors: vec![],
                    response: format!("{} {} {}", fill[i % 8], if s { "marker" } else { fill[(i / 2) % 8] }, fill[(i * 3) % 8]),
                    label: if s { Label::Sarcastic } else { Label::NonSarcastic },
                }
            })
            .collect();
        balanced_split(&examples, 0.0, 0.0, 0).unwrap()
    }

    #[test]
    fn frozen_and_fine_tuned_checkpoints_round_trip() {
        let split = marker_split();
        for freeze in [true, false] {
            let hp = HyperParams { epochs: 1, learning_rate: 1e-3, lstm_units: 4, ffn_width: 8, max_len: 10, freeze_encoder: freeze, ..HyperParams::default() };
            let (model, _) = rcnn_train(&split, small_encoder(2, 8), &hp).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.bin");
            model.save(&path).unwrap();
            assert_eq!(sidecar_path(&path).exists(), !freeze);
            let loaded = RcnnModel::load(&path).unwrap();
            let a = rcnn_predict(&model, &split.train[..8]).unwrap();
            let b = rcnn_predict(&loaded, &split.train[..8]).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x.p_sarcastic - y.p_sarcastic).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn overfits_marker_corpus_deterministically() {
        let split = marker_split();
        let hp = HyperParams {
            epochs: 30,
            learning_rate: 1e-3,
            lstm_units: 8,
            ffn_width: 16,
            max_len: 10,
            batch_size: 8,
            ..HyperParams::default()
        };
        let enc = || Box::new(MiniEncoder::with_seed(1).unwrap()) as Box<dyn ContextualEncoder>;
        let (model, log) = rcnn_train(&split, enc(), &hp).unwrap();
        let data = prepare_all(&model, &split.train).unwrap();
        assert!(accuracy_of(&model, &data).unwrap() >= 0.95, "{log:?}");
        let (again, _) = rcnn_train(&split, enc(), &hp).unwrap();
        assert_eq!(model.flat_values(), again.flat_values());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn probabilities_sum_to_one(seed in any::<u64>()) {
            let m = RcnnModel::new(small_encoder(seed, 8), small_hp(seed)).unwrap();
            let x = m.prepare_text("sure thing buddy").unwrap();
            let p = m.probs(&x).unwrap();
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
            prop_assert_eq!(p, m.probs(&x).unwrap());
        }
    }
}
