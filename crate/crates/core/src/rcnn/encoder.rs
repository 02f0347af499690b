//! Contextual token encoders: a seeded mini transformer for desk-scale runs
//! and a loader for pretrained RoBERTa-layout weights.

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::bpe::ByteBpe;
use crate::archive::{Archive, ArtifactRef};
use crate::corpus::{tokenize, TokenSequence};
use crate::error::{Error, Result};
use crate::neural::transformer::{TransformerEncoder, TransformerShape};
use crate::neural::{HasParams, Param};

pub const CACHE_ENV: &str = "SARCBENCH_CACHE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub name: String,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
}

/// Everything needed to rebuild an encoder, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderSpec {
    Mini(MiniConfig),
    Pretrained { dir: String, weights: ArtifactRef },
}

impl EncoderSpec {
    pub fn build(&self) -> Result<Box<dyn ContextualEncoder>> {
        match self {
            Self::Mini(cfg) => Ok(Box::new(MiniEncoder::new(*cfg)?)),
            Self::Pretrained { dir, weights } => {
                weights.verify()?;
                Ok(Box::new(PretrainedEncoder::load(Path::new(dir))?))
            }
        }
    }
}

/// Maps text to a `T x d_model` matrix through a transformer network.
pub trait ContextualEncoder: Debug + Send + Sync {
    fn descriptor(&self) -> EncoderDescriptor;

    /// Subword ids with boundary tokens, padded to exactly `max_len` with the
    /// encoder's own padding id; `true_length` is the encoded length `T`.
    fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenSequence>;

    fn network(&self) -> &TransformerEncoder;
    fn network_mut(&mut self) -> &mut TransformerEncoder;
    fn spec(&self) -> EncoderSpec;
    fn box_clone(&self) -> Box<dyn ContextualEncoder>;

    fn d_model(&self) -> usize {
        self.network().dim()
    }

    /// Encodes the non-padding prefix of `seq`.
    fn encode_ids(&self, seq: &TokenSequence) -> Result<Array2<f64>> {
        Ok(self.network().forward(seq.tokens())?.0)
    }

    fn encode(&self, text: &str) -> Result<Array2<f64>> {
        let seq = self.tokenize(text, self.network().max_tokens())?;
        self.encode_ids(&seq)
    }
}

impl Clone for Box<dyn ContextualEncoder> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Writes the encoder's current weights as a standalone archive.
pub fn save_encoder_weights(encoder: &dyn ContextualEncoder, path: &Path) -> Result<ArtifactRef> {
    let meta = serde_json::json!({ "descriptor": encoder.descriptor(), "spec": encoder.spec() });
    let mut archive = Archive::new("encoder", meta);
    encoder.network().write_blocks(&mut archive);
    archive.write(path)?;
    ArtifactRef::sibling(path)
}

/// Loads weights saved by [`save_encoder_weights`]; relative references are
/// taken from `base_dir`.
pub fn load_encoder_weights(encoder: &mut dyn ContextualEncoder, weights: &ArtifactRef, base_dir: &Path) -> Result<()> {
    let path = weights.resolve(base_dir)?;
    let archive = Archive::read_kind(&path, "encoder")?;
    encoder
        .network_mut()
        .load_blocks(&archive)
        .map_err(|message| Error::Checkpoint { path: path.to_path_buf(), message })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiniConfig {
    pub seed: u64,
    pub buckets: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
}

impl Default for MiniConfig {
    fn default() -> Self {
        Self { seed: 0, buckets: 4096, d_model: 32, layers: 2, heads: 4, intermediate: 64, max_positions: 512 }
    }
}

const MINI_BOS: u32 = 1;
const MINI_EOS: u32 = 2;
const MINI_RESERVED: usize = 3;

/// Hashed-vocabulary transformer with seeded weights. Ids: 0 padding,
/// 1 `<s>`, 2 `</s>`, then FNV-1a buckets of lowercased whitespace tokens.
#[derive(Debug, Clone)]
pub struct MiniEncoder {
    config: MiniConfig,
    net: TransformerEncoder,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

impl MiniEncoder {
    pub fn new(config: MiniConfig) -> Result<Self> {
        let shape = TransformerShape {
            vocab: config.buckets + MINI_RESERVED,
            max_positions: config.max_positions,
            dim: config.d_model,
            layers: config.layers,
            heads: config.heads,
            intermediate: config.intermediate,
            position_offset: 0,
            layer_norm_eps: 1e-5,
            token_type: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, net: TransformerEncoder::new("mini", shape, 0.1, &mut rng)? })
    }

    pub fn with_seed(seed: u64) -> Result<Self> {
        Self::new(MiniConfig { seed, ..MiniConfig::default() })
    }
}

impl ContextualEncoder for MiniEncoder {
    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor {
            name: "mini".into(),
            layers: self.config.layers,
            heads: self.config.heads,
            d_model: self.config.d_model,
        }
    }

    fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len < 3 {
            return Err(Error::shape("max_len must leave room for boundary tokens"));
        }
        let words = tokenize(text);
        if words.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut ids = vec![MINI_BOS];
        ids.extend(
            words
                .iter()
                .take(max_len - 2)
                .map(|w| (fnv1a(w.as_bytes()) % self.config.buckets as u64) as u32 + MINI_RESERVED as u32),
        );
        ids.push(MINI_EOS);
        TokenSequence::from_ids(ids, max_len)
    }

    fn network(&self) -> &TransformerEncoder {
        &self.net
    }
    fn network_mut(&mut self) -> &mut TransformerEncoder {
        &mut self.net
    }
    fn spec(&self) -> EncoderSpec {
        EncoderSpec::Mini(self.config)
    }
    fn box_clone(&self) -> Box<dyn ContextualEncoder> {
        Box::new(self.clone())
    }
}

/// Directory holding `config.json`, `vocab.json`, `merges.txt` and
/// `model.safetensors`: `explicit` if given, else `$SARCBENCH_CACHE/roberta-base`,
/// else `~/.cache/sarcbench/roberta-base`.
pub fn pretrained_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let root = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| {
        let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_default();
        home.join(".cache").join("sarcbench")
    });
    root.join("roberta-base")
}

#[derive(Debug, Deserialize)]
struct HfConfig {
    vocab_size: usize,
    hidden_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    intermediate_size: usize,
    max_position_embeddings: usize,
    #[serde(default = "default_ln_eps")]
    layer_norm_eps: f64,
    #[serde(default = "default_pad")]
    pad_token_id: usize,
}

fn default_ln_eps() -> f64 {
    1e-5
}

fn default_pad() -> usize {
    1
}

const REQUIRED_FILES: [&str; 4] = ["config.json", "vocab.json", "merges.txt", "model.safetensors"];

/// RoBERTa-layout transformer loaded from safetensors, with its byte-level
/// BPE tokenizer.
#[derive(Debug, Clone)]
pub struct PretrainedEncoder {
    dir: PathBuf,
    weights: ArtifactRef,
    bpe: ByteBpe,
    net: TransformerEncoder,
}

struct TensorSource<'a> {
    st: SafeTensors<'a>,
    prefix: &'static str,
}

impl TensorSource<'_> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let full = format!("{}{name}", self.prefix);
        let view = self
            .st
            .tensor(&full)
            .map_err(|_| Error::Encoder(format!("weight `{full}` not found")))?;
        if view.shape() != shape {
            return Err(Error::Encoder(format!("weight `{full}` has shape {:?}, expected {shape:?}", view.shape())));
        }
        let data = view.data();
        Ok(match view.dtype() {
            Dtype::F32 => data.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect(),
            Dtype::F64 => data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            other => return Err(Error::Encoder(format!("weight `{full}` has unsupported dtype {other:?}"))),
        })
    }

    fn has(&self, name: &str) -> bool {
        self.st.tensor(&format!("{}{name}", self.prefix)).is_ok()
    }

    /// A torch `Linear` stores `out x in`; ours is `in x out`.
    fn linear(&self, name: &str, input: usize, output: usize, weight: &mut Param, bias: &mut Param) -> Result<()> {
        let w = self.get(&format!("{name}.weight"), &[output, input])?;
        weight.value = (0..input * output).map(|k| w[(k % output) * input + k / output]).collect();
        bias.value = self.get(&format!("{name}.bias"), &[output])?;
        Ok(())
    }

    fn layer_norm(&self, name: &str, dim: usize, gamma: &mut Param, beta: &mut Param) -> Result<()> {
        let (g, b) = if self.has(&format!("{name}.weight")) { ("weight", "bias") } else { ("gamma", "beta") };
        gamma.value = self.get(&format!("{name}.{g}"), &[dim])?;
        beta.value = self.get(&format!("{name}.{b}"), &[dim])?;
        Ok(())
    }
}

impl PretrainedEncoder {
    pub fn load(dir: &Path) -> Result<Self> {
        let missing: Vec<&str> = REQUIRED_FILES.iter().copied().filter(|f| !dir.join(f).is_file()).collect();
        if !missing.is_empty() {
            return Err(Error::Encoder(format!(
                "pretrained encoder files missing in {}: {}. Download roberta-base \
                 (config.json, vocab.json, merges.txt, model.safetensors) from \
                 https://huggingface.co/FacebookAI/roberta-base into that directory, \
                 or point {CACHE_ENV} at a directory containing roberta-base/",
                dir.display(),
                missing.join(", ")
            )));
        }
        let cfg: HfConfig = serde_json::from_slice(&std::fs::read(dir.join("config.json"))?)?;
        let bpe = ByteBpe::from_files(&dir.join("vocab.json"), &dir.join("merges.txt"))?;
        let weights_path = dir.join("model.safetensors");
        let bytes = std::fs::read(&weights_path)?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Encoder(format!("bad safetensors file: {e}")))?;
        let prefix = if st.names().iter().any(|n| n.starts_with("roberta.")) { "roberta." } else { "" };
        let src = TensorSource { st, prefix };
        let d = cfg.hidden_size;
        let shape = TransformerShape {
            vocab: cfg.vocab_size,
            max_positions: cfg.max_position_embeddings,
            dim: d,
            layers: cfg.num_hidden_layers,
            heads: cfg.num_attention_heads,
            intermediate: cfg.intermediate_size,
            position_offset: cfg.pad_token_id + 1,
            layer_norm_eps: cfg.layer_norm_eps,
            token_type: src.has("embeddings.token_type_embeddings.weight"),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = TransformerEncoder::new("roberta", shape, 0.0, &mut rng)?;
        net.tokens.value = src.get("embeddings.word_embeddings.weight", &[cfg.vocab_size, d])?;
        net.positions.value = src.get("embeddings.position_embeddings.weight", &[cfg.max_position_embeddings, d])?;
        if let Some(tt) = &mut net.token_type {
            let rows = src
                .st
                .tensor(&format!("{prefix}embeddings.token_type_embeddings.weight"))
                .map(|v| v.shape()[0])
                .unwrap_or(1);
            tt.value = src.get("embeddings.token_type_embeddings.weight", &[rows, d])?[..d].to_vec();
        }
        let norm = &mut net.embedding_norm;
        src.layer_norm("embeddings.LayerNorm", d, &mut norm.gamma, &mut norm.beta)?;
        let ff = cfg.intermediate_size;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let p = format!("encoder.layer.{i}");
            let att = &mut layer.attention;
            src.linear(&format!("{p}.attention.self.query"), d, d, &mut att.query.weight, &mut att.query.bias)?;
            src.linear(&format!("{p}.attention.self.key"), d, d, &mut att.key.weight, &mut att.key.bias)?;
            src.linear(&format!("{p}.attention.self.value"), d, d, &mut att.value.weight, &mut att.value.bias)?;
            src.linear(&format!("{p}.attention.output.dense"), d, d, &mut att.output.weight, &mut att.output.bias)?;
            let n1 = &mut layer.attention_norm;
            src.layer_norm(&format!("{p}.attention.output.LayerNorm"), d, &mut n1.gamma, &mut n1.beta)?;
            src.linear(&format!("{p}.intermediate.dense"), d, ff, &mut layer.intermediate.weight, &mut layer.intermediate.bias)?;
            src.linear(&format!("{p}.output.dense"), ff, d, &mut layer.output.weight, &mut layer.output.bias)?;
            let n2 = &mut layer.output_norm;
            src.layer_norm(&format!("{p}.output.LayerNorm"), d, &mut n2.gamma, &mut n2.beta)?;
        }
        Ok(Self { dir: dir.to_path_buf(), weights: ArtifactRef::of(&weights_path)?, bpe, net })
    }

    pub fn vocab_size(&self) -> usize {
        self.bpe.vocab_size()
    }
}

impl ContextualEncoder for PretrainedEncoder {
    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor {
            name: "pretrained".into(),
            layers: self.net.shape.layers,
            heads: self.net.shape.heads,
            d_model: self.net.dim(),
        }
    }

    fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        let ids = self.bpe.encode_with_boundaries(text, max_len.min(self.net.max_tokens()))?;
        TokenSequence::from_ids_with_pad(ids, max_len, self.bpe.pad)
    }

    fn network(&self) -> &TransformerEncoder {
        &self.net
    }
    fn network_mut(&mut self) -> &mut TransformerEncoder {
        &mut self.net
    }
    fn spec(&self) -> EncoderSpec {
        EncoderSpec::Pretrained { dir: self.dir.to_string_lossy().into_owned(), weights: self.weights.clone() }
    }
    fn box_clone(&self) -> Box<dyn ContextualEncoder> {
        Box::new(self.clone())
    }
}
