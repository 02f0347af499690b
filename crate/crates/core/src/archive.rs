//! Single-file archive: JSON manifest followed by raw little-endian `f32` blocks.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  b"SBARCH01"
//! length   u64 LE   byte length of the manifest
//! manifest UTF-8 JSON {"format", "kind", "meta", "tensors": [{"name", "shape"}]}
//! blocks   row-major f32 LE, one per tensor, in manifest order
//! ```
//!
//! Manifest keys serialize in sorted order, so identical content yields
//! identical bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SBARCH01";
const FORMAT: &str = "sarcbench-archive/1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorBlock {
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape,
            data: data.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    kind: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<TensorBlock>,
}

impl Archive {
    pub fn new(kind: impl Into<String>, meta: Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, block: TensorBlock) {
        self.tensors.push(block);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for t in &self.tensors {
            let n: usize = t.shape.iter().product();
            if n != t.data.len() {
                return Err(Error::shape(format!(
                    "tensor `{}` has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let payload: usize = self.tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err("not a sarcbench archive (bad magic)".into());
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or("truncated manifest")?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| e.to_string())?;
        if manifest.format != FORMAT {
            return Err(format!("unsupported archive format `{}`", manifest.format));
        }
        let mut offset = 16 + len;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| format!("truncated data for tensor `{}`", entry.name))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 4 * n;
            tensors.push(TensorBlock { name: entry.name, shape: entry.shape, data });
        }
        if offset != bytes.len() {
            return Err(format!("{} trailing bytes after last tensor", bytes.len() - offset));
        }
        Ok(Self { kind: manifest.kind, meta: manifest.meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Reads an archive and checks its kind tag.
    pub fn read_kind(path: &Path, kind: &str) -> Result<Self> {
        let a = Self::read(path)?;
        if a.kind != kind {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("expected kind `{kind}`, found `{}`", a.kind),
            });
        }
        Ok(a)
    }

    /// Looks up a tensor and validates its shape.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> std::result::Result<&TensorBlock, String> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| format!("missing tensor `{name}`"))?;
        if t.shape != shape {
            return Err(format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape, shape));
        }
        Ok(t)
    }
}

/// A file referenced (not embedded) by a checkpoint, pinned by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

impl ArtifactRef {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        })
    }

    /// References `path` by file name only, for artifacts stored next to the
    /// checkpoint that points at them.
    pub fn sibling(path: &Path) -> Result<Self> {
        let name = path.file_name().ok_or_else(|| Error::data(format!("{} has no file name", path.display())))?;
        Ok(Self {
            path: name.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        })
    }

    /// Re-hashes the file and fails if it changed since it was referenced.
    pub fn verify(&self) -> Result<PathBuf> {
        self.resolve(Path::new(""))
    }

    /// Like [`ArtifactRef::verify`], with relative paths taken from `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<PathBuf> {
        let path = base_dir.join(&self.path);
        let actual = sha256_file(&path)?;
        if actual != self.sha256 {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("content hash {actual} does not match recorded {}", self.sha256),
            });
        }
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
