//! Binary tensor archive: magic, format version, a JSON header describing
//! every tensor, then the raw little-endian buffers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, NetError};
use crate::autodiff::{DType, Element, Tensor};

const MAGIC: &[u8; 8] = b"EITPHYS\0";
pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub dtype: DType,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Named tensors plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive<E> {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<E>)>,
}

impl<E: Element> Archive<E> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let size = E::DTYPE.size_of();
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset, nbytes: t.len() * size };
                offset += e.nbytes;
                e
            })
            .collect();
        let header = ArchiveHeader {
            format_version: ARCHIVE_FORMAT_VERSION,
            dtype: E::DTYPE,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&ARCHIVE_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Parses an archive. Buffers stored in the other precision are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let fmt = |m: String| NetError::Format(m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt("not a tensor archive (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != ARCHIVE_FORMAT_VERSION {
            return Err(fmt(format!("archive format version {version}, expected {ARCHIVE_FORMAT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let data_start = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt("truncated header".into()))?;
        let header: ArchiveHeader =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| fmt(format!("bad header: {e}")))?;
        if header.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(fmt(format!("header format version {}", header.format_version)));
        }
        let data = &bytes[data_start..];
        let size = header.dtype.size_of();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let count: usize = e.shape.iter().product();
            if e.nbytes != count * size || e.offset.checked_add(e.nbytes).map_or(true, |end| end > data.len()) {
                return Err(fmt(format!("tensor '{}' has an inconsistent extent", e.name)));
            }
            let raw = &data[e.offset..e.offset + e.nbytes];
            let values: Vec<E> = match header.dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| E::from_f64_lossy(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| E::from_f64_lossy(f64::read_le(c))).collect(),
            };
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), values)?));
        }
        Ok(Archive { meta: header.meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), NetError> {
        let io = |e| NetError::Io { path: path.display().to_string(), source: e };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, NetError> {
        let bytes = fs::read(path).map_err(|e| NetError::Io { path: path.display().to_string(), source: e })?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    config: ModelConfig,
}

impl<E: Element> Model<E> {
    /// All parameters and running statistics under their layer names.
    pub fn to_archive(&self) -> Archive<E> {
        let meta = ModelMeta { kind: "model".into(), config: self.config().clone() };
        Archive {
            meta: serde_json::to_value(meta).expect("config serializes"),
            tensors: self.params().iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    /// Rebuilds a model; every stored tensor must match a parameter by name and shape.
    pub fn from_archive(archive: &Archive<E>) -> Result<Self, NetError> {
        let meta: ModelMeta = serde_json::from_value(archive.meta.clone())
            .map_err(|e| NetError::Format(format!("archive does not describe a model: {e}")))?;
        if meta.kind != "model" {
            return Err(NetError::Format(format!("archive holds a '{}', not a model", meta.kind)));
        }
        let mut model = Model::new(meta.config, 0)?;
        if archive.tensors.len() != model.params().len() {
            return Err(NetError::Format(format!(
                "archive has {} tensors, model has {}",
                archive.tensors.len(),
                model.params().len()
            )));
        }
        for ((_, p), (name, t)) in model.params_mut().iter_mut().zip(&archive.tensors) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(NetError::Format(format!(
                    "tensor '{name}' {:?} does not match parameter '{}' {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        self.to_archive().write(path)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_archive(&Archive::read(path)?)
    }
}
