//! Named-tensor checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      4 bytes  "DWUN"
//! version    u32      1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   dtype    u8       0 = f32, 1 = f16
//!   rank     u8, dims (rank × u32)
//!   data     numel × 4 (f32) or numel × 2 (f16) bytes
//! metadata   u32 length + UTF-8 text, one `key=value` per line (optional)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use half::f16;

use super::{DwUNet, ModelConfig, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DWUN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F16 = 1,
}

impl DType {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(DType::F32),
            1 => Ok(DType::F16),
            other => Err(Error::Checkpoint(format!("unknown dtype byte {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

pub type Metadata = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Param>,
    pub metadata: Metadata,
}

pub fn write_checkpoint(tensors: &[Param], metadata: &Metadata, dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(too_big)?.to_le_bytes());
    for p in tensors {
        let name = p.name.as_bytes();
        out.extend_from_slice(&u16::try_from(name.len()).map_err(too_big)?.to_le_bytes());
        out.extend_from_slice(name);
        out.push(dtype as u8);
        out.push(u8::try_from(p.tensor.dims().len()).map_err(too_big)?);
        for &d in p.tensor.dims() {
            out.extend_from_slice(&u32::try_from(d).map_err(too_big)?.to_le_bytes());
        }
        match dtype {
            DType::F32 => p.tensor.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            DType::F16 => p
                .tensor
                .data()
                .iter()
                .for_each(|&v| out.extend_from_slice(&f16::from_f32(v).to_le_bytes())),
        }
    }
    let mut text = String::new();
    for (k, v) in metadata {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("metadata entry {k:?}={v:?} is not encodable")));
        }
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    out.extend_from_slice(&u32::try_from(text.len()).map_err(too_big)?.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

fn too_big<E>(_: E) -> Error {
    Error::Checkpoint("value too large for the checkpoint format".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes for {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic: not a DWUN checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = DType::from_byte(r.u8("dtype")?)?;
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} dims overflow")))?;
        let nbytes = numel
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} too large")))?;
        let raw = r.take(nbytes, &format!("data of tensor {name:?}"))?;
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F16 => raw
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
        };
        tensors.push(Param {
            name,
            tensor: Tensor::from_vec(dims, data)?,
        });
    }
    let mut metadata = Metadata::new();
    if r.remaining() > 0 {
        let len = r.u32("metadata length")? as usize;
        let text = std::str::from_utf8(r.take(len, "metadata")?)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line {line:?}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        if r.remaining() > 0 {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after metadata",
                r.remaining()
            )));
        }
    }
    Ok(Checkpoint { tensors, metadata })
}

/// Serializes a model; its config is always recorded in the metadata.
pub fn save_checkpoint(model: &DwUNet, path: impl AsRef<Path>, dtype: DType, extra: &Metadata) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model, dtype, extra)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_bytes(model: &DwUNet, dtype: DType, extra: &Metadata) -> Result<Vec<u8>> {
    let mut meta = extra.clone();
    for (k, v) in model.config().to_pairs() {
        meta.insert(k.to_string(), v);
    }
    write_checkpoint(model.params(), &meta, dtype)
}

#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub model: DwUNet,
    pub metadata: Metadata,
}

fn read_file(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes).map_err(|e| e.at(path))
}

/// Loads a checkpoint, rebuilding the model from the config in its metadata.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let ckpt = read_file(path)?;
    let mut config = ModelConfig::tiny();
    for key in ["f1", "n_blocks", "in_channels", "out_channels", "expansion", "gn_groups"] {
        let value = ckpt.metadata.get(key).ok_or_else(|| {
            Error::Checkpoint(format!("{}: metadata lacks model key {key:?}", path.display()))
        })?;
        config.set(key, value)?;
    }
    let model = DwUNet::from_params(config, ckpt.tensors).map_err(|e| e.at(path))?;
    Ok(LoadedCheckpoint {
        model,
        metadata: ckpt.metadata,
    })
}

/// Loads tensors into an explicitly given config, rejecting any mismatch.
pub fn load_into(config: ModelConfig, path: impl AsRef<Path>) -> Result<DwUNet> {
    let path = path.as_ref();
    let ckpt = read_file(path)?;
    DwUNet::from_params(config, ckpt.tensors).map_err(|e| e.at(path))
}
