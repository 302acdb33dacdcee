//! Self-describing binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "LKARND\0\x01"
//! version  u32
//! config   u64 length + UTF-8 JSON (ModelConfig)
//! meta     u64 length + UTF-8 JSON
//! count    u32
//! count × { u32 name length, name, u32 rank, rank × u64 dims, dims-product × f64 }
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, Result};

pub const MAGIC: &[u8; 8] = b"LKARND\0\x01";
pub const VERSION: u32 = 1;

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_f1: Option<f64>,
    pub threshold: f64,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: CheckpointMeta,
}

pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

/// Raw container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub config_json: String,
    pub meta_json: String,
    pub tensors: Vec<NamedTensor>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn encode_container(c: &Container) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for s in [&c.config_json, &c.meta_json] {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    out.extend_from_slice(&(c.tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in &c.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(corrupt(self.path, "unexpected end of file"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| corrupt(self.path, "invalid UTF-8"))
    }
}

pub fn decode_container(bytes: &[u8], path: &Path) -> Result<Container> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(corrupt(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let len = r.u64()? as usize;
    let config_json = r.string(len)?;
    let len = r.u64()? as usize;
    let meta_json = r.string(len)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = r.string(len)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt(path, "shape overflow"))?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| corrupt(path, "shape overflow"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(path, "trailing bytes"));
    }
    Ok(Container {
        config_json,
        meta_json,
        tensors,
    })
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    // write-then-rename so a crash never leaves a truncated checkpoint
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode_container(c)).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_container(&bytes, path)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config types always serialise")
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        Container {
            config_json: to_json(&self.params.config),
            meta_json: to_json(&self.meta),
            tensors: self
                .params
                .tensors
                .iter()
                .map(|t| {
                    (
                        t.name.clone(),
                        t.shape.clone(),
                        self.params.data[t.range()].to_vec(),
                    )
                })
                .collect(),
        }
    }

    pub fn from_container(c: Container, path: &Path) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&c.config_json)
            .map_err(|e| corrupt(path, format!("config: {e}")))?;
        let meta: CheckpointMeta = serde_json::from_str(&c.meta_json)
            .map_err(|e| corrupt(path, format!("metadata: {e}")))?;
        let params = ModelParams::from_tensors(&config, c.tensors)?;
        if !params.all_finite() {
            return Err(corrupt(path, "non-finite parameter"));
        }
        Ok(Checkpoint { params, meta })
    }
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    let ck = Checkpoint {
        params: params.clone(),
        meta: meta.clone(),
    };
    write_container(path, &ck.to_container())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_container(read_container(path)?, path)
}
