//! Named-tensor checkpoint archive.
//!
//! Layout (all integers little-endian):
//!   magic `MMCK` | u32 version=1 | u32 tensor count |
//!   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u64 dims,
//!   f64 payload |
//!   trailing u64 checksum = sum of all payload bytes mod 2^64.
//!
//! Tensors are written sorted by name, so a checkpoint's bytes are a pure
//! function of its contents.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use mm_model::ModelParams;
use mm_tensor::{Param, Tensor};

const MAGIC: &[u8; 4] = b"MMCK";
const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    /// Field name plus what was wrong with it.
    Corrupt { field: &'static str, detail: String },
    /// Loaded tensors do not line up with the model's parameters.
    Mismatch(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io: {e}"),
            CheckpointError::Corrupt { field, detail } => {
                write!(f, "checkpoint corrupt at {field}: {detail}")
            }
            CheckpointError::Mismatch(m) => write!(f, "checkpoint mismatch: {m}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Serializes named tensors; names are written in sorted order.
pub fn encode(params: &[&Param]) -> Vec<u8> {
    let mut sorted: Vec<&Param> = params.to_vec();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    let mut checksum: u64 = 0;
    for p in sorted {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            let bytes = v.to_le_bytes();
            for b in bytes {
                checksum = checksum.wrapping_add(b as u64);
            }
            out.extend_from_slice(&bytes);
        }
    }
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

/// Parses an archive, verifying magic, version, structure and checksum.
pub fn decode(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, field: &'static str| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(CheckpointError::Corrupt {
                field,
                detail: format!("file truncated at byte {}", *pos),
            });
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    let magic = take(&mut pos, 4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::Corrupt {
            field: "magic",
            detail: format!("{magic:?} != MMCK"),
        });
    }
    let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Corrupt {
            field: "version",
            detail: format!("{version} != {VERSION}"),
        });
    }
    let count = u32::from_le_bytes(take(&mut pos, 4, "tensor count")?.try_into().unwrap());

    let mut out = BTreeMap::new();
    let mut checksum: u64 = 0;
    for _ in 0..count {
        let name_len =
            u16::from_le_bytes(take(&mut pos, 2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len, "name")?)
            .map_err(|e| CheckpointError::Corrupt { field: "name", detail: e.to_string() })?
            .to_string();
        let rank = take(&mut pos, 1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(&mut pos, 8, "dims")?.try_into().unwrap());
            shape.push(d as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = take(&mut pos, numel * 8, "payload")?;
        for &b in payload {
            checksum = checksum.wrapping_add(b as u64);
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt {
            field: "payload",
            detail: format!("tensor {name:?}: {e}"),
        })?;
        if out.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::Corrupt {
                field: "name",
                detail: format!("duplicate tensor {name:?}"),
            });
        }
    }
    let stored = u64::from_le_bytes(take(&mut pos, 8, "checksum")?.try_into().unwrap());
    if stored != checksum {
        return Err(CheckpointError::Corrupt {
            field: "checksum",
            detail: format!("stored {stored:#x} != computed {checksum:#x}"),
        });
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Corrupt {
            field: "checksum",
            detail: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    Ok(out)
}

pub fn save(params: &[&Param], path: &Path) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    decode(&fs::read(path)?)
}

/// Installs loaded tensors into a freshly constructed model; every
/// parameter must be present with the right shape, and nothing extra.
pub fn load_into(model: &mut ModelParams, mut tensors: BTreeMap<String, Tensor>) -> Result<()> {
    for p in model.params_mut() {
        let t = tensors.remove(&p.name).ok_or_else(|| {
            CheckpointError::Mismatch(format!("missing tensor {:?}", p.name))
        })?;
        if t.shape() != p.value.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "tensor {:?} has shape {:?}, model wants {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    if let Some((name, _)) = tensors.into_iter().next() {
        return Err(CheckpointError::Mismatch(format!("extra tensor {name:?}")));
    }
    Ok(())
}
