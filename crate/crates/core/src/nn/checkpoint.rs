//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `magic[8] | u32 version | u64 len, config JSON | u32 count, (key, value)*
//! | u32 count, (name, u32 ndim, u64 dims[ndim], f32 data[prod(dims)])*`
//! where strings are `u32 len` followed by UTF-8 bytes. Metadata and arrays
//! are written in sorted name order, so save→load→save is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams, Tensor};

const MAGIC: &[u8; 8] = b"XVDITCK\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Free-form string metadata (codec constants, stage info).
    pub metadata: BTreeMap<String, String>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, ModelError> {
        let remaining = self.0.get_ref().len() - self.0.position() as usize;
        if n > remaining {
            return Err(corrupt("unexpected end of file"));
        }
        let mut buf = vec![0u8; n];
        self.0.read_exact(&mut buf).map_err(|e| corrupt(e.to_string()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?).map_err(|e| corrupt(e.to_string()))
    }
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Self {
            config,
            params,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).map_err(|e| corrupt(e.to_string()))?;
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        let arrays = self.params.arrays();
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, t) in arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses and validates a checkpoint; unknown or missing parameter
    /// names are rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader(Cursor::new(bytes));
        if r.bytes(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let config: ModelConfig =
            serde_json::from_slice(&r.bytes(n)?).map_err(|e| corrupt(format!("config: {e}")))?;
        config.validate()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            metadata.insert(k, r.string()?);
        }
        let mut arrays = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let count: usize = shape.iter().product();
            let raw = r.bytes(count.checked_mul(4).ok_or_else(|| corrupt("array too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            if arrays.insert(name.clone(), Tensor { shape, data }).is_some() {
                return Err(corrupt(format!("duplicate array {name}")));
            }
        }
        if r.0.position() as usize != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        let params = ModelParams::from_arrays(arrays);
        params.check(&config)?;
        Ok(Self {
            config,
            params,
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| ModelError::Io {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}
