//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic "CTGLABCK" | version u32 | config_len u64 | config JSON (UTF-8)
//! then per parameter: name_len u32 | name | rank u32 | dims u64 × rank | f64 × prod(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::{ModelConfig, TransformerLM};
use crate::error::{CheckpointError, Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTGLABCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME_LEN: u32 = 1 << 10;
const MAX_CONFIG_LEN: u64 = 1 << 20;

impl TransformerLM {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let config = serde_json::to_vec(&self.config).map_err(|e| Error::data(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(config.len() as u64).to_le_bytes())?;
        w.write_all(&config)?;
        for (name, t) in self.named_parameters() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Atomic save: a failed write never leaves a truncated checkpoint at `path`.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, |w| self.write_checkpoint(w))
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = read_u32(&mut r, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            }
            .into());
        }
        let config_len = read_u64(&mut r, "config length")?;
        if config_len > MAX_CONFIG_LEN {
            return Err(corrupt(format!("config length {config_len} is implausible")));
        }
        let mut config_bytes = vec![0u8; config_len as usize];
        read_exact(&mut r, &mut config_bytes, "config")?;
        let config: ModelConfig = serde_json::from_slice(&config_bytes)
            .map_err(|e| corrupt(format!("config JSON: {e}")))?;
        config
            .validate()
            .map_err(|e| corrupt(format!("stored config is invalid: {e}")))?;

        let expected = TransformerLM::expected_shapes(&config);
        let mut names = Vec::with_capacity(expected.len());
        let mut params = Vec::with_capacity(expected.len());
        for (want_name, want_shape) in expected {
            let name_len = read_u32(&mut r, "parameter name length")?;
            if name_len > MAX_NAME_LEN {
                return Err(corrupt(format!("parameter name length {name_len} is implausible")));
            }
            let mut name = vec![0u8; name_len as usize];
            read_exact(&mut r, &mut name, "parameter name")?;
            let name = String::from_utf8(name).map_err(|_| corrupt("parameter name is not UTF-8"))?;
            if name != want_name {
                return Err(corrupt(format!("expected parameter `{want_name}`, found `{name}`")));
            }
            let rank = read_u32(&mut r, "rank")?;
            if rank as usize != want_shape.len() {
                return Err(shape_mismatch(name, want_shape, vec![rank as usize]));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(read_u64(&mut r, "dimension")? as usize);
            }
            if shape != want_shape {
                return Err(shape_mismatch(name, want_shape, shape));
            }
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            read_exact(&mut r, &mut buf, "parameter payload")?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            names.push(name);
            params.push(Tensor::new(&shape, data)?);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(corrupt("trailing bytes after last parameter"));
        }
        Ok(TransformerLM::from_parts(config, names, params))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path)?;
        Self::read_checkpoint(BufReader::new(f))
    }

    /// Loads and additionally requires a specific vocabulary size.
    pub fn load_checkpoint_for_vocab(path: impl AsRef<Path>, vocab_size: usize) -> Result<Self> {
        let model = Self::load_checkpoint(path)?;
        if model.config.vocab_size != vocab_size {
            let d = model.config.d_model;
            return Err(shape_mismatch(
                "wte".into(),
                vec![vocab_size, d],
                vec![model.config.vocab_size, d],
            ));
        }
        Ok(model)
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    CheckpointError::Corrupt(msg.into()).into()
}

fn shape_mismatch(name: String, expected: Vec<usize>, found: Vec<usize>) -> Error {
    CheckpointError::ShapeMismatch { name, expected, found }.into()
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => corrupt(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}
