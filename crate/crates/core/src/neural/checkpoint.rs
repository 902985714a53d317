//! Versioned binary checkpoints.
//!
//! Layout: magic `FLCK`, `u32` version, `u32` JSON length, architecture JSON,
//! `u64` parameter count, little-endian `f32` parameters, then the SHA-256 of
//! the JSON and parameter bytes.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::nets::{Architecture, Dfg, I2fNet, Lcr, Network, PatchDiscriminator};
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(arch: &Architecture, params: &[Tensor]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(arch)?;
    let n: usize = params.iter().map(Tensor::len).sum();
    let mut payload = Vec::with_capacity(n * 4);
    for v in params.iter().flat_map(|t| t.data()) {
        payload.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut out = Vec::with_capacity(20 + json.len() + payload.len() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::new().chain_update(&json).chain_update(&payload).finalize();
    out.extend_from_slice(&digest);
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Architecture, Vec<Tensor>)> {
    let mut rest = bytes;
    if take(&mut rest, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let json_len = u32::from_le_bytes(take(&mut rest, 4)?.try_into().expect("4 bytes")) as usize;
    let json = take(&mut rest, json_len)?;
    let n = u64::from_le_bytes(take(&mut rest, 8)?.try_into().expect("8 bytes")) as usize;
    let payload = take(&mut rest, n.checked_mul(4).ok_or_else(|| Error::Checkpoint("bad size".into()))?)?;
    let digest = take(&mut rest, 32)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after digest".into()));
    }
    let expected = Sha256::new().chain_update(json).chain_update(payload).finalize();
    if expected.as_slice() != digest {
        return Err(Error::Checkpoint("digest mismatch".into()));
    }
    let arch: Architecture = serde_json::from_slice(json)?;
    let shapes = arch.param_shapes()?;
    let needed: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if needed != n {
        return Err(Error::Checkpoint(format!(
            "architecture needs {needed} parameters, file has {n}"
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let params = shapes
        .iter()
        .map(|&s| Tensor::new(s, values.by_ref().take(s.iter().product()).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((arch, params))
}

pub fn save_checkpoint(net: &impl Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(&net.architecture(), net.params())?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Any network restored from a checkpoint.
#[derive(Clone, Debug)]
pub enum Model {
    I2f(I2fNet),
    Dfg(Dfg),
    Discriminator(PatchDiscriminator),
    Lcr(Lcr),
}

impl Model {
    pub fn from_parts(arch: Architecture, params: Vec<Tensor>) -> Result<Model> {
        Ok(match arch {
            Architecture::I2f(c) => Model::I2f(I2fNet::from_params(c, params)?),
            Architecture::Dfg(c) => Model::Dfg(Dfg::from_params(c, params)?),
            Architecture::Discriminator(c) => Model::Discriminator(PatchDiscriminator::from_params(c, params)?),
            Architecture::Lcr(c) => Model::Lcr(Lcr::from_params(c, params)?),
        })
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (arch, params) = decode_checkpoint(&bytes)?;
    Model::from_parts(arch, params)
}
