use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{FlowModel, ModelConfig};
use super::optim::AdamW;
use super::train::{TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    adam_step: u64,
}

/// Serializes the full training state.
///
/// Layout: magic, `u32` version, 32-byte manifest hash, `u32`-prefixed JSON
/// header, `u64` step, `u32` tensor count, then `(u32 name length, name,
/// DTNS tensor)` for every parameter followed by the Adam moments.
pub fn checkpoint_bytes(trainer: &Trainer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&trainer.manifest_hash);
    let header = Header {
        model: trainer.model.config.clone(),
        train: trainer.config.clone(),
        adam_step: trainer.opt.step,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&trainer.step.to_le_bytes());
    let store = &trainer.model.store;
    let mut entries: Vec<(String, &Tensor)> = store.iter().map(|(_, n, t)| (n.to_string(), t)).collect();
    for (i, (_, name, _)) in store.iter().enumerate() {
        entries.push((format!("adam.m.{name}"), &trainer.opt.m[i]));
    }
    for (i, (_, name, _)) in store.iter().enumerate() {
        entries.push((format!("adam.v.{name}"), &trainer.opt.v[i]));
    }
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&t.to_bytes());
    }
    out
}

fn read_exact<const N: usize>(r: &mut &[u8], what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated in {what}")))?;
    Ok(buf)
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r, what)?))
}

/// Parses a checkpoint. When `expected_hash` is given the stored manifest
/// hash must match it.
pub fn checkpoint_from_bytes(bytes: &[u8], expected_hash: Option<&[u8; 32]>) -> Result<Trainer> {
    let mut r = bytes;
    let magic = read_exact::<4>(&mut r, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Mismatch(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hash = read_exact::<32>(&mut r, "manifest hash")?;
    if let Some(expected) = expected_hash {
        if &hash != expected {
            return Err(Error::Mismatch(format!(
                "checkpoint was trained on corpus {}, not {}",
                hex::encode(hash),
                hex::encode(expected)
            )));
        }
    }
    let len = read_u32(&mut r, "header length")? as usize;
    if len > r.len() {
        return Err(Error::Format("checkpoint header length exceeds file".into()));
    }
    let header: Header =
        serde_json::from_slice(&r[..len]).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    r = &r[len..];
    let step = u64::from_le_bytes(read_exact::<8>(&mut r, "step")?);
    let count = read_u32(&mut r, "tensor count")? as usize;
    let mut named = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = read_u32(&mut r, "tensor name")? as usize;
        if n > r.len() {
            return Err(Error::Format("tensor name exceeds file".into()));
        }
        let name = std::str::from_utf8(&r[..n])
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
            .to_string();
        r = &r[n..];
        let t = Tensor::read_from(&mut r)?;
        named.push((name, t));
    }
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", r.len())));
    }
    if named.len() % 3 != 0 {
        return Err(Error::Format("tensor table is not params plus two moments".into()));
    }
    let n = named.len() / 3;
    let mut store = ParamStore::new();
    for (name, t) in &named[..n] {
        store.add(name.clone(), t.clone());
    }
    let model = FlowModel::with_store(header.model, store)?;
    let moments = |offset: usize, prefix: &str| -> Result<Vec<Tensor>> {
        named[offset..offset + n]
            .iter()
            .zip(model.store.iter())
            .map(|((name, t), (_, pname, p))| {
                if name != &format!("{prefix}{pname}") || t.shape() != p.shape() {
                    return Err(Error::Format(format!("unexpected moment tensor {name}")));
                }
                Ok(t.clone().with_requires_grad(false))
            })
            .collect()
    };
    let m = moments(n, "adam.m.")?;
    let v = moments(2 * n, "adam.v.")?;
    let opt = AdamW {
        config: header.train.optimizer(),
        step: header.adam_step,
        m,
        v,
    };
    Ok(Trainer {
        model,
        opt,
        config: header.train,
        manifest_hash: hash,
        step,
    })
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(trainer)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, expected_hash)
}

/// Decodes a hex manifest hash.
pub fn parse_hash(hex_hash: &str) -> Result<[u8; 32]> {
    let v = hex::decode(hex_hash).map_err(|e| Error::Format(format!("manifest hash: {e}")))?;
    v.try_into()
        .map_err(|_| Error::Format("manifest hash must be 32 bytes".into()))
}
