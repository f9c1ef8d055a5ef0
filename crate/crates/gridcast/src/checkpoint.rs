//! Checkpoint files: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header naming every parameter with its shape, the `f64` values
//! in header order, and a trailing SHA-256 of everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use gridcast_core::training::Checkpoint;
use gridcast_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GCCKPT01";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    params: Vec<Entry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Serializes `checkpoint` with free-form metadata.
pub fn encode(checkpoint: &Checkpoint, meta: serde_json::Value) -> Vec<u8> {
    let header = Header {
        params: checkpoint
            .entries
            .iter()
            .map(|(name, t)| Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in &checkpoint.entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Parses bytes produced by [`encode`]; any inconsistency is an error.
pub fn decode(bytes: &[u8]) -> std::result::Result<(Checkpoint, serde_json::Value), String> {
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch (file is corrupted or truncated)".into());
    }
    let len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(len)
        .filter(|&e| e <= body.len())
        .ok_or("header length out of range")?;
    let header: Header =
        serde_json::from_slice(&body[16..header_end]).map_err(|e| format!("bad header: {e}"))?;
    let mut values = body[header_end..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let total: usize = header
        .params
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if (body.len() - header_end) != total * 8 {
        return Err(format!(
            "expected {total} values, found {}",
            (body.len() - header_end) / 8
        ));
    }
    let entries = header
        .params
        .into_iter()
        .map(|e| {
            let n = e.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            let t = Tensor::from_vec(&e.shape, data).map_err(|err| err.to_string())?;
            Ok((e.name, t))
        })
        .collect::<std::result::Result<_, String>>()?;
    Ok((Checkpoint { entries }, header.meta))
}

/// Writes atomically: the file appears complete or not at all.
pub fn save(path: &Path, checkpoint: &Checkpoint, meta: serde_json::Value) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&encode(checkpoint, meta))
        .map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Checkpoint, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridcast_core::models::{Network, Unet, UnetConfig};
    use gridcast_core::training::load_partial_checkpoint;

    fn sample() -> Checkpoint {
        Checkpoint::from_network(&Unet::new(UnetConfig::new(2, 2, 3, 2), 4).unwrap())
    }

    #[test]
    fn round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.ckpt");
        let meta = serde_json::json!({"stage": "train"});
        save(&path, &sample(), meta.clone()).unwrap();
        assert_eq!(load(&path).unwrap(), (sample(), meta));
    }

    #[test]
    fn corruption_is_detected_and_model_untouched() {
        let mut bytes = encode(&sample(), serde_json::Value::Null);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(decode(&bytes).is_err());
        assert!(decode(&bytes[..bytes.len() - 9]).is_err());
        assert!(decode(b"GCCKPT01").is_err());

        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.ckpt");
        fs::write(&path, &bytes).unwrap();
        let mut net = Unet::new(UnetConfig::new(2, 2, 3, 2), 9).unwrap();
        let before = net.clone();
        let res =
            load(&path).and_then(|(c, _)| Ok(load_partial_checkpoint(&mut net, &c, false, 0)?));
        assert!(matches!(res, Err(Error::Format { .. })));
        assert_eq!(net, before);
        assert_eq!(net.params(), before.params());
    }
}
