//! Checkpoint files.
//!
//! Layout: the 8-byte magic `LMPMCKPT`, a little-endian u64 manifest length,
//! the JSON manifest, then every parameter as little-endian f64 in manifest
//! order. The manifest records the config, the memory temperature, the
//! vocabulary (and its hash), parameter names and shapes, and a SHA-256 of
//! the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::memory::PatternMemory;
use crate::model::{BowHead, Lmpm, ModelConfig, Seq2Seq};
use crate::params::{ParamGroup, BACKBONE_GROUP, BOW_GROUP, MEMORY_GROUP};
use crate::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"LMPMCKPT";
const GROUP_NAMES: [&str; 3] = ["backbone", "memory", "bow"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub config: ModelConfig,
    pub temperature: f64,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    pub parameters: Vec<ParamEntry>,
    pub payload_sha256: String,
}

pub struct Checkpoint {
    pub model: Lmpm,
    pub vocab: Vocabulary,
}

pub fn to_bytes(model: &Lmpm, vocab: &Vocabulary) -> Result<Vec<u8>> {
    if vocab.len() != model.config().vocab_size {
        return Err(Error::Compatibility(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let mut parameters = Vec::new();
    let mut payload = Vec::new();
    for (g, group) in model.groups().into_iter().enumerate() {
        for (name, t) in group.iter() {
            parameters.push(ParamEntry {
                name: format!("{}/{name}", GROUP_NAMES[g]),
                shape: t.shape().to_vec(),
            });
            for x in t.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let manifest = Manifest {
        format: 1,
        config: model.config().clone(),
        temperature: model.memory().temperature(),
        vocab_hash: vocab.hash(),
        vocab: vocab.tokens().to_vec(),
        parameters,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits a file into its manifest and payload without checking the payload.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if n > body.len() {
        return Err(Error::Integrity("manifest length exceeds file size".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..n])
        .map_err(|e| Error::Integrity(format!("unreadable manifest: {e}")))?;
    Ok((manifest, &body[n..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let (m, payload) = read_manifest(bytes)?;
    if m.format != 1 {
        return Err(Error::Compatibility(format!("unsupported checkpoint format {}", m.format)));
    }
    let expected: usize = m.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 8 {
        return Err(Error::Integrity(format!(
            "payload holds {} bytes, manifest describes {}",
            payload.len(),
            expected * 8
        )));
    }
    if hex::encode(Sha256::digest(payload)) != m.payload_sha256 {
        return Err(Error::Integrity("payload checksum mismatch".into()));
    }
    let vocab = Vocabulary::from_tokens(m.vocab.clone())?;
    if vocab.hash() != m.vocab_hash {
        return Err(Error::Compatibility("vocabulary hash does not match its tokens".into()));
    }
    m.config.validate()?;
    if m.config.vocab_size != vocab.len() {
        return Err(Error::Compatibility("config vocab_size differs from the stored vocabulary".into()));
    }

    let mut groups = [
        ParamGroup::new(BACKBONE_GROUP),
        ParamGroup::new(MEMORY_GROUP),
        ParamGroup::new(BOW_GROUP),
    ];
    let mut offset = 0;
    for p in &m.parameters {
        let (prefix, name) = p
            .name
            .split_once('/')
            .ok_or_else(|| Error::Compatibility(format!("parameter {:?} has no group prefix", p.name)))?;
        let g = GROUP_NAMES
            .iter()
            .position(|&n| n == prefix)
            .ok_or_else(|| Error::Compatibility(format!("unknown parameter group {prefix:?}")))?;
        let n: usize = p.shape.iter().product();
        let data: Vec<f64> = payload[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += n * 8;
        groups[g].add(name, Tensor::new(p.shape.clone(), data)?);
    }
    let [backbone, memory, bow] = groups;
    let cfg = m.config.clone();
    let model = Lmpm::from_parts(
        Seq2Seq::from_parts(cfg.clone(), backbone)?,
        PatternMemory::from_parts(cfg.memory_config(m.temperature), memory)?,
        BowHead::from_parts(cfg.d_model, cfg.d_m, cfg.vocab_size, bow)?,
    )?;
    Ok(Checkpoint { model, vocab })
}

pub fn save(path: &Path, model: &Lmpm, vocab: &Vocabulary) -> Result<()> {
    let bytes = to_bytes(model, vocab)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and requires its vocabulary to equal `vocab`.
pub fn load_with_vocab(path: &Path, vocab: &Vocabulary) -> Result<Lmpm> {
    let ck = load(path)?;
    if ck.vocab.hash() != vocab.hash() {
        return Err(Error::Compatibility(format!(
            "{} was trained with a different vocabulary",
            path.display()
        )));
    }
    Ok(ck.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Lmpm, Vocabulary) {
        let vocab = Vocabulary::build([vec!["a".to_string(), "b".to_string()]], 1).unwrap();
        let cfg = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 16,
            vocab_size: vocab.len(),
            d_m: 6,
            slots: 3,
            address_hidden: 0,
        };
        (Lmpm::new(cfg, 0.7, 5).unwrap(), vocab)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (m, v) = small();
        let bytes = to_bytes(&m, &v).unwrap();
        let ck = from_bytes(&bytes).unwrap();
        for (a, b) in m.groups().iter().zip(ck.model.groups()) {
            for ((n1, t1), (n2, t2)) in a.iter().zip(b.iter()) {
                assert_eq!(n1, n2);
                assert_eq!(t1.shape(), t2.shape());
                let x: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
                let y: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
                assert_eq!(x, y);
            }
        }
        assert_eq!(ck.model.memory().temperature(), 0.7);
        assert_eq!(ck.vocab.tokens(), v.tokens());
        assert_eq!(to_bytes(&ck.model, &ck.vocab).unwrap(), bytes);
    }

    #[test]
    fn truncated_payload_is_an_integrity_error() {
        let (m, v) = small();
        let mut bytes = to_bytes(&m, &v).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(from_bytes(&bytes), Err(Error::Integrity(_))));
        bytes.extend_from_slice(&[0u8; 16]);
        assert!(matches!(from_bytes(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn flipped_payload_byte_is_an_integrity_error() {
        let (m, v) = small();
        let mut bytes = to_bytes(&m, &v).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(from_bytes(&bytes), Err(Error::Integrity(_))));
    }

    fn rewrite(bytes: &[u8], f: impl FnOnce(&mut Manifest)) -> Vec<u8> {
        let (mut m, payload) = read_manifest(bytes).unwrap();
        f(&mut m);
        let json = serde_json::to_vec(&m).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn manifest_mismatches_are_compatibility_errors() {
        let (m, v) = small();
        let bytes = to_bytes(&m, &v).unwrap();
        let bad = rewrite(&bytes, |m| m.vocab_hash = "00".into());
        assert!(matches!(from_bytes(&bad), Err(Error::Compatibility(_))));
        let bad = rewrite(&bytes, |m| m.parameters[0].name = "backbone/renamed".into());
        assert!(matches!(from_bytes(&bad), Err(Error::Compatibility(_))));
        let bad = rewrite(&bytes, |m| m.parameters.swap(0, 1));
        assert!(from_bytes(&bad).is_err());

        let other = Vocabulary::build([vec!["c".to_string(), "d".to_string()]], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &m, &v).unwrap();
        assert!(load_with_vocab(&p, &v).is_ok());
        assert!(matches!(load_with_vocab(&p, &other), Err(Error::Compatibility(_))));
    }

    #[test]
    fn not_a_checkpoint() {
        assert!(matches!(from_bytes(b"hello"), Err(Error::Integrity(_))));
    }
}
