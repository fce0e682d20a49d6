//! Binary checkpoint format.
//!
//! ```text
//! "PGNN"                      4 bytes magic
//! version                     u32 LE (currently 1)
//! descriptor length, bytes    u32 LE + UTF-8 canonical architecture descriptor
//! metadata length, bytes      u32 LE + UTF-8 `key=value` lines
//! parameters                  f32 LE, block order: per layer weights then bias
//!                             (row-major), then the value head
//! crc32                       u32 LE over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::{ArchitectureSpec, NetworkParams, NnError};

pub const MAGIC: &[u8; 4] = b"PGNN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("architecture mismatch: checkpoint holds `{found}`, expected `{expected}`")]
    ArchitectureMismatch { expected: String, found: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Free-form run metadata stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckpointMeta(pub BTreeMap<String, String>);

impl CheckpointMeta {
    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn encode(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn decode(text: &str) -> Result<Self, CheckpointError> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Corrupt(format!("bad metadata line `{line}`")))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Self(map))
    }
}

pub fn encode_checkpoint(params: &NetworkParams<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let descriptor = params.arch().descriptor();
    let meta = meta.encode();
    let mut out = Vec::with_capacity(20 + descriptor.len() + meta.len() + 4 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for text in [&descriptor, &meta] {
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
    }
    for block in params.blocks() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt("truncated payload".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self) -> Result<&'a str, CheckpointError> {
        let len = self.u32()? as usize;
        std::str::from_utf8(self.take(len)?).map_err(|_| CheckpointError::Corrupt("invalid UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetworkParams<f32>, CheckpointMeta), CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Corrupt("file too short".into()));
    }
    let (payload, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(CheckpointError::Corrupt("CRC mismatch".into()));
    }
    let mut r = Reader { bytes: payload, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let arch = ArchitectureSpec::parse(r.text()?)?;
    let meta = CheckpointMeta::decode(r.text()?)?;
    let mut params = NetworkParams::<f32>::zeros(&arch);
    for block in params.blocks_mut() {
        let raw = r.take(4 * block.len())?;
        for (v, chunk) in block.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if r.pos != payload.len() {
        return Err(CheckpointError::Corrupt("trailing bytes after parameters".into()));
    }
    Ok((params, meta))
}

pub fn save_checkpoint(params: &NetworkParams<f32>, meta: &CheckpointMeta, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(params, meta))
        .map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams<f32>, CheckpointMeta), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and insists it was saved for `expected`.
pub fn load_checkpoint_for(
    path: &Path,
    expected: &ArchitectureSpec,
) -> Result<(NetworkParams<f32>, CheckpointMeta), CheckpointError> {
    let (params, meta) = load_checkpoint(path)?;
    if params.arch() != expected {
        return Err(CheckpointError::ArchitectureMismatch {
            expected: expected.descriptor(),
            found: params.arch().descriptor(),
        });
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    fn sample() -> NetworkParams<f32> {
        let arch = ArchitectureSpec::parse("8x8:conv(2,3x3,s2,p1):5:3:value").unwrap();
        init_params(&arch, 21)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgnn");
        let p = sample();
        let meta = CheckpointMeta::default().with("episode", 12).with("seed", 5);
        save_checkpoint(&p, &meta, &path).unwrap();
        let (q, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta);
        let bits = |p: &NetworkParams<f32>| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(q.arch(), p.arch());
    }

    #[test]
    fn truncation_and_bit_flips_are_detected() {
        let bytes = encode_checkpoint(&sample(), &CheckpointMeta::default());
        for cut in [5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(CheckpointError::Corrupt(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 0x10;
        assert!(matches!(decode_checkpoint(&flipped), Err(CheckpointError::Corrupt(_))));
        assert!(matches!(decode_checkpoint(b"P5\n2 2\n255\n...."), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = encode_checkpoint(&sample(), &CheckpointMeta::default());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::Version { found: 7 })));
    }

    #[test]
    fn architecture_mismatch_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pgnn");
        let arch = ArchitectureSpec::parse("6400:200:3").unwrap();
        save_checkpoint(&init_params(&arch, 1), &CheckpointMeta::default(), &path).unwrap();
        let other = ArchitectureSpec::parse("6400:100:3").unwrap();
        assert!(matches!(
            load_checkpoint_for(&path, &other),
            Err(CheckpointError::ArchitectureMismatch { .. })
        ));
        assert!(load_checkpoint_for(&path, &arch).is_ok());
    }
}
