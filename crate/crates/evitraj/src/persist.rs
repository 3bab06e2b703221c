//! On-disk container: a human-readable text manifest next to a flat
//! little-endian binary payload.
//!
//! `<base>.manifest` holds `key=value` lines (sorted, so identical content
//! produces identical bytes) including the payload's SHA-256; `<base>.bin`
//! holds the raw numbers. Datasets store f32, checkpoints f64 — the dtype
//! is declared in the manifest, not guessed from file size.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

const MAGIC: &str = "evitraj-container v1";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("payload hash mismatch for {path}: manifest says {expected}, file has {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("payload length mismatch for {path}: manifest says {expected} elements, file has {actual} bytes")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("manifest {path} missing key {key}")]
    MissingKey { path: PathBuf, key: String },
    #[error("refusing to overwrite {path} (pass force to replace)")]
    Exists { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            Payload::F32(_) => "f32",
            Payload::F64(_) => "f64",
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            Payload::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Payload::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            Payload::F32(v) => Some(v),
            Payload::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            Payload::F64(v) => Some(v),
            Payload::F32(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub payload: Payload,
}

impl Container {
    pub fn new(payload: Payload) -> Self {
        Container {
            meta: BTreeMap::new(),
            payload,
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let v = value.to_string();
        debug_assert!(key_ok(key), "bad manifest key {key:?}");
        debug_assert!(!v.contains('\n'), "manifest value may not contain newlines");
        self.meta.insert(key.to_string(), v);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str, PersistError> {
        self.get(key).ok_or_else(|| PersistError::MissingKey {
            path: path.to_path_buf(),
            key: key.to_string(),
        })
    }
}

fn key_ok(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-')
}

fn manifest_path(base: &Path) -> PathBuf {
    base.with_extension("manifest")
}

fn payload_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Write `<base>.manifest` + `<base>.bin`. Fails if either file exists
/// unless `force` is set.
pub fn write_container(base: &Path, c: &Container, force: bool) -> Result<(), PersistError> {
    let mpath = manifest_path(base);
    let ppath = payload_path(base);
    if !force {
        for p in [&mpath, &ppath] {
            if p.exists() {
                return Err(PersistError::Exists { path: p.clone() });
            }
        }
    }
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| PersistError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
    }

    let bytes = c.payload.to_bytes();
    let mut text = String::new();
    text.push_str(MAGIC);
    text.push('\n');
    let _ = writeln!(text, "payload_dtype={}", c.payload.dtype());
    let _ = writeln!(text, "payload_len={}", c.payload.len());
    let _ = writeln!(text, "payload_sha256={}", sha256_hex(&bytes));
    for (k, v) in &c.meta {
        assert!(key_ok(k) && !k.starts_with("payload_"), "reserved or bad key {k:?}");
        let _ = writeln!(text, "{k}={v}");
    }

    fs::write(&ppath, &bytes).map_err(|source| PersistError::Io {
        path: ppath.clone(),
        source,
    })?;
    fs::write(&mpath, text.as_bytes()).map_err(|source| PersistError::Io {
        path: mpath.clone(),
        source,
    })?;
    Ok(())
}

/// Read and verify a container written by [`write_container`].
///
/// Length is checked before the hash so a truncated payload reports as
/// truncation, not as generic corruption.
pub fn read_container(base: &Path) -> Result<Container, PersistError> {
    let mpath = manifest_path(base);
    let ppath = payload_path(base);
    let text = fs::read_to_string(&mpath).map_err(|source| PersistError::Io {
        path: mpath.clone(),
        source,
    })?;

    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(PersistError::Format {
            path: mpath,
            reason: format!("first line is not `{MAGIC}`"),
        });
    }
    let mut meta = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(PersistError::Format {
                path: mpath,
                reason: format!("line {}: no `=` in {line:?}", i + 2),
            });
        };
        if !key_ok(k) {
            return Err(PersistError::Format {
                path: mpath,
                reason: format!("line {}: bad key {k:?}", i + 2),
            });
        }
        if meta.insert(k.to_string(), v.to_string()).is_some() {
            return Err(PersistError::Format {
                path: mpath,
                reason: format!("duplicate key {k:?}"),
            });
        }
    }

    let dtype = meta
        .remove("payload_dtype")
        .ok_or_else(|| PersistError::MissingKey {
            path: mpath.clone(),
            key: "payload_dtype".into(),
        })?;
    let len: usize = meta
        .remove("payload_len")
        .ok_or_else(|| PersistError::MissingKey {
            path: mpath.clone(),
            key: "payload_len".into(),
        })?
        .parse()
        .map_err(|e| PersistError::Format {
            path: mpath.clone(),
            reason: format!("payload_len: {e}"),
        })?;
    let expected_sha = meta
        .remove("payload_sha256")
        .ok_or_else(|| PersistError::MissingKey {
            path: mpath.clone(),
            key: "payload_sha256".into(),
        })?;

    let bytes = fs::read(&ppath).map_err(|source| PersistError::Io {
        path: ppath.clone(),
        source,
    })?;
    let elem = match dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => {
            return Err(PersistError::Format {
                path: mpath,
                reason: format!("unknown payload_dtype {other:?}"),
            })
        }
    };
    if bytes.len() != len * elem {
        return Err(PersistError::LengthMismatch {
            path: ppath,
            expected: len,
            actual: bytes.len(),
        });
    }
    let actual_sha = sha256_hex(&bytes);
    if actual_sha != expected_sha {
        return Err(PersistError::HashMismatch {
            path: ppath,
            expected: expected_sha,
            actual: actual_sha,
        });
    }

    let payload = match dtype.as_str() {
        "f32" => Payload::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => Payload::F64(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(Container { meta, payload })
}

/// SHA-256 of the payload file as written; callers embed it in other
/// manifests to pin cross-artifact identity (e.g. which anchor set a
/// checkpoint was trained against).
pub fn payload_hash(base: &Path) -> Result<String, PersistError> {
    let ppath = payload_path(base);
    let bytes = fs::read(&ppath).map_err(|source| PersistError::Io {
        path: ppath.clone(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(Payload::F32(vec![1.5, -2.25, 0.0, 3.125e-3]));
        c.set("kind", "test");
        c.set("config.scale", "0.1");
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("artifact");
        let c = sample();
        write_container(&base, &c, false).unwrap();
        let back = read_container(&base).unwrap();
        assert_eq!(back.payload, c.payload);
        assert_eq!(back.get("kind"), Some("test"));
        assert_eq!(back.get("config.scale"), Some("0.1"));

        // Same content twice => identical manifest bytes (map order is sorted).
        let base2 = dir.path().join("artifact2");
        write_container(&base2, &c, false).unwrap();
        let m1 = fs::read(base.with_extension("manifest")).unwrap();
        let m2 = fs::read(base2.with_extension("manifest")).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn f64_round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        let vals = vec![1.0 / 3.0, f64::MIN_POSITIVE, -0.0, 1e308];
        write_container(&base, &Container::new(Payload::F64(vals.clone())), false).unwrap();
        let back = read_container(&base).unwrap();
        let got = back.payload.as_f64().unwrap();
        for (a, b) in got.iter().zip(&vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tampered_payload_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("artifact");
        write_container(&base, &sample(), false).unwrap();
        let ppath = base.with_extension("bin");
        let mut bytes = fs::read(&ppath).unwrap();
        bytes[3] ^= 0x40;
        fs::write(&ppath, &bytes).unwrap();
        assert!(matches!(
            read_container(&base),
            Err(PersistError::HashMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_detected_as_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("artifact");
        write_container(&base, &sample(), false).unwrap();
        let ppath = base.with_extension("bin");
        let bytes = fs::read(&ppath).unwrap();
        fs::write(&ppath, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_container(&base),
            Err(PersistError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_manifest_hash_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("artifact");
        write_container(&base, &sample(), false).unwrap();
        let mpath = base.with_extension("manifest");
        let text: String = fs::read_to_string(&mpath)
            .unwrap()
            .lines()
            .map(|line| {
                if let Some(hex) = line.strip_prefix("payload_sha256=") {
                    let flipped = if hex.starts_with('0') { "1" } else { "0" };
                    format!("payload_sha256={flipped}{}\n", &hex[1..])
                } else {
                    format!("{line}\n")
                }
            })
            .collect();
        fs::write(&mpath, text).unwrap();
        let err = read_container(&base);
        assert!(
            matches!(err, Err(PersistError::HashMismatch { .. })),
            "{err:?}"
        );
    }

    #[test]
    fn empty_payload_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("empty");
        write_container(&base, &Container::new(Payload::F32(vec![])), false).unwrap();
        let back = read_container(&base).unwrap();
        assert_eq!(back.payload.len(), 0);
    }

    #[test]
    fn existing_files_need_force() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("artifact");
        write_container(&base, &sample(), false).unwrap();
        assert!(matches!(
            write_container(&base, &sample(), false),
            Err(PersistError::Exists { .. })
        ));
        write_container(&base, &sample(), true).unwrap();
    }

    #[test]
    fn unknown_dtype_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("artifact");
        write_container(&base, &sample(), false).unwrap();
        let mpath = base.with_extension("manifest");
        let text = fs::read_to_string(&mpath)
            .unwrap()
            .replace("payload_dtype=f32", "payload_dtype=f16");
        fs::write(&mpath, text).unwrap();
        assert!(matches!(
            read_container(&base),
            Err(PersistError::Format { .. })
        ));
    }
}
