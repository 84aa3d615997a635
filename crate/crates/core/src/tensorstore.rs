//! The `CGT1` tensor archive and the [`Tensor`] type.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CGT1"
//! u64                      entry count
//! per entry (sorted by name):
//!     u32 name length, name bytes (UTF-8)
//!     u8  rank, rank x u64 dims
//! u32                      metadata pair count
//! per pair (sorted by key):
//!     u32 key length, key bytes, u32 value length, value bytes
//! payload                  every tensor's f32 data, in entry order
//! u64                      FNV-1a checksum of the payload bytes
//! ```
//!
//! The same container holds model weights, trained probes, CoOp contexts and
//! embedding caches. Only model weight archives are required to carry the
//! model metadata keys; see [`load_archive`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CGT1";

/// Metadata keys every model weight archive must carry.
pub const REQUIRED_MODEL_KEYS: [&str; 6] = [
    "model_id",
    "embed_dim",
    "vocab_size",
    "context_length",
    "image_resolution",
    "patch_size",
];

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("not a CGT1 archive (bad magic bytes)")]
    BadMagic,
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("missing required metadata key `{0}`")]
    MissingMetadata(String),
    #[error("invalid metadata `{key}`: {reason}")]
    InvalidMetadata { key: String, reason: String },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ArchiveError> {
        if shape.contains(&0) {
            return Err(ArchiveError::InvalidTensor(format!(
                "shape {shape:?} has a zero dimension"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(ArchiveError::InvalidTensor(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        let n = data.len().max(1);
        let data = if data.is_empty() { vec![0.0] } else { data };
        Self {
            shape: vec![n],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Named tensors plus string metadata. Immutable once loaded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), tensor)
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, ArchiveError> {
        self.entries
            .get(name)
            .ok_or_else(|| ArchiveError::MissingTensor(name.to_string()))
    }

    /// Fetches a tensor and checks its shape.
    pub fn tensor_with_shape(&self, name: &str, shape: &[usize]) -> Result<&Tensor, ArchiveError> {
        let t = self.tensor(name)?;
        if t.shape() != shape {
            return Err(ArchiveError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn entries(&self) -> &BTreeMap<String, Tensor> {
        &self.entries
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Result<&str, ArchiveError> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ArchiveError::MissingMetadata(key.to_string()))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize, ArchiveError> {
        let raw = self.meta(key)?;
        raw.trim()
            .parse()
            .map_err(|_| ArchiveError::InvalidMetadata {
                key: key.to_string(),
                reason: format!("`{raw}` is not a non-negative integer"),
            })
    }

    /// Checks the metadata contract for model weight archives.
    pub fn validate_model_metadata(&self) -> Result<(), ArchiveError> {
        for key in REQUIRED_MODEL_KEYS {
            self.meta(key)?;
        }
        for key in &REQUIRED_MODEL_KEYS[1..] {
            self.meta_usize(key)?;
        }
        if self.meta("model_id")? == "clip-vit-b32" {
            for (key, want) in [
                ("embed_dim", 512),
                ("context_length", 77),
                ("image_resolution", 224),
                ("patch_size", 32),
            ] {
                let got = self.meta_usize(key)?;
                if got != want {
                    return Err(ArchiveError::InvalidMetadata {
                        key: key.to_string(),
                        reason: format!("clip-vit-b32 requires {want}, archive says {got}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload_len: usize = self.entries.values().map(|t| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(payload_len + 1024);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, t) in &self.entries {
            write_str(&mut out, name);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            write_str(&mut out, k);
            write_str(&mut out, v);
        }
        let payload_start = out.len();
        for t in self.entries.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a64(&out[payload_start..]);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let mut r = Reader { buf: bytes, pos: 4 };
        let count = r.u64()?;
        let mut headers = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64()?;
                if d == 0 {
                    return Err(corrupt(format!("tensor `{name}` has a zero dimension")));
                }
                shape.push(usize::try_from(d).map_err(|_| corrupt("dimension overflow"))?);
            }
            headers.push((name, shape));
        }
        let meta_count = r.u32()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..meta_count {
            let k = r.string()?;
            let v = r.string()?;
            if metadata.insert(k.clone(), v).is_some() {
                return Err(corrupt(format!("duplicate metadata key `{k}`")));
            }
        }

        let mut payload_len = 0usize;
        for (name, shape) in &headers {
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| corrupt(format!("tensor `{name}` is too large")))?;
            payload_len = payload_len
                .checked_add(numel)
                .ok_or_else(|| corrupt("payload too large"))?;
        }
        let remaining = bytes.len() - r.pos;
        if remaining != payload_len + 8 {
            return Err(corrupt(format!(
                "header declares {payload_len} payload bytes plus 8-byte trailer, file holds {remaining}"
            )));
        }
        let payload = &bytes[r.pos..r.pos + payload_len];
        let stored = u64::from_le_bytes(bytes[r.pos + payload_len..].try_into().unwrap());
        if fnv1a64(payload) != stored {
            return Err(corrupt("payload checksum mismatch"));
        }

        let mut entries = BTreeMap::new();
        let mut offset = 0;
        for (name, shape) in headers {
            let numel: usize = shape.iter().product();
            let data: Vec<f32> = payload[offset..offset + numel * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += numel * 4;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(format!("tensor `{name}` holds non-finite values")));
            }
            if entries.contains_key(&name) {
                return Err(corrupt(format!("duplicate tensor name `{name}`")));
            }
            entries.insert(name, Tensor { shape, data });
        }
        Ok(Self { entries, metadata })
    }

    /// Reads any CGT1 archive without checking model metadata.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
        for (name, t) in &self.entries {
            if t.shape.len() > u8::MAX as usize {
                return Err(ArchiveError::InvalidTensor(format!("tensor `{name}` rank too high")));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(ArchiveError::InvalidTensor(format!(
                    "tensor `{name}` holds non-finite values"
                )));
            }
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Loads a model weight archive, enforcing the required metadata keys.
pub fn load_archive(path: impl AsRef<Path>) -> Result<TensorArchive, ArchiveError> {
    let archive = TensorArchive::read(path)?;
    archive.validate_model_metadata()?;
    Ok(archive)
}

pub fn save_archive(archive: &TensorArchive, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
    archive.save(path)
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn corrupt(msg: impl Into<String>) -> ArchiveError {
    ArchiveError::CorruptArchive(msg.into())
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("unexpected end of header"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ArchiveError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("w", Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        a.set_metadata("model_id", "toy");
        a
    }

    #[test]
    fn one_tensor_round_trip() {
        let a = sample();
        let b = TensorArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(b.tensor("w").unwrap().shape(), &[2, 3]);
        assert_eq!(a, b);
    }

    #[test]
    fn metadata_only_archive() {
        let mut a = TensorArchive::new();
        a.set_metadata("k", "v");
        let b = TensorArchive::from_bytes(&a.to_bytes()).unwrap();
        assert!(b.entries().is_empty());
        assert_eq!(b.meta("k").unwrap(), "v");
    }

    #[test]
    fn short_payload_is_corrupt() {
        let a = sample();
        let mut bytes = a.to_bytes();
        // drop one float from the payload, keep the trailer
        let trailer: Vec<u8> = bytes[bytes.len() - 8..].to_vec();
        bytes.truncate(bytes.len() - 12);
        bytes.extend_from_slice(&trailer);
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(ArchiveError::CorruptArchive(_))
        ));
    }

    #[test]
    fn trailing_garbage_is_corrupt() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(ArchiveError::CorruptArchive(_))
        ));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let idx = bytes.len() - 9;
        bytes[idx] ^= 0x01;
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(ArchiveError::CorruptArchive(_))
        ));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(TensorArchive::from_bytes(b"GGUF...."), Err(ArchiveError::BadMagic)));
        assert!(matches!(TensorArchive::from_bytes(b""), Err(ArchiveError::BadMagic)));
    }

    #[test]
    fn model_metadata_required() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cgt");
        sample().save(&path).unwrap();
        match load_archive(&path) {
            Err(ArchiveError::MissingMetadata(k)) => assert_eq!(k, "embed_dim"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clip_b32_constants_enforced() {
        let mut a = TensorArchive::new();
        for (k, v) in [
            ("model_id", "clip-vit-b32"),
            ("embed_dim", "512"),
            ("vocab_size", "49408"),
            ("context_length", "77"),
            ("image_resolution", "224"),
            ("patch_size", "16"),
        ] {
            a.set_metadata(k, v);
        }
        assert!(matches!(
            a.validate_model_metadata(),
            Err(ArchiveError::InvalidMetadata { .. })
        ));
        a.set_metadata("patch_size", "32");
        a.validate_model_metadata().unwrap();
    }

    #[test]
    fn rejects_shape_data_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
