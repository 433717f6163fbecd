use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use parking_lot::Mutex;
use sha2::{Digest, Sha256};

/// Embedding cache keyed by `(model, sha256(text))`.
///
/// Vectors are kept in memory and, when a directory is configured, written as
/// little-endian `f32` files so a cache hit is bit-identical to the original
/// response. Writes are serialized through one lock.
#[derive(Debug)]
pub struct EmbeddingCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Vec<f32>>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self { dir: None, memory: Mutex::new(HashMap::new()) }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()), memory: Mutex::new(HashMap::new()) }
    }

    pub fn key(model: &str, text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(model.as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key[..2]).join(format!("{key}.f32")))
    }

    pub fn get(&self, model: &str, text: &str) -> Option<Vec<f32>> {
        let key = Self::key(model, text);
        if let Some(v) = self.memory.lock().get(&key) {
            return Some(v.clone());
        }
        let bytes = fs::read(self.path(&key)?).ok()?;
        if bytes.is_empty() || bytes.len() % 4 != 0 {
            return None;
        }
        let v: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.memory.lock().insert(key, v.clone());
        Some(v)
    }

    pub fn put(&self, model: &str, text: &str, vector: &[f32]) {
        let key = Self::key(model, text);
        let mut memory = self.memory.lock();
        if let Some(path) = self.path(&key) {
            if let Err(err) = write_atomic(&path, vector) {
                tracing::warn!(path = %path.display(), error = %err, "embedding cache write failed");
            }
        }
        memory.insert(key, vector.to_vec());
    }
}

fn write_atomic(path: &std::path::Path, vector: &[f32]) -> std::io::Result<()> {
    let parent = path.parent().expect("cache paths have a parent");
    fs::create_dir_all(parent)?;
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp)?;
    for x in vector {
        file.write_all(&x.to_le_bytes())?;
    }
    file.sync_all()?;
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_cache_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![0.1f32, -0.333_333_34, 1.0e-30, 0.6];
        EmbeddingCache::on_disk(dir.path()).put("m", "text", &v);
        let fresh = EmbeddingCache::on_disk(dir.path());
        let got = fresh.get("m", "text").unwrap();
        assert_eq!(
            got.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(fresh.get("other-model", "text").is_none());
    }
}
