//! Binary cache for preprocessed datasets.
//!
//! The cache key is the sha256 of the raw TSV bytes together with the
//! preprocessing thresholds, so any change to the source file or the
//! filter settings misses cleanly. A corrupt or mismatched cache entry
//! is ignored and rewritten, never trusted.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{parse_interactions, preprocess, Dataset};

const MAGIC: &[u8; 4] = b"LTDC";
const VERSION: u32 = 1;

/// Hex cache key for a TSV byte string and filter thresholds.
pub fn cache_key(tsv_bytes: &[u8], min_item: usize, min_user: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update((min_item as u64).to_le_bytes());
    hasher.update((min_user as u64).to_le_bytes());
    hasher.update(tsv_bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn serialize(key: &str, ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    push_str(&mut buf, key);
    buf.extend_from_slice(&(ds.item_names.len() as u32).to_le_bytes());
    for name in &ds.item_names {
        push_str(&mut buf, name);
    }
    buf.extend_from_slice(&(ds.user_names.len() as u32).to_le_bytes());
    for name in &ds.user_names {
        push_str(&mut buf, name);
    }
    for seq in &ds.sequences {
        buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
        for &item in seq {
            buf.extend_from_slice(&item.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("cache entry truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint("cache entry not UTF-8".into()))
    }
}

fn deserialize(data: &[u8]) -> Result<(String, Dataset)> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a dataset cache entry".into()));
    }
    if r.u32()? != VERSION {
        return Err(Error::Checkpoint("dataset cache version mismatch".into()));
    }
    let key = r.string()?;
    let n_items = r.u32()? as usize;
    let mut item_names = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        item_names.push(r.string()?);
    }
    let n_users = r.u32()? as usize;
    let mut user_names = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        user_names.push(r.string()?);
    }
    let mut sequences = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let len = r.u32()? as usize;
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            seq.push(r.u32()?);
        }
        sequences.push(seq);
    }
    if r.pos != data.len() {
        return Err(Error::Checkpoint("trailing bytes in cache entry".into()));
    }
    Ok((key, Dataset { sequences, user_names, item_names }))
}

fn entry_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(format!("{key}.ltdc"))
}

/// Parse and preprocess `tsv_path`, consulting `cache_dir` first when
/// given. Cache misses (absent, corrupt, or key mismatch) recompute
/// from source and rewrite the entry.
pub fn load_or_preprocess(
    tsv_path: &Path,
    min_item: usize,
    min_user: usize,
    cache_dir: Option<&Path>,
) -> Result<Dataset> {
    let bytes = fs::read(tsv_path)?;
    let key = cache_key(&bytes, min_item, min_user);
    if let Some(dir) = cache_dir {
        let path = entry_path(dir, &key);
        if let Ok(data) = fs::read(&path) {
            if let Ok((stored_key, ds)) = deserialize(&data) {
                if stored_key == key {
                    return Ok(ds);
                }
            }
        }
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Parse { line: 0, msg: "file is not UTF-8".into() })?;
    let raw = parse_interactions(&text)?;
    let ds = preprocess(&raw, min_item, min_user)?;
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir)?;
        let path = entry_path(dir, &key);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serialize(&key, &ds))?;
        fs::rename(&tmp, &path)?;
    }
    Ok(ds)
}
