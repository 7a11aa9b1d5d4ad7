use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamSet;
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LTAP";
const VERSION: u32 = 1;

/// Serialize parameters to a binary checkpoint.
///
/// Layout, all integers little-endian: magic "LTAP", version u32,
/// tensor count u32; then per tensor in name order: name length u32,
/// UTF-8 name, rank u32, each dim as u64, values as f64 bits.
///
/// The write goes to a sibling temp file first and is renamed into
/// place, so a crash never leaves a half-written checkpoint behind.
pub fn write_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(params.len())
        .map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        let name_len = u32::try_from(name_bytes.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name_bytes);
        let rank = u32::try_from(tensor.shape().len())
            .map_err(|_| Error::Checkpoint(format!("rank too large: {name}")))?;
        buf.extend_from_slice(&rank.to_le_bytes());
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} (need {n} bytes at offset {})",
                self.pos
            )));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Read a checkpoint written by [`write_checkpoint`]. Bit-exact inverse.
pub fn read_checkpoint(path: &Path) -> Result<ParamSet> {
    let data = fs::read(path)?;
    let mut cur = Cursor { data: &data, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:02x?}, not a checkpoint", magic)));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = cur.u32("tensor count")?;
    let mut params = ParamSet::new();
    for t in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name_bytes = cur.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint(format!("tensor {t}: name is not UTF-8")))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let dim = cur.u64("dim")?;
            shape.push(usize::try_from(dim).map_err(|_| Error::Checkpoint(format!("{name}: dim overflow")))?);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 8, "values")?;
        let values: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor::new(shape, values)?);
    }
    if cur.pos != data.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after last tensor", data.len() - cur.pos)));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("enc.emb", Tensor::matrix(3, 2, vec![0.1, -0.2, 1e-300, 4.0, -0.0, 6.5]).unwrap());
        p.insert("disc.b", Tensor::row(vec![0.25]));
        p
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ltap");
        let p = sample();
        write_checkpoint(&path, &p).unwrap();
        let q = read_checkpoint(&path).unwrap();
        for ((na, ta), (nb, tb)) in p.iter().zip(q.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            for (x, y) in ta.values().iter().zip(tb.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn empty_set_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ltap");
        write_checkpoint(&path, &ParamSet::new()).unwrap();
        assert!(read_checkpoint(&path).unwrap().is_empty());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ltap");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ltap");
        write_checkpoint(&path, &sample()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ltap");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"LTAP");
        bytes.extend_from_slice(&9u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
