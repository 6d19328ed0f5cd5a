//! Checkpoint container: "NVSC" magic, version, then a named tensor
//! table of 32-bit little-endian floats. Round trips are bit-exact.

use std::path::Path;

use crate::error::DataError;
use crate::io::write_atomic;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"NVSC";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>) -> Result<(), DataError> {
    let mut names: Vec<&str> = store.names().collect();
    names.sort_unstable();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in names {
        let (shape, data) = store.get(name).unwrap();
        let nb = name.as_bytes();
        assert!(nb.len() <= u16::MAX as usize && shape.len() <= u8::MAX as usize);
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        if self.offset + n > self.buf.len() {
            return Err(DataError::Checkpoint {
                offset: self.offset as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>, DataError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, offset: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(DataError::Checkpoint {
            offset: 0,
            reason: format!("bad magic {magic:x?}, expected {MAGIC:x?}"),
        });
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(DataError::Checkpoint {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = u32::from_le_bytes(r.take(4, "tensor count")?.try_into().unwrap());
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap());
        let name_off = r.offset as u64;
        let name = std::str::from_utf8(r.take(name_len as usize, "name")?)
            .map_err(|e| DataError::Checkpoint {
                offset: name_off,
                reason: format!("non-UTF-8 name: {e}"),
            })?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(r.take(8, "dimension")?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(4 * numel, &format!("data of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, shape, data);
    }
    if r.offset != buf.len() {
        return Err(DataError::Checkpoint {
            offset: r.offset as u64,
            reason: format!("{} trailing bytes", buf.len() - r.offset),
        });
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("net.w", vec![2, 3], vec![1.5, -2.25, 0.0, f32::MIN_POSITIVE, 3.75, -0.125]);
        s.insert("net.b", vec![3], vec![0.1, 0.2, 0.3]);
        s.insert("scalarish", vec![1], vec![42.0]);
        s
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.nvsc");
        let store = sample_store();
        save_checkpoint(&path, &store).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        for (name, shape, data) in store.iter() {
            let (ls, ld) = loaded.get(name).unwrap();
            assert_eq!(ls, shape);
            let a: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = ld.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "bit mismatch in {name}");
        }
    }

    #[test]
    fn truncated_file_errors_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.nvsc");
        save_checkpoint(&path, &sample_store()).unwrap();
        let full = std::fs::read(&path).unwrap();
        let cut = full.len() - 5;
        std::fs::write(&path, &full[..cut]).unwrap();
        match load_checkpoint(&path) {
            Err(DataError::Checkpoint { offset, reason }) => {
                assert!(offset <= cut as u64);
                assert!(reason.contains("truncated"), "reason: {reason}");
            }
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn foreign_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.nvsc");
        std::fs::write(&path, b"PKZZ\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match load_checkpoint(&path) {
            Err(DataError::Checkpoint { offset: 0, reason }) => {
                assert!(reason.contains("magic"));
            }
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.nvsc");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&7u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DataError::Checkpoint { offset: 4, .. })
        ));
    }
}
