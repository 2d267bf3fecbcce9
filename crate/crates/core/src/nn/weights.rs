//! The `.gprl` weight file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    4 bytes  "GPRL"
//! version  u32      1
//! count    u32      number of entries
//! entry*:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u8,  dims u32[rank]
//!   data     f32[product(dims)]
//! ```
//!
//! Values are stored as `f32`; stores whose values are `f32`-representable
//! (see [`ParamStore::round_to_f32`]) round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::store::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GPRL";
pub const VERSION: u32 = 1;

pub fn write_weights(store: &ParamStore, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid("rank above 255"))?;
        out.write_all(&[rank])?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_weights(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(store, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_weights(bytes: &[u8]) -> Result<ParamStore> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let at = c.pos;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: at,
            message: format!("unsupported version {version}"),
        });
    }
    let count = c.u32("entry count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = c.pos;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?).map_err(|_| Error::Format {
            offset: at + 4,
            message: "name is not UTF-8".into(),
        })?;
        let rank = c.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32("dims")? as usize);
        }
        let at_data = c.pos;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Format {
                offset: at_data,
                message: format!("implausible dims {dims:?}"),
            })?;
        let raw = c.take(4 * n, "data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format {
            offset: at_data,
            message: e.to_string(),
        })?;
        store.insert(name, t).map_err(|e| Error::Format {
            offset: at,
            message: e.to_string(),
        })?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos,
            message: "trailing bytes".into(),
        });
    }
    Ok(store)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "a.weight",
            Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 0.125, 7.0, -0.0]).unwrap(),
        )
        .unwrap();
        s.insert("b", Tensor::scalar(2.5)).unwrap();
        s
    }

    #[test]
    fn layout_is_bit_exact() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(vec![1.0])).unwrap();
        let mut buf = Vec::new();
        write_weights(&s, &mut buf).unwrap();
        let expect: Vec<u8> = [
            b"GPRL".as_slice(),
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            b"x",
            &[1u8],
            &1u32.to_le_bytes(),
            &1.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(buf, expect);
    }

    #[test]
    fn empty_store_is_valid() {
        let mut buf = Vec::new();
        write_weights(&ParamStore::new(), &mut buf).unwrap();
        assert_eq!(buf.len(), 12);
        assert!(read_weights(&buf).unwrap().is_empty());
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let mut buf = Vec::new();
        write_weights(&sample(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_weights(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let cut = &buf[..buf.len() - 3];
        match read_weights(cut) {
            Err(Error::Format { offset, .. }) => assert!(offset > 12 && offset < buf.len()),
            other => panic!("expected format error, got {other:?}"),
        }
        let mut ver = buf.clone();
        ver[4] = 2;
        assert!(matches!(
            read_weights(&ver),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/w.gprl");
        save_weights(&sample(), &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), sample());
        assert!(matches!(
            load_weights(dir.path().join("missing.gprl")),
            Err(Error::MissingFile(_))
        ));
    }
}
