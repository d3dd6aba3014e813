//! Little-endian binary container shared by dataset and weights files.
//!
//! Layout: 8-byte magic, `u32` format version, then a sequence of
//! primitive fields. Float arrays are length-prefixed (`u64`) runs of
//! `f64`; strings are length-prefixed UTF-8.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Writer {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Writer { buf }
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        fs::write(path, &self.buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version; `kind` names the file type in errors.
    pub fn open(buf: &'a [u8], magic: &[u8; 8], kind: &'static str, version: u32) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != magic {
            return Err(Error::BadMagic { expected: kind });
        }
        let found = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if found != version {
            return Err(Error::Version {
                found,
                supported: version,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let avail = self.buf.len() - self.pos;
        if n > avail {
            return Err(Error::Truncated {
                offset: self.buf.len(),
                needed: n - avail,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Corrupt(format!("length {n} too large")))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Corrupt(format!("array length {n} too large"))
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes at offset {}",
                self.buf.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// `<path>.json`, the human-readable sidecar next to a container.
pub(crate) fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTFILE";

    fn sample() -> Vec<u8> {
        let mut w = Writer::new(MAGIC, 3);
        w.str("hello");
        w.f64s(&[1.5, -0.0, f64::MIN_POSITIVE]);
        w.buf
    }

    #[test]
    fn round_trip() {
        let buf = sample();
        let mut r = Reader::open(&buf, MAGIC, "test", 3).unwrap();
        assert_eq!(r.str().unwrap(), "hello");
        let v = r.f64s().unwrap();
        assert_eq!(v[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(v[2], f64::MIN_POSITIVE);
        r.finish().unwrap();
    }

    #[test]
    fn truncation_reports_offset() {
        let buf = sample();
        let cut = &buf[..buf.len() - 5];
        let mut r = Reader::open(cut, MAGIC, "test", 3).unwrap();
        r.str().unwrap();
        match r.f64s() {
            Err(Error::Truncated { offset, needed }) => {
                assert_eq!(offset, cut.len());
                assert_eq!(needed, 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn guards() {
        let buf = sample();
        assert!(matches!(
            Reader::open(&buf, b"OTHERMAG", "test", 3),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            Reader::open(&buf, MAGIC, "test", 2),
            Err(Error::Version {
                found: 3,
                supported: 2
            })
        ));
    }
}
