//! Versioned binary parameter file.
//!
//! Layout, all integers little-endian: 8-byte magic `FTPARAMS`, `u32`
//! version, `u32` matrix count, then per matrix a `u32` name length, the
//! UTF-8 name, `u64` rows, `u64` cols and `rows·cols` row-major `f64`
//! values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result, ResultExt};
use crate::linalg::Matrix;
use crate::model::ParamSet;

pub const MAGIC: &[u8; 8] = b"FTPARAMS";
pub const VERSION: u32 = 1;

pub fn encode_params(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::data(format!("model file truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Decode a parameter file; every matrix comes back trainable.
pub fn decode_params(bytes: &[u8]) -> Result<ParamSet> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::data("not a parameter file (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported parameter file version {version}")));
    }
    let count = c.u32("matrix count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?).map_err(|_| Error::data("matrix name is not UTF-8"))?;
        let rows = c.u64("rows")? as usize;
        let cols = c.u64("cols")? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::data(format!("matrix {name:?} shape overflows")))?;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::data("matrix too large"))?, name)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        params.push(name, Matrix::from_vec(rows, cols, data)?, true)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::data(format!("{} trailing bytes after the last matrix", bytes.len() - c.pos)));
    }
    Ok(params)
}

pub fn write_params(path: &Path, params: &ParamSet) -> Result<()> {
    let mut f = std::fs::File::create(path).context(|| format!("creating {}", path.display()))?;
    f.write_all(&encode_params(params)).context(|| format!("writing {}", path.display()))
}

pub fn read_params(path: &Path) -> Result<ParamSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .context(|| format!("reading {}", path.display()))?;
    decode_params(&bytes).context(|| path.display().to_string())
}
