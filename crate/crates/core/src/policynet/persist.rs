//! Versioned binary parameter container.
//!
//! Layout (little endian): magic `HSNP`, format version (u32), JSON-encoded
//! [`NetworkShape`] (u32 length + bytes), tensor count (u32), then per
//! tensor: name (u32 length + UTF-8), rank (u32), dims (u64 each) and the
//! f64 values. Momentum velocity is not stored.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::network::{Layers, NetworkParams, NetworkShape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HSNP";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut out: W, params: &NetworkParams) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let shape = serde_json::to_vec(&params.shape).map_err(|e| Error::Persistence(e.to_string()))?;
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    buf.extend_from_slice(&shape);
    let tensors = params.weights.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, values) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn save_params(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_params(&mut buf, params)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Persistence(format!("file truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a parameter file. Nothing is returned unless the whole file
/// parses and every tensor matches the shape recorded in its header.
pub fn read_params(bytes: &[u8]) -> Result<NetworkParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Persistence("not a parameter file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Persistence(format!(
            "unsupported parameter format version {version} (expected {VERSION})"
        )));
    }
    let len = r.u32()? as usize;
    let shape: NetworkShape =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Persistence(format!("bad shape header: {e}")))?;
    shape.validate()?;
    let mut params = NetworkParams::zeros(shape)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .weights
        .tensors()
        .into_iter()
        .map(|(n, d, _)| (n, d))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Persistence(format!(
            "file holds {count} tensors, shape header implies {}",
            expected.len()
        )));
    }
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(count);
    for (want_name, want_dims) in &expected {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Persistence("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &name != want_name || &dims != want_dims {
            return Err(Error::Shape {
                layer: name,
                expected: want_dims.clone(),
                found: dims,
            });
        }
        let total: usize = dims.iter().product();
        let raw = r.take(total.checked_mul(8).ok_or_else(|| Error::Persistence("tensor too large".into()))?)?;
        values.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Persistence(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    for (dst, src) in params.weights.tensors_mut().into_iter().zip(values) {
        dst.copy_from_slice(&src);
    }
    Ok(params)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let bytes = fs::read(path.as_ref())
        .map_err(|e| Error::Persistence(format!("{}: {e}", path.as_ref().display())))?;
    read_params(&bytes)
}

/// Loads a file and checks it against the architecture the caller needs,
/// naming the first layer that disagrees.
pub fn load_params_expecting(path: impl AsRef<Path>, shape: &NetworkShape) -> Result<NetworkParams> {
    let params = load_params(path)?;
    let want = Layers::zeros(shape);
    let want = want.tensors();
    let got = params.weights.tensors();
    for i in 0..want.len().max(got.len()) {
        match (want.get(i), got.get(i)) {
            (Some((wn, wd, _)), Some((gn, gd, _))) if wn == gn && wd == gd => {}
            (Some((wn, wd, _)), Some((_, gd, _))) => {
                return Err(Error::Shape {
                    layer: wn.clone(),
                    expected: wd.clone(),
                    found: gd.clone(),
                })
            }
            (Some((wn, wd, _)), None) => {
                return Err(Error::Shape {
                    layer: wn.clone(),
                    expected: wd.clone(),
                    found: vec![],
                })
            }
            (None, Some((gn, gd, _))) => {
                return Err(Error::Shape {
                    layer: gn.clone(),
                    expected: vec![],
                    found: gd.clone(),
                })
            }
            (None, None) => unreachable!(),
        }
    }
    if &params.shape != shape {
        return Err(Error::Persistence(format!(
            "architecture header differs: file {:?}, expected {:?}",
            params.shape, shape
        )));
    }
    Ok(params)
}
