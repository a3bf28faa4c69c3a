//! `WZT1` binary tensor files.
//!
//! Layout: magic `b"WZT1"` | `u8` ndim | ndim × `u32` LE dims | row-major
//! `f32` LE payload. The trailing digit of the magic is the format version.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tensor3};

pub const MAGIC: &[u8; 4] = b"WZT1";

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(dims: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(Error::dim(format!(
            "tensor dims {dims:?} hold {count} values, got {}",
            data.len()
        )));
    }
    let ndim = u8::try_from(dims.len()).map_err(|_| Error::dim("too many dimensions"))?;
    let mut out = Vec::with_capacity(5 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(ndim);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::dim(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RawTensor> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic or version (expected WZT1)"));
    }
    let ndim = bytes[4] as usize;
    let header = 5 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format(path, "truncated header"));
    }
    let dims: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != 4 * count {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} bytes, dims {dims:?} need {}",
                payload.len(),
                4 * count
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok(RawTensor { dims, data })
}

pub fn write(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let bytes = encode(dims, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<RawTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write(path, &[m.rows(), m.cols()], m.as_slice())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let raw = read(path)?;
    match raw.dims[..] {
        [r, c] => Matrix::from_vec(r, c, raw.data),
        _ => Err(Error::format(
            path,
            format!("expected a 2-d tensor, found dims {:?}", raw.dims),
        )),
    }
}

pub fn write_tensor3(path: &Path, t: &Tensor3) -> Result<()> {
    write(path, &t.dims(), t.as_slice())
}

pub fn read_tensor3(path: &Path) -> Result<Tensor3> {
    let raw = read(path)?;
    match raw.dims[..] {
        [a, b, c] => Tensor3::from_vec(a, b, c, raw.data),
        _ => Err(Error::format(
            path,
            format!("expected a 3-d tensor, found dims {:?}", raw.dims),
        )),
    }
}
