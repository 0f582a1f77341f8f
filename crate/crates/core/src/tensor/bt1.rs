//! `BT1` binary tensor blocks: magic `BEART1`, u32-LE rank, rank×u32-LE
//! extents, then row-major little-endian `f32` elements.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const BT1_MAGIC: &[u8; 6] = b"BEART1";

pub fn write_bt1<T: Real, W: Write>(out: &mut W, tensor: &Tensor<T>) -> std::io::Result<()> {
    out.write_all(BT1_MAGIC)?;
    out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &e in tensor.shape() {
        out.write_all(&(e as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.len() * 4);
    for &v in tensor.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

/// Reads one tensor block starting at `bytes[*pos]`, advancing `pos`.
/// `base` is added to reported offsets so callers embedding blocks in a
/// larger file get absolute positions.
pub fn read_bt1(bytes: &[u8], pos: &mut usize, base: u64) -> Result<Tensor<f32>> {
    let start = *pos;
    let at = |p: usize| base + p as u64;
    let magic = take(bytes, pos, BT1_MAGIC.len(), base)?;
    if magic != BT1_MAGIC {
        return Err(Error::format("BT1 tensor", at(start), "bad magic"));
    }
    let rank = read_u32(bytes, pos, base)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::format("BT1 tensor", at(*pos - 4), format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = read_u32(bytes, pos, base)? as usize;
        if e == 0 {
            return Err(Error::format("BT1 tensor", at(*pos - 4), "zero extent"));
        }
        shape.push(e);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::format("BT1 tensor", at(start), "element count overflows"))?;
    let raw = take(bytes, pos, count.checked_mul(4).unwrap_or(usize::MAX), base)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor_file<T: Real>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_bt1(&mut buf, tensor).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let t = read_bt1(&bytes, &mut pos, 0)?;
    if pos != bytes.len() {
        return Err(Error::format("BT1 tensor", pos as u64, "trailing bytes"));
    }
    Ok(t)
}

pub(crate) fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, base: u64) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
    match end {
        Some(end) => {
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        }
        None => Err(Error::format(
            "binary block",
            base + *pos as u64,
            format!("truncated: need {n} bytes, {} left", bytes.len() - *pos),
        )),
    }
}

pub(crate) fn read_u32(bytes: &[u8], pos: &mut usize, base: u64) -> Result<u32> {
    let b = take(bytes, pos, 4, base)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}
