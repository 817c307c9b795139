//! UWT1 checkpoint format.
//!
//! Layout: magic `UWT1`, little-endian u32 record count, then per tensor:
//! u32 name length, UTF-8 name, u32 rank, u32 extents, then the values as
//! 64-bit little-endian floats. Records are written in name order, so
//! save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const UWT1_MAGIC: &[u8; 4] = b"UWT1";

pub fn encode_tensors<S: Scalar>(tensors: &BTreeMap<String, Tensor<S>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(UWT1_MAGIC);
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::contract("too many tensors for checkpoint"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to64().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8], path: &str) -> Result<BTreeMap<String, Tensor<f64>>> {
    let fmt = |offset: usize, reason: String| Error::Format {
        path: path.to_string(),
        offset: offset as u64,
        reason,
    };
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(fmt(bytes.len(), format!("truncated at record offset {}", *pos)));
        }
        let slice = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(slice)
    };
    let magic = take(&mut pos, 4)?;
    if magic != UWT1_MAGIC {
        return Err(fmt(0, format!("bad magic {magic:?}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name_offset = pos;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|e| fmt(name_offset, format!("name is not utf-8: {e}")))?
            .to_string();
        let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        out.insert(name, Tensor::from_vec(shape, data)?);
    }
    if pos != bytes.len() {
        return Err(fmt(pos, "trailing bytes after final record".to_string()));
    }
    Ok(out)
}

pub fn write_tensors<S: Scalar>(
    path: &Path,
    tensors: &BTreeMap<String, Tensor<S>>,
) -> Result<()> {
    let bytes = encode_tensors(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes to a sibling temp file, then renames into place, so a crash never
/// leaves a torn checkpoint.
pub fn write_tensors_atomic<S: Scalar>(
    path: &Path,
    tensors: &BTreeMap<String, Tensor<S>>,
) -> Result<()> {
    let bytes = encode_tensors(tensors)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_tensors(path: &Path) -> Result<BTreeMap<String, Tensor<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_tensors(&bytes, &path.display().to_string())
}
