//! "DFT1" raw tensor format: 4-byte magic `DFT1`, u32 little-endian rank,
//! rank × u32 little-endian extents, then the row-major little-endian f64
//! payload. The encoding is byte-exact, so f64 values round-trip bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"DFT1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    let rank = u32::try_from(t.shape().len())
        .map_err(|_| Error::Format("tensor rank exceeds u32".to_string()))?;
    w.write_all(&rank.to_le_bytes())?;
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::Format("extent exceeds u32".to_string()))?;
        w.write_all(&e.to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad DFT1 magic {magic:?}")));
    }
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 32 {
        return Err(Error::Format(format!("unreasonable DFT1 rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for _ in 0..rank {
        let e = read_u32(r)? as usize;
        if e == 0 {
            return Err(Error::Format("zero extent in DFT1 shape".to_string()));
        }
        numel = numel
            .checked_mul(e)
            .ok_or_else(|| Error::Format("DFT1 shape overflows".to_string()))?;
        shape.push(e);
    }
    let mut data = Vec::with_capacity(numel);
    let mut buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Tensor::from_vec(&shape, data)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    read_tensor(&mut bytes.as_slice())
}

/// Serializes a tensor to in-memory DFT1 bytes.
pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t).expect("in-memory DFT1 write cannot fail");
    buf
}

/// Writes a sequence of tensors back to back; read with [`read_tensor_seq`].
pub fn write_tensor_seq<W: Write>(w: &mut W, tensors: &[Tensor]) -> Result<()> {
    for t in tensors {
        write_tensor(w, t)?;
    }
    Ok(())
}

/// Reads DFT1 blobs until end of input.
pub fn read_tensor_seq(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut cursor = bytes;
    let mut out = Vec::new();
    while !cursor.is_empty() {
        out.push(read_tensor(&mut cursor)?);
    }
    Ok(out)
}
