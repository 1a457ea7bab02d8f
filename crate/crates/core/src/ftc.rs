//! FTC tensor container: `"FTC1"`, `u32` rank, `rank x u32` dims, then the
//! row-major `f32` payload. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FTC1";

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.base + self.buf.len() as u64,
                format!("truncated {what}: needed {n} bytes at offset {}", self.base + self.pos as u64),
            ));
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

/// Decodes one tensor from the front of `buf`, returning it and the number
/// of bytes consumed. `base` is added to reported error offsets.
pub fn decode_at(buf: &[u8], base: u64) -> Result<(Tensor<f32>, usize)> {
    let mut r = Reader { buf, pos: 0, base };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(base, format!("bad magic {magic:?}, expected \"FTC1\"")));
    }
    let rank = r.u32("rank")? as usize;
    if rank > 16 {
        return Err(Error::format(base + 4, format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32("dimension")? as usize);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(base + 8, "dimension product overflows"))?;
    let payload = r.take(
        n.checked_mul(4)
            .ok_or_else(|| Error::format(base + 8, "payload size overflows"))?,
        "payload",
    )?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((Tensor::new(&dims, data)?, r.pos))
}

pub fn decode(buf: &[u8]) -> Result<Tensor<f32>> {
    let (t, used) = decode_at(buf, 0)?;
    if used != buf.len() {
        return Err(Error::format(used as u64, "trailing bytes after tensor payload"));
    }
    Ok(t)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
