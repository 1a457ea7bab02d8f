//! Greyscale portable float maps (`Pf`). Rows are stored bottom-to-top;
//! a negative scale marks a little-endian payload.

use std::fs;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Encodes `[H, W]` as a little-endian PFM with scale `-1.0`.
pub fn encode_pfm(map: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::contract(format!("PFM maps must be [H, W], got {s:?}")));
    }
    if !map.is_finite() {
        return Err(Error::contract("PFM maps must be finite"));
    }
    let (h, w) = (s[0], s[1]);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for y in (0..h).rev() {
        for v in &map.data()[y * w..(y + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads one whitespace-terminated header token starting at `*pos`.
fn token<'a>(buf: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a str> {
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos >= buf.len() {
        return Err(Error::format(buf.len() as u64, format!("truncated header while reading {what}")));
    }
    let tok = std::str::from_utf8(&buf[start..*pos]).map_err(|_| Error::format(start as u64, format!("non-ASCII {what}")))?;
    Ok(tok)
}

fn skip_space(buf: &[u8], pos: &mut usize) {
    while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

pub fn decode_pfm(buf: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let magic = token(buf, &mut pos, "magic")?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::format(0, "colour PFM is not a disparity map")),
        _ => return Err(Error::format(0, format!("bad PFM magic `{magic}`"))),
    }
    skip_space(buf, &mut pos);
    let dim = |what: &str, pos: &mut usize| -> Result<usize> {
        let at = *pos;
        let t = token(buf, pos, what)?;
        skip_space(buf, pos);
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::format(at as u64, format!("bad PFM {what} `{t}`"))),
        }
    };
    let w = dim("width", &mut pos)?;
    let h = dim("height", &mut pos)?;
    let at = pos;
    let scale_tok = token(buf, &mut pos, "scale")?;
    let scale: f64 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::format(at as u64, format!("bad PFM scale `{scale_tok}`")))?;
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let little = scale < 0.0;
    let n = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(at as u64, "PFM size overflows"))?;
    let avail = buf.len() - pos;
    if avail < n {
        return Err(Error::format(
            buf.len() as u64,
            format!("truncated PFM payload: {avail} of {n} bytes"),
        ));
    }
    if avail > n {
        return Err(Error::format((pos + n) as u64, "trailing bytes after PFM payload"));
    }
    let payload = &buf[pos..];
    let mut data = vec![0.0f32; h * w];
    for (row, chunk) in payload.chunks_exact(4 * w).enumerate() {
        let y = h - 1 - row;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            let bytes = [b[0], b[1], b[2], b[3]];
            data[y * w + x] = if little { f32::from_le_bytes(bytes) } else { f32::from_be_bytes(bytes) };
        }
    }
    Tensor::new(&[h, w], data)
}

pub fn write_pfm(path: impl AsRef<Path>, map: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(map)?).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&buf)
}
