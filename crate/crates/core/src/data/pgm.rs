//! Binary 8-bit greymaps (`P5`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Gray8 {
    /// Quantises `[0, 1]` values to `round(255 v)`.
    pub fn from_unit(height: usize, width: usize, values: &[f32]) -> Self {
        let data = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Gray8 { width, height, data }
    }

    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&b| b as f32 / 255.0).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut fields = [0usize; 3];
        if buf.len() < 2 || &buf[..2] != b"P5" {
            return Err(Error::format(0, "bad PGM magic, expected P5"));
        }
        pos += 2;
        for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
            loop {
                while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < buf.len() && buf[pos] == b'#' {
                    while pos < buf.len() && buf[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < buf.len() && buf[pos].is_ascii_digit() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format(start as u64, format!("bad PGM {name}")));
            }
            fields[i] = std::str::from_utf8(&buf[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(start as u64, format!("bad PGM {name}")))?;
        }
        let [width, height, maxval] = fields;
        if maxval == 0 || maxval > 255 {
            return Err(Error::format(pos as u64, format!("unsupported PGM maxval {maxval}")));
        }
        if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
            return Err(Error::format(pos as u64, "missing whitespace after PGM header"));
        }
        pos += 1;
        let n = width * height;
        if buf.len() - pos < n {
            return Err(Error::format(buf.len() as u64, "truncated PGM payload"));
        }
        let scale = 255.0 / maxval as f32;
        let data = buf[pos..pos + n]
            .iter()
            .map(|&b| if maxval == 255 { b } else { (b as f32 * scale).round() as u8 })
            .collect();
        Ok(Gray8 { width, height, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf)
    }
}
