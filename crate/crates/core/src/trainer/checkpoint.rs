//! Checkpoint container: `"AIOCKPT1"`, a little-endian `u32` header
//! length, a JSON header indexing the blobs, then concatenated FTC blobs
//! (parameters, first moments, second moments, each in name order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamW;
use crate::autograd::Tensor;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::ftc;
use crate::model::StereoModel;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"AIOCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    kind: String,
    offset: u64,
    len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config_hash: String,
    model: ModelConfig,
    step: u64,
    entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: StereoModel,
    pub optimizer: AdamW,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(model: StereoModel, optimizer: AdamW) -> Self {
        let config_hash = model.config.hash();
        Checkpoint {
            model,
            optimizer,
            config_hash,
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut blobs = Vec::new();
        let mut entries = Vec::new();
        let mut push = |name: &str, kind: &str, t: &Tensor<f32>| {
            let bytes = ftc::encode(t);
            entries.push(Entry {
                name: name.to_string(),
                kind: kind.to_string(),
                offset: blobs.len() as u64,
                len: bytes.len() as u64,
            });
            blobs.extend_from_slice(&bytes);
        };
        for (name, t) in self.model.params.iter() {
            push(name, "param", t);
        }
        for (kind, moments) in [("m", &self.optimizer.m), ("v", &self.optimizer.v)] {
            for (name, data) in moments {
                let shape = self.model.params.get(name)?.shape();
                push(name, kind, &Tensor::new(shape, data.clone())?);
            }
        }
        let header = Header {
            config_hash: self.config_hash.clone(),
            model: self.model.config.clone(),
            step: self.optimizer.step,
            entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + blobs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blobs);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 {
            return Err(Error::format(buf.len() as u64, "truncated checkpoint preamble"));
        }
        if &buf[..8] != MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let hlen = u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]) as usize;
        let body = 12 + hlen;
        if buf.len() < body {
            return Err(Error::format(buf.len() as u64, "truncated checkpoint header"));
        }
        let header: Header =
            serde_json::from_slice(&buf[12..body]).map_err(|e| Error::format(12, format!("bad checkpoint header: {e}")))?;
        if header.model.hash() != header.config_hash {
            return Err(Error::format(12, "checkpoint config hash does not match its model config"));
        }
        let mut params = ParamStore::new();
        let mut opt = AdamW {
            step: header.step,
            ..Default::default()
        };
        let mut expected = 0u64;
        for e in &header.entries {
            if e.offset != expected {
                return Err(Error::format(body as u64 + e.offset, "checkpoint blobs are not contiguous"));
            }
            expected += e.len;
            let start = body as u64 + e.offset;
            let end = start + e.len;
            if end > buf.len() as u64 {
                return Err(Error::format(buf.len() as u64, format!("truncated blob `{}`", e.name)));
            }
            let (t, used) = ftc::decode_at(&buf[start as usize..end as usize], start)?;
            if used as u64 != e.len {
                return Err(Error::format(start + used as u64, format!("blob `{}` has trailing bytes", e.name)));
            }
            match e.kind.as_str() {
                "param" => params.insert(e.name.clone(), t),
                "m" => {
                    opt.m.insert(e.name.clone(), t.into_data());
                }
                "v" => {
                    opt.v.insert(e.name.clone(), t.into_data());
                }
                other => return Err(Error::format(12, format!("unknown blob kind `{other}`"))),
            }
        }
        if body as u64 + expected != buf.len() as u64 {
            return Err(Error::format(body as u64 + expected, "trailing bytes after checkpoint blobs"));
        }
        let expected = crate::model::init_params::<f32>(&header.model, 0);
        if !expected.names().eq(params.names()) {
            return Err(Error::format(12, "checkpoint parameters do not match its model config"));
        }
        for (name, t) in params.iter() {
            if expected.get(name)?.shape() != t.shape() {
                return Err(Error::format(12, format!("parameter `{name}` has shape {:?}", t.shape())));
            }
            for moments in [&opt.m, &opt.v] {
                if moments.get(name).map(Vec::len) != Some(t.numel()) {
                    return Err(Error::format(12, format!("optimiser moments for `{name}` are missing or mis-sized")));
                }
            }
        }
        if opt.m.len() != params.len() || opt.v.len() != params.len() {
            return Err(Error::format(12, "optimiser moments name unknown parameters"));
        }
        Ok(Checkpoint {
            model: StereoModel {
                config: header.model,
                params,
            },
            optimizer: opt,
            config_hash: header.config_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf)
    }
}
