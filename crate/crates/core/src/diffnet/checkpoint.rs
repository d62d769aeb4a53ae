use std::io::Read;
use std::path::Path;

use super::network::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"SSRT1\n";
const META: &str = "meta:";

/// Stored network parameters plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub step: u64,
    /// Resolved configuration as (key, value) pairs.
    pub config: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MAGIC.len() + 4 * self.params.scalar_count() + 4096);
        out.extend_from_slice(MAGIC);
        let mut meta = vec![format!("{META}step={}", self.step)];
        meta.extend(self.config.iter().map(|(k, v)| format!("{META}config:{k}={v}")));
        for name in &meta {
            write_record(&mut out, name, &[0], &[]);
        }
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            let s = t.shape();
            write_record(&mut out, name, &s, t.data());
        }
        out.extend_from_slice(&0u32.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut step = None;
        let mut config = Vec::new();
        loop {
            let len = read_u32(&mut r)? as usize;
            if len == 0 {
                break;
            }
            let name = String::from_utf8(take(&mut r, len)?.to_vec()).map_err(|_| fmt("name is not utf-8"))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 4 {
                return Err(fmt(format!("record {name} has rank {rank}")));
            }
            let dims: Vec<usize> = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<_>>()?;
            let count: usize = dims.iter().product();
            let raw = take(&mut r, count * 4)?;
            let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if let Some(meta) = name.strip_prefix(META) {
                if count != 0 {
                    return Err(fmt(format!("metadata record {name} carries values")));
                }
                if let Some(s) = meta.strip_prefix("step=") {
                    step = Some(s.parse().map_err(|_| fmt("bad step value"))?);
                } else if let Some(kv) = meta.strip_prefix("config:") {
                    let (k, v) = kv.split_once('=').ok_or_else(|| fmt(format!("bad config record {kv}")))?;
                    config.push((k.to_string(), v.to_string()));
                } else {
                    return Err(fmt(format!("unknown metadata {name}")));
                }
                continue;
            }
            if rank != 4 {
                return Err(fmt(format!("parameter {name} has rank {rank}, expected 4")));
            }
            if names.contains(&name) {
                return Err(fmt(format!("parameter {name} appears twice")));
            }
            tensors.push(Tensor::from_vec([dims[0], dims[1], dims[2], dims[3]], values)?);
            names.push(name);
        }
        if !r.is_empty() {
            return Err(fmt("trailing bytes after terminator"));
        }
        Ok(Checkpoint {
            params: ParamStore::from_parts(names, tensors),
            step: step.ok_or_else(|| fmt("missing step record"))?,
            config,
        })
    }

    /// Write atomically: a temp file in the same directory is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn write_record(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn fmt(msg: impl Into<String>) -> Error {
    Error::Format(format!("checkpoint: {}", msg.into()))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(fmt("truncated record"));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let b = take(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}
