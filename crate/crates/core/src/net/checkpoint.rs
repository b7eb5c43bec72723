//! Versioned little-endian checkpoint format:
//! `"LCLC"`, u32 version, eight u32 config fields, then per tensor
//! `u16 name_len, name, u32 rank, u32 dims.., f64 data..`, then a u8
//! optimizer flag followed (if 1) by u64 step and the first and second
//! moments as raw f64 arrays in tensor order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::adam::OptimizerState;
use crate::net::config::ModelConfig;
use crate::net::params::{Layout, Params};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LCLC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(p: &Params, s: Option<&OptimizerState>) -> Vec<u8> {
    let c = &p.cfg;
    let mut out = Vec::with_capacity(64 + p.len() * 24);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq, c.vocab, c.v_epi, c.dim_in] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for spec in p.layout().specs() {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.extend_from_slice(&(spec.shape.len() as u32).to_le_bytes());
        for &dim in &spec.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for x in &p.data[spec.range()] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    match s {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.step.to_le_bytes());
            for x in s.m.iter().chain(&s.v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize, out: &mut Vec<f64>) -> Result<()> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        out.extend(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Params, Option<OptimizerState>, ModelConfig)> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, expected LCLC".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut f = [0usize; 8];
    for x in f.iter_mut() {
        *x = r.u32()? as usize;
    }
    let cfg = ModelConfig {
        d_model: f[0],
        n_layers: f[1],
        n_heads: f[2],
        d_ff: f[3],
        max_seq: f[4],
        vocab: f[5],
        v_epi: f[6],
        dim_in: f[7],
    };
    cfg.validate().map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;
    let layout = Layout::new(&cfg);
    let mut data = Vec::with_capacity(layout.total());
    for spec in layout.specs() {
        let n = r.u16()? as usize;
        let name = r.take(n)?;
        if name != spec.name.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected tensor {:?}, found {:?}",
                spec.name,
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != spec.shape {
            return Err(Error::Checkpoint(format!("tensor {} has shape {dims:?}, expected {:?}", spec.name, spec.shape)));
        }
        r.f64s(spec.len(), &mut data)?;
    }
    let state = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let mut m = Vec::with_capacity(data.len());
            let mut v = Vec::with_capacity(data.len());
            r.f64s(data.len(), &mut m)?;
            r.f64s(data.len(), &mut v)?;
            Some(OptimizerState { m, v, step })
        }
        flag => return Err(Error::Checkpoint(format!("bad optimizer flag {flag}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((Params::from_parts(cfg, data)?, state, cfg))
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn save_checkpoint(p: &Params, s: Option<&OptimizerState>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(p, s))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Params, Option<OptimizerState>, ModelConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Missing { path: path.to_path_buf(), msg: e.to_string() })?;
    decode(&bytes)
}
