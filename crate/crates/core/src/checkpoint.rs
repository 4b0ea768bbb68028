//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `DIMT` |
//! | 1 | version (1) |
//! | 1 | activation tag (0 relu, 1 identity) |
//! | 4 | number of dims `L+1` (u32) |
//! | 4·(L+1) | dims `d0 … dL` (u32 each) |
//! | 8·P | parameters as f64 in flatten order |

use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, ModelParams};

pub const MAGIC: &[u8; 4] = b"DIMT";
pub const VERSION: u8 = 1;

pub fn encode(model: &ModelParams) -> Vec<u8> {
    let dims = model.dims();
    let mut out = Vec::with_capacity(10 + 4 * dims.len() + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(model.activation.tag());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in model.params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return invalid("checkpoint truncated");
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return invalid("not a checkpoint (bad magic)");
    }
    let version = c.take(1)?[0];
    if version != VERSION {
        return invalid(format!("unsupported checkpoint version {version}"));
    }
    let activation = Activation::from_tag(c.take(1)?[0])?;
    let n_dims = c.u32()? as usize;
    if n_dims < 2 {
        return invalid("checkpoint needs at least two dims");
    }
    let dims = (0..n_dims)
        .map(|_| c.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let values: Vec<f64> = c
        .take(count.checked_mul(8).ok_or_else(|| Error::InvalidInput("checkpoint too large".into()))?)?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if c.pos != bytes.len() {
        return invalid(format!("{} trailing bytes in checkpoint", bytes.len() - c.pos));
    }
    ModelParams::unflatten(&values, &dims, activation)
}

pub fn save(path: &Path, model: &ModelParams) -> Result<()> {
    std::fs::write(path, encode(model))
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}
