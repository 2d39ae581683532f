//! `FBE1` binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"FBE1"
//! u32                 layer count L
//! L × (u32, u32)      (out_dim, in_dim) per affine layer
//! u8                  hidden activation (0 = ReLU, 1 = Tanh)
//! f64 × P             parameters in canonical order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpArch, MlpModel, ParamVector};

pub const MAGIC: &[u8; 4] = b"FBE1";

pub fn encode(model: &MlpModel) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::with_capacity(9 + 8 * arch.depth() + 8 * arch.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(arch.depth() as u32).to_le_bytes());
    for (o, i) in arch.layer_dims() {
        out.extend_from_slice(&(o as u32).to_le_bytes());
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    out.push(arch.activation().code());
    for v in model.params().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MlpModel> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let layers = cur.u32()? as usize;
    if layers == 0 {
        return Err(Error::Format("zero layers".into()));
    }
    let mut sizes = Vec::with_capacity(layers + 1);
    for k in 0..layers {
        let out_dim = cur.u32()? as usize;
        let in_dim = cur.u32()? as usize;
        if k == 0 {
            sizes.push(in_dim);
        } else if sizes[k] != in_dim {
            return Err(Error::Format(format!(
                "layer {k} input {in_dim} does not match previous output {}",
                sizes[k]
            )));
        }
        sizes.push(out_dim);
    }
    let code = cur.take(1)?[0];
    let activation =
        Activation::from_code(code).ok_or_else(|| Error::Format(format!("activation code {code}")))?;
    let arch = MlpArch::new(sizes, activation).map_err(|e| Error::Format(e.to_string()))?;
    let remaining = bytes.len() - cur.pos;
    let expected = arch.param_count() * 8;
    if remaining != expected {
        return Err(Error::Format(format!(
            "parameter payload is {remaining} bytes, expected {expected}"
        )));
    }
    let params: Vec<f64> = bytes[cur.pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MlpModel::unflatten(ParamVector::new(params), &arch)
}

pub fn save(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MlpModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
