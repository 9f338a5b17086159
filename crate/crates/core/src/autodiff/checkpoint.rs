//! Binary parameter checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! b"RFLD"  u32 version  u32 layer_count
//! per layer: u32 out  u32 in  u32 activation  f32[out*in] weight (row-major)  f32[out] bias
//! ```

use std::fs;
use std::path::Path;

use super::network::{Activation, DenseLayer};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RFLD";
pub const VERSION: u32 = 1;

pub fn encode_layers(layers: &[&DenseLayer<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        for v in [l.outputs() as u32, l.inputs() as u32, l.activation.tag()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &w in l.weight.data().iter().chain(l.bias.data()) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode_layers(bytes: &[u8]) -> Result<Vec<DenseLayer<f32>>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let (out, inp, tag) = (r.u32()? as usize, r.u32()? as usize, r.u32()?);
        let activation = Activation::from_tag(tag)
            .ok_or_else(|| Error::Checkpoint(format!("layer {i}: unknown activation {tag}")))?;
        let weight = Tensor::from_vec(out, inp, r.f32s(out * inp)?)?;
        let bias = Tensor::from_vec(1, out, r.f32s(out)?)?;
        if !weight.all_finite() || !bias.all_finite() {
            return Err(Error::Checkpoint(format!("layer {i}: non-finite parameters")));
        }
        layers.push(DenseLayer {
            weight,
            bias,
            activation,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(layers)
}

pub fn save_layers(path: &Path, layers: &[&DenseLayer<f32>]) -> Result<()> {
    fs::write(path, encode_layers(layers)).map_err(|e| Error::io(path, e))
}

pub fn load_layers(path: &Path) -> Result<Vec<DenseLayer<f32>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_layers(&bytes)
}
