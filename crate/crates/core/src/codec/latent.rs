//! Full-precision dump of a flow output `(Y, B, Z)`.
//!
//! ```text
//! "BLAT" | levels u8 | Y record | levels x B record | levels x Z record
//! record = ndim u8 | dims u32 x ndim | f64 x prod(dims)
//! ```
//!
//! Used to reproduce the exact inverse, bypassing quantization and sampling.

use super::bytes::Reader;
use crate::coupling::FlowOutput;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LATENT_MAGIC: &[u8; 4] = b"BLAT";

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    let at = r.pos();
    let ndim = usize::from(r.u8()?);
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.u32()? as usize);
    }
    let n: usize = dims.iter().product();
    let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::parse(at, "tensor too large"))?)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::from_vec(&dims, data).map_err(|e| Error::parse(at, e.to_string()))
}

pub fn encode_latent(out: &FlowOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(LATENT_MAGIC);
    buf.push(out.b.len() as u8);
    write_tensor(&mut buf, &out.y);
    for t in out.b.iter().chain(&out.z) {
        write_tensor(&mut buf, t);
    }
    buf
}

pub fn decode_latent(bytes: &[u8]) -> Result<FlowOutput> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != LATENT_MAGIC {
        return Err(Error::parse(0, "expected latent magic BLAT"));
    }
    let n = usize::from(r.u8()?);
    let y = read_tensor(&mut r)?;
    let b = (0..n).map(|_| read_tensor(&mut r)).collect::<Result<Vec<_>>>()?;
    let z = (0..n).map(|_| read_tensor(&mut r)).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::parse(r.pos(), "trailing bytes after latent records"));
    }
    Ok(FlowOutput { y, b, z })
}
