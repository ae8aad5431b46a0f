//! Checkpoint format.
//!
//! ```text
//! "BDF1" | version u16 | levels u16 | channels u16 | hidden u16 | mode u8 | bits u8 | count u32
//! count x { name_len u16 | name | ndim u8 | dims u32 x ndim | f32 x prod(dims) }
//! ```
//!
//! All integers and floats are little-endian. Parameters are written in the
//! model's canonical visiting order and checked by name and shape on load.

use sha2::{Digest, Sha256};

use super::bytes::Reader;
use crate::coupling::{CouplingMode, FlowConfig, FlowModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"BDF1";
pub const MODEL_VERSION: u16 = 1;

pub fn encode_model(model: &FlowModel) -> Vec<u8> {
    let cfg = model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.levels as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.channels as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.hidden as u16).to_le_bytes());
    out.push(cfg.mode.id());
    out.push(cfg.bits);
    let mut records = Vec::new();
    model.visit(&mut |name, t| records.push((name, t)));
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<FlowModel> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::parse(0, "not a model file (magic BDF1)"));
    }
    let at = r.pos();
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::parse(at, format!("unsupported model version {version}")));
    }
    let levels = usize::from(r.u16()?);
    let channels = usize::from(r.u16()?);
    let hidden = usize::from(r.u16()?);
    let at = r.pos();
    let mode = CouplingMode::from_id(r.u8()?).map_err(|e| Error::parse(at, e.to_string()))?;
    let bits = r.u8()?;
    if levels == 0 || channels == 0 || hidden == 0 {
        return Err(Error::parse(6, "levels, channels and hidden must be positive"));
    }
    let config = FlowConfig {
        levels,
        channels,
        hidden,
        mode,
        bits,
    };
    let mut model = FlowModel::zeros(config);
    let expected = model.param_names().len();
    let at = r.pos();
    let count = r.u32()? as usize;
    if count != expected {
        return Err(Error::parse(
            at,
            format!("{count} parameter records, topology needs {expected}"),
        ));
    }
    let mut failure: Option<Error> = None;
    model.visit_mut(&mut |name, t| {
        if failure.is_some() {
            return;
        }
        let res = (|| -> Result<()> {
            let at = r.pos();
            let len = usize::from(r.u16()?);
            let got = r.take(len)?;
            if got != name.as_bytes() {
                return Err(Error::parse(
                    at,
                    format!("expected record {name}, found {}", String::from_utf8_lossy(got)),
                ));
            }
            let at = r.pos();
            let ndim = usize::from(r.u8()?);
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            if dims != t.shape() {
                return Err(Error::parse(
                    at,
                    format!("{name}: shape {dims:?}, expected {:?}", t.shape()),
                ));
            }
            for v in t.data_mut() {
                *v = f64::from(r.f32()?);
            }
            Ok(())
        })();
        if let Err(e) = res {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if r.remaining() != 0 {
        return Err(Error::parse(r.pos(), "trailing bytes after last record"));
    }
    Ok(model)
}

/// First eight bytes of the SHA-256 of the encoded model.
pub fn model_hash(model: &FlowModel) -> [u8; 8] {
    let digest = Sha256::digest(encode_model(model));
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

pub fn save_model(path: impl AsRef<std::path::Path>, model: &FlowModel) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<FlowModel> {
    decode_model(&std::fs::read(path)?)
}
