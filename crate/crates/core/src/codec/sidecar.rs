//! Boundary sidecars and the downscaling payload container.
//!
//! Sidecar record (little-endian, no padding):
//!
//! ```text
//! "BAM1" | width u32 | height u32 | bits u8 | threshold f32 | norm u8 | encoding u8 | payload_len u32 | payload
//! ```
//!
//! Raw payloads pack `bits`-wide symbols MSB-first in row-major order.
//! RLE payloads are `(run u16, value u8)` triples; runs longer than
//! `u16::MAX` are split.
//!
//! Payload container:
//!
//! ```text
//! "BAMP" | levels u8 | model hash [u8; 8] | levels x sidecar record
//! ```

use crate::bam::{BamConfig, BoundaryMap, Norm};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::bytes::Reader;

pub const SIDECAR_MAGIC: &[u8; 4] = b"BAM1";
pub const PAYLOAD_MAGIC: &[u8; 4] = b"BAMP";
/// Fixed bytes preceding a sidecar payload.
pub const SIDECAR_HEADER_LEN: usize = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Raw,
    Rle,
}

impl Encoding {
    fn id(self) -> u8 {
        match self {
            Encoding::Raw => 0,
            Encoding::Rle => 1,
        }
    }
}

/// Requested encoding; `Auto` keeps RLE only when it is strictly smaller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncodeMode {
    Raw,
    Rle,
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BamSidecar {
    pub width: u32,
    pub height: u32,
    pub bits: u8,
    pub threshold: f32,
    pub norm: Norm,
    pub encoding: Encoding,
    pub payload: Vec<u8>,
}

pub fn pack_bits(symbols: &[u8], bits: u8) -> Vec<u8> {
    let total = symbols.len() * usize::from(bits);
    let mut out = vec![0u8; total.div_ceil(8)];
    let mut bit = 0usize;
    for &s in symbols {
        for k in (0..bits).rev() {
            if (s >> k) & 1 == 1 {
                out[bit / 8] |= 0x80 >> (bit % 8);
            }
            bit += 1;
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], bits: u8, count: usize) -> Result<Vec<u8>> {
    let need = (count * usize::from(bits)).div_ceil(8);
    if bytes.len() != need {
        return Err(Error::Format(format!(
            "raw payload has {} bytes, expected {need}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut bit = 0usize;
    for _ in 0..count {
        let mut s = 0u8;
        for _ in 0..bits {
            s = (s << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1);
            bit += 1;
        }
        out.push(s);
    }
    Ok(out)
}

pub fn rle_encode(symbols: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < symbols.len() {
        let v = symbols[i];
        let mut run = 1usize;
        while i + run < symbols.len() && symbols[i + run] == v && run < usize::from(u16::MAX) {
            run += 1;
        }
        out.extend_from_slice(&(run as u16).to_le_bytes());
        out.push(v);
        i += run;
    }
    out
}

pub fn rle_decode(bytes: &[u8], count: usize) -> Result<Vec<u8>> {
    if !bytes.len().is_multiple_of(3) {
        return Err(Error::Format(format!(
            "rle payload length {} is not a multiple of 3",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for t in bytes.chunks_exact(3) {
        let run = usize::from(u16::from_le_bytes([t[0], t[1]]));
        if run == 0 {
            return Err(Error::Format("rle run of length zero".into()));
        }
        if out.len() + run > count {
            return Err(Error::Format(format!("rle expands past {count} symbols")));
        }
        out.extend(std::iter::repeat_n(t[2], run));
    }
    if out.len() != count {
        return Err(Error::Format(format!(
            "rle expands to {} symbols, expected {count}",
            out.len()
        )));
    }
    Ok(out)
}

impl BamSidecar {
    pub fn encode(levels: &[u8], width: usize, height: usize, cfg: &BamConfig, mode: EncodeMode) -> Result<Self> {
        cfg.validate()?;
        if levels.len() != width * height {
            return Err(Error::shape(
                "encode_sidecar",
                format!("{} symbols for a {width}x{height} map", levels.len()),
            ));
        }
        let max = cfg.max_level();
        if let Some(i) = levels.iter().position(|&v| v > max) {
            return Err(Error::Format(format!(
                "level {} at index {i} exceeds {max} for {} bits",
                levels[i], cfg.bits
            )));
        }
        let (width, height) = (
            u32::try_from(width).map_err(|_| Error::Format("width exceeds u32".into()))?,
            u32::try_from(height).map_err(|_| Error::Format("height exceeds u32".into()))?,
        );
        let (encoding, payload) = match mode {
            EncodeMode::Raw => (Encoding::Raw, pack_bits(levels, cfg.bits)),
            EncodeMode::Rle => (Encoding::Rle, rle_encode(levels)),
            EncodeMode::Auto => {
                let raw = pack_bits(levels, cfg.bits);
                let rle = rle_encode(levels);
                if rle.len() < raw.len() {
                    (Encoding::Rle, rle)
                } else {
                    (Encoding::Raw, raw)
                }
            }
        };
        Ok(Self {
            width,
            height,
            bits: cfg.bits,
            threshold: cfg.threshold as f32,
            norm: cfg.norm,
            encoding,
            payload,
        })
    }

    pub fn from_map(map: &BoundaryMap, mode: EncodeMode) -> Result<Self> {
        Self::encode(&map.level_bytes(), map.width(), map.height(), &map.config, mode)
    }

    pub fn symbol_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn decode_levels(&self) -> Result<Vec<u8>> {
        let n = self.symbol_count();
        let levels = match self.encoding {
            Encoding::Raw => unpack_bits(&self.payload, self.bits, n)?,
            Encoding::Rle => rle_decode(&self.payload, n)?,
        };
        let max = (1u8 << self.bits) - 1;
        if levels.iter().any(|&v| v > max) {
            return Err(Error::Format(format!("decoded level exceeds {max}")));
        }
        Ok(levels)
    }

    /// Levels as a `1 x H x W` tensor of integers.
    pub fn levels_tensor(&self) -> Result<Tensor> {
        let data = self.decode_levels()?.into_iter().map(f64::from).collect();
        Tensor::from_vec(&[1, self.height as usize, self.width as usize], data)
    }

    /// Levels rescaled to `[0, 1]`, the form the flow consumes as `B`.
    pub fn normalized(&self) -> Result<Tensor> {
        let k = f64::from((1u8 << self.bits) - 1);
        Ok(self.levels_tensor()?.map(|v| v / k))
    }

    pub fn encoded_len(&self) -> usize {
        SIDECAR_HEADER_LEN + self.payload.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(SIDECAR_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.bits);
        out.extend_from_slice(&self.threshold.to_le_bytes());
        out.push(self.norm.id());
        out.push(self.encoding.id());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let start = r.pos();
        if r.take(4)? != SIDECAR_MAGIC {
            return Err(Error::parse(start, "expected sidecar magic BAM1"));
        }
        let width = r.u32()?;
        let height = r.u32()?;
        let at = r.pos();
        let bits = r.u8()?;
        if !(1..=crate::bam::MAX_BITS).contains(&bits) {
            return Err(Error::parse(at, format!("bits {bits} out of range")));
        }
        let threshold = r.f32()?;
        let at = r.pos();
        let norm = Norm::from_id(r.u8()?).ok_or_else(|| Error::parse(at, "unknown norm id"))?;
        let at = r.pos();
        let encoding = match r.u8()? {
            0 => Encoding::Raw,
            1 => Encoding::Rle,
            other => return Err(Error::parse(at, format!("unknown encoding {other}"))),
        };
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        let s = Self {
            width,
            height,
            bits,
            threshold,
            norm,
            encoding,
            payload,
        };
        s.decode_levels().map_err(|e| Error::parse(start, e.to_string()))?;
        Ok(s)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let s = Self::read_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::parse(r.pos(), "trailing bytes after sidecar"));
        }
        Ok(s)
    }
}

/// What `down` produces: the LR image plus one sidecar per level.
#[derive(Debug, Clone, PartialEq)]
pub struct RescalePayload {
    /// `C x h x w` in `[0, 1]`.
    pub lr: Tensor,
    /// Level 0 (finest) first.
    pub sidecars: Vec<BamSidecar>,
    pub model_hash: [u8; 8],
}

impl RescalePayload {
    pub fn levels(&self) -> usize {
        self.sidecars.len()
    }

    /// Sidecar `l` must be `2^(n-1-l)` times the LR extent.
    pub fn validate(&self) -> Result<()> {
        let (_, h, w) = self.lr.dims3()?;
        let n = self.sidecars.len();
        for (l, s) in self.sidecars.iter().enumerate() {
            let k = 1usize << (n - 1 - l);
            if (s.height as usize, s.width as usize) != (h * k, w * k) {
                return Err(Error::Format(format!(
                    "level {l} sidecar is {}x{}, expected {}x{}",
                    s.height,
                    s.width,
                    h * k,
                    w * k
                )));
            }
        }
        Ok(())
    }

    /// The sidecar container (the LR image is stored separately).
    pub fn sidecar_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PAYLOAD_MAGIC);
        out.push(self.sidecars.len() as u8);
        out.extend_from_slice(&self.model_hash);
        for s in &self.sidecars {
            s.write_to(&mut out);
        }
        out
    }

    pub fn parse_sidecars(bytes: &[u8]) -> Result<(Vec<BamSidecar>, [u8; 8])> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != PAYLOAD_MAGIC {
            return Err(Error::parse(0, "expected sidecar container magic BAMP"));
        }
        let n = r.u8()?;
        let mut hash = [0u8; 8];
        hash.copy_from_slice(r.take(8)?);
        let sidecars = (0..n)
            .map(|_| BamSidecar::read_from(&mut r))
            .collect::<Result<Vec<_>>>()?;
        if r.remaining() != 0 {
            return Err(Error::parse(r.pos(), "trailing bytes after last sidecar"));
        }
        Ok((sidecars, hash))
    }
}

/// Byte accounting for one payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageReport {
    /// `h * w * C` of the LR image.
    pub lr_raw_bytes: usize,
    /// Sidecar payload bytes, headers excluded.
    pub sidecar_payload_bytes: usize,
    /// Everything in the sidecar container, headers included.
    pub sidecar_file_bytes: usize,
}

impl StorageReport {
    pub fn payload_ratio(&self) -> f64 {
        self.sidecar_payload_bytes as f64 / self.lr_raw_bytes as f64
    }

    pub fn file_ratio(&self) -> f64 {
        self.sidecar_file_bytes as f64 / self.lr_raw_bytes as f64
    }

    /// LR bytes alone and LR plus sidecar file.
    pub fn totals(&self) -> (usize, usize) {
        (self.lr_raw_bytes, self.lr_raw_bytes + self.sidecar_file_bytes)
    }
}

pub fn storage_report(payload: &RescalePayload) -> StorageReport {
    StorageReport {
        lr_raw_bytes: payload.lr.len(),
        sidecar_payload_bytes: payload.sidecars.iter().map(|s| s.payload.len()).sum(),
        sidecar_file_bytes: payload.sidecar_bytes().len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(bits: u8) -> BamConfig {
        BamConfig {
            bits,
            ..Default::default()
        }
    }

    #[test]
    fn all_zero_mask_sizes() {
        let zeros = vec![0u8; 256];
        let raw = BamSidecar::encode(&zeros, 16, 16, &cfg(1), EncodeMode::Raw).unwrap();
        assert_eq!(raw.payload.len(), 32);
        let rle = BamSidecar::encode(&zeros, 16, 16, &cfg(1), EncodeMode::Rle).unwrap();
        assert_eq!(rle.payload.len(), 3);
        let auto = BamSidecar::encode(&zeros, 16, 16, &cfg(1), EncodeMode::Auto).unwrap();
        assert_eq!(auto.encoding, Encoding::Rle);
        assert_eq!(auto.to_bytes().len(), SIDECAR_HEADER_LEN + 3);
    }

    #[test]
    fn alternating_mask_prefers_raw() {
        let alt: Vec<u8> = (0..64).map(|i| (i % 2) as u8).collect();
        let s = BamSidecar::encode(&alt, 8, 8, &cfg(1), EncodeMode::Auto).unwrap();
        assert_eq!(s.encoding, Encoding::Raw);
        assert_eq!(s.payload.len(), 8);
        assert_eq!(s.payload, vec![0x55; 8]);
    }

    #[test]
    fn msb_first_packing() {
        assert_eq!(pack_bits(&[1, 0, 0, 0, 0, 0, 0, 0, 1], 1), vec![0x80, 0x80]);
        assert_eq!(pack_bits(&[3, 1, 2], 2), vec![0b1101_1000]);
        assert_eq!(pack_bits(&[7, 0, 5], 3), vec![0b1110_0010, 0b1000_0000]);
    }

    #[test]
    fn long_runs_are_split() {
        let zeros = vec![0u8; 70_000];
        let enc = rle_encode(&zeros);
        assert_eq!(enc.len(), 6);
        assert_eq!(u16::from_le_bytes([enc[0], enc[1]]), u16::MAX);
        assert_eq!(rle_decode(&enc, 70_000).unwrap(), zeros);
    }

    #[test]
    fn out_of_range_levels_are_rejected() {
        assert!(BamSidecar::encode(&[0, 2], 2, 1, &cfg(1), EncodeMode::Raw).is_err());
        assert!(BamSidecar::encode(&[0, 1], 3, 1, &cfg(1), EncodeMode::Raw).is_err());
    }

    #[test]
    fn header_layout_and_parse_errors() {
        let s = BamSidecar::encode(&[1, 0, 0, 1], 2, 2, &cfg(1), EncodeMode::Raw).unwrap();
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"BAM1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 2);
        assert_eq!(b[12], 1);
        assert_eq!(f32::from_le_bytes(b[13..17].try_into().unwrap()), 50.0);
        assert_eq!(b[17], 2);
        assert_eq!(b[18], 0);
        assert_eq!(BamSidecar::from_bytes(&b).unwrap(), s);
        assert!(BamSidecar::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[18] = 9;
        assert!(matches!(
            BamSidecar::from_bytes(&bad),
            Err(Error::Parse { offset: 18, .. })
        ));
    }

    #[test]
    fn storage_ratio_is_one_twenty_fourth() {
        for (h, w) in [(8usize, 8usize), (16, 24), (32, 32)] {
            let levels = vec![1u8; h * w];
            let s = BamSidecar::encode(&levels, w, h, &cfg(1), EncodeMode::Raw).unwrap();
            let p = RescalePayload {
                lr: Tensor::zeros(&[3, h, w]),
                sidecars: vec![s],
                model_hash: [0; 8],
            };
            p.validate().unwrap();
            let r = storage_report(&p);
            assert_eq!(r.sidecar_payload_bytes * 24, r.lr_raw_bytes);
            assert_eq!(r.payload_ratio(), 1.0 / 24.0);
        }
        let s = BamSidecar::encode(&[7u8; 64], 8, 8, &cfg(3), EncodeMode::Raw).unwrap();
        let p = RescalePayload {
            lr: Tensor::zeros(&[3, 8, 8]),
            sidecars: vec![s],
            model_hash: [0; 8],
        };
        assert_eq!(storage_report(&p).payload_ratio(), 0.125);
    }

    #[test]
    fn empty_mask_rle_ratio_under_one_percent() {
        let s = BamSidecar::encode(&vec![0u8; 64 * 64], 64, 64, &cfg(1), EncodeMode::Auto).unwrap();
        let p = RescalePayload {
            lr: Tensor::zeros(&[3, 64, 64]),
            sidecars: vec![s],
            model_hash: [0; 8],
        };
        assert!(storage_report(&p).payload_ratio() < 0.01);
        assert!(storage_report(&p).file_ratio() < 0.01);
    }

    #[test]
    fn container_round_trip_and_validation() {
        let a = BamSidecar::encode(&[1u8; 64], 8, 8, &cfg(1), EncodeMode::Auto).unwrap();
        let b = BamSidecar::encode(&[0u8; 16], 4, 4, &cfg(1), EncodeMode::Auto).unwrap();
        let p = RescalePayload {
            lr: Tensor::zeros(&[3, 4, 4]),
            sidecars: vec![a.clone(), b.clone()],
            model_hash: [1, 2, 3, 4, 5, 6, 7, 8],
        };
        p.validate().unwrap();
        let (sc, hash) = RescalePayload::parse_sidecars(&p.sidecar_bytes()).unwrap();
        assert_eq!(sc, vec![a.clone(), b.clone()]);
        assert_eq!(hash, p.model_hash);
        let swapped = RescalePayload {
            sidecars: vec![b, a],
            ..p
        };
        assert!(swapped.validate().is_err());
    }

    proptest! {
        #[test]
        fn lossless_for_random_maps(
            bits in 1u8..=3,
            w in 1usize..20,
            h in 1usize..20,
            seed in proptest::collection::vec(0u8..=255, 400),
            sparse in proptest::bool::ANY,
        ) {
            let max = (1u8 << bits) - 1;
            let levels: Vec<u8> = seed[..w * h]
                .iter()
                .map(|&v| if sparse && v < 200 { 0 } else { v % (max + 1) })
                .collect();
            for mode in [EncodeMode::Raw, EncodeMode::Rle, EncodeMode::Auto] {
                let s = BamSidecar::encode(&levels, w, h, &cfg(bits), mode).unwrap();
                if s.encoding == Encoding::Raw {
                    prop_assert_eq!(s.payload.len(), (w * h * bits as usize).div_ceil(8));
                }
                let back = BamSidecar::from_bytes(&s.to_bytes()).unwrap();
                prop_assert_eq!(back.decode_levels().unwrap(), levels.clone());
            }
        }
    }
}
