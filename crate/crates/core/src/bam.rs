//! Boundary-aware masks: a generalised single-threshold Canny pipeline.
//!
//! `luma -> blur -> Sobel -> magnitude -> NMS -> threshold -> quantize`.
//! Inputs are in 8-bit units (`0..=255`); the threshold uses the same units.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SIGMA: f64 = 1.4;
pub const DEFAULT_THRESHOLD: f64 = 50.0;
pub const MAX_BITS: u8 = 3;

/// Blurred luma is snapped to multiples of this before differentiation.
/// Sobel sums over the snapped grid are exact, so NMS tie decisions do not
/// depend on the order in which the blur accumulated its terms.
const SNAP: f64 = 1.0 / (1u64 << 20) as f64;

const BT601: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl Norm {
    pub fn id(self) -> u8 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Norm::L1),
            2 => Some(Norm::L2),
            _ => None,
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "one" | "1" => Ok(Norm::L1),
            "l2" | "two" | "2" => Ok(Norm::L2),
            _ => Err(Error::Config(format!("unknown norm {s:?} (expected l1 or l2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BamConfig {
    pub sigma: f64,
    pub threshold: f64,
    pub bits: u8,
    pub norm: Norm,
}

impl Default for BamConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            threshold: DEFAULT_THRESHOLD,
            bits: 1,
            norm: Norm::L2,
        }
    }
}

impl BamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "threshold must be non-negative, got {}",
                self.threshold
            )));
        }
        if !(1..=MAX_BITS).contains(&self.bits) {
            return Err(Error::Config(format!(
                "bits must be in 1..={MAX_BITS}, got {}",
                self.bits
            )));
        }
        Ok(())
    }

    /// Highest quantization level, `2^b - 1`.
    pub fn max_level(&self) -> u8 {
        (1u8 << self.bits) - 1
    }
}

/// Quantized boundary levels plus the sparse magnitudes they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    /// `1 x H x W`, integer-valued in `0..=2^b-1`.
    pub levels: Tensor,
    /// `1 x H x W` thresholded NMS magnitudes (`B_s`).
    pub sparse: Tensor,
    pub config: BamConfig,
}

impl BoundaryMap {
    pub fn height(&self) -> usize {
        self.levels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.levels.shape()[2]
    }

    pub fn level_bytes(&self) -> Vec<u8> {
        self.levels.data().iter().map(|&v| v as u8).collect()
    }

    /// Levels rescaled to `[0, 1]`.
    pub fn normalized(&self) -> Tensor {
        let k = f64::from(self.config.max_level());
        self.levels.map(|v| v / k)
    }

    pub fn nonzero_count(&self) -> usize {
        self.levels.data().iter().filter(|&&v| v != 0.0).count()
    }
}

/// BT.601 luma of a `3 x H x W` image.
pub fn to_luma(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape("to_luma", format!("expected 3 channels, got {c}")));
    }
    let n = h * w;
    let d = img.data();
    let out = (0..n)
        .map(|i| BT601[0] * d[i] + BT601[1] * d[n + i] + BT601[2] * d[2 * n + i])
        .collect();
    Tensor::from_vec(&[1, h, w], out)
}

/// Reflect-101 index (`-1 -> 1`, `n -> n-2`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Normalized, truncated Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur of every channel with reflect padding.
pub fn gauss_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let (c, h, w) = img.dims3()?;
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..][..w];
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    acc += kv * row[reflect(x as isize + t as isize - r, w)];
                }
                tmp[(ch * h + y) * w + x] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        let plane = &tmp[ch * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    acc += kv * plane[reflect(y as isize + t as isize - r, h) * w + x];
                }
                out[(ch * h + y) * w + x] = acc;
            }
        }
    }
    Tensor::from_vec(img.shape(), out)
}

/// 3x3 Sobel responses `(Gx, Gy)` with reflect padding. `Gx` is
/// right-minus-left, `Gy` is bottom-minus-top.
pub fn sobel_gradient(img: &Tensor) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = img.dims3()?;
    let src = img.data();
    let mut gx = vec![0.0; src.len()];
    let mut gy = vec![0.0; src.len()];
    for ch in 0..c {
        let p = &src[ch * h * w..][..h * w];
        let at = |y: isize, x: isize| p[reflect(y, h) * w + reflect(x, w)];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (tl, t, tr) = (at(y - 1, x - 1), at(y - 1, x), at(y - 1, x + 1));
                let (l, r) = (at(y, x - 1), at(y, x + 1));
                let (bl, b, br) = (at(y + 1, x - 1), at(y + 1, x), at(y + 1, x + 1));
                let o = ch * h * w + y as usize * w + x as usize;
                gx[o] = (tr + 2.0 * r + br) - (tl + 2.0 * l + bl);
                gy[o] = (bl + 2.0 * b + br) - (tl + 2.0 * t + tr);
            }
        }
    }
    Ok((Tensor::from_vec(img.shape(), gx)?, Tensor::from_vec(img.shape(), gy)?))
}

pub fn magnitude(gx: &Tensor, gy: &Tensor, norm: Norm) -> Result<Tensor> {
    match norm {
        Norm::L1 => gx.zip_map(gy, |a, b| a.abs() + b.abs()),
        Norm::L2 => gx.zip_map(gy, f64::hypot),
    }
}

/// Non-maximum suppression along the gradient direction quantized to
/// 0/45/90/135 degrees. Ties survive; the one-pixel border is zeroed.
pub fn nms(m: &Tensor, gx: &Tensor, gy: &Tensor) -> Result<Tensor> {
    m.expect_same_shape(gx, "nms")?;
    m.expect_same_shape(gy, "nms")?;
    let (c, h, w) = m.dims3()?;
    // tan(22.5 deg)
    let t22 = std::f64::consts::SQRT_2 - 1.0;
    let (md, xd, yd) = (m.data(), gx.data(), gy.data());
    let mut out = vec![0.0; md.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let o = base + y * w + x;
                let (ax, ay) = (xd[o].abs(), yd[o].abs());
                let (dy, dx): (isize, isize) = if ay <= ax * t22 {
                    (0, 1)
                } else if ax <= ay * t22 {
                    (1, 0)
                } else if (xd[o] > 0.0) == (yd[o] > 0.0) {
                    (1, 1)
                } else {
                    (1, -1)
                };
                let fwd = base + (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                let back = base + (y as isize - dy) as usize * w + (x as isize - dx) as usize;
                let v = md[o];
                if v >= md[fwd] && v >= md[back] {
                    out[o] = v;
                }
            }
        }
    }
    Tensor::from_vec(m.shape(), out)
}

/// Keeps values `>= threshold`, zeroes the rest.
pub fn sparsify(m: &Tensor, threshold: f64) -> Tensor {
    m.map(|v| if v >= threshold { v } else { 0.0 })
}

/// Maps nonzero magnitudes uniformly from `[threshold, max]` onto
/// `1..=2^b-1`; zero stays zero.
pub fn quantify(sparse: &Tensor, threshold: f64, bits: u8) -> Result<Tensor> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(Error::Config(format!("bits must be in 1..={MAX_BITS}, got {bits}")));
    }
    let k = f64::from((1u8 << bits) - 1);
    let top = sparse.max();
    let range = top - threshold;
    Ok(sparse.map(|v| {
        if v == 0.0 {
            0.0
        } else if range <= 0.0 {
            1.0
        } else {
            (((v - threshold) / range * k).floor().max(0.0)).min(k - 1.0) + 1.0
        }
    }))
}

/// Full pipeline on a `3 x H x W` RGB or `1 x H x W` luma image in 8-bit units.
pub fn bam_generate(img: &Tensor, config: &BamConfig) -> Result<BoundaryMap> {
    config.validate()?;
    let (c, _, _) = img.dims3()?;
    let luma = match c {
        1 => img.clone(),
        3 => to_luma(img)?,
        _ => {
            return Err(Error::shape(
                "bam_generate",
                format!("expected 1 or 3 channels, got {c}"),
            ))
        }
    };
    let blurred = gauss_blur(&luma, config.sigma)?.map(|v| (v / SNAP).round() * SNAP);
    let (gx, gy) = sobel_gradient(&blurred)?;
    let mag = magnitude(&gx, &gy, config.norm)?;
    let thin = nms(&mag, &gx, &gy)?;
    let sparse = sparsify(&thin, config.threshold);
    let levels = quantify(&sparse, config.threshold, config.bits)?;
    Ok(BoundaryMap {
        levels,
        sparse,
        config: *config,
    })
}
