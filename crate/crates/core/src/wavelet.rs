//! Orthonormal single-level 2-D Haar transform.
//!
//! For each 2x2 block with pixels `a b / c d`:
//!
//! ```text
//! A = (a + b + c + d) / 2     H = (a - b + c - d) / 2
//! V = (a + b - c - d) / 2     D = (a - b - c + d) / 2
//! ```
//!
//! The 4x4 block matrix is symmetric and orthogonal, so synthesis applies
//! the same matrix again. `A` forms the low band; `H`, `V`, `D` are stacked
//! channel-wise (all `H` channels, then `V`, then `D`) to form the high band.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Low and high Haar sub-bands of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPair {
    /// `C x H/2 x W/2`
    pub low: Tensor,
    /// `3C x H/2 x W/2`
    pub high: Tensor,
}

impl WaveletPair {
    pub fn new(low: Tensor, high: Tensor) -> Result<Self> {
        let (c, h, w) = low.dims3()?;
        let (hc, hh, hw) = high.dims3()?;
        if hc != 3 * c || (hh, hw) != (h, w) {
            return Err(Error::shape(
                "wavelet_pair",
                format!(
                    "low {:?} and high {:?} need a 1:3 channel split",
                    low.shape(),
                    high.shape()
                ),
            ));
        }
        Ok(Self { low, high })
    }
}

#[inline]
fn butterfly(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    let s0 = a + b;
    let s1 = c + d;
    let d0 = a - b;
    let d1 = c - d;
    [0.5 * (s0 + s1), 0.5 * (d0 + d1), 0.5 * (s0 - s1), 0.5 * (d0 - d1)]
}

/// Analysis into a packed `4C` tensor ordered `[A; H; V; D]`.
pub fn haar_forward_packed(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    for (axis, len) in [("height", h), ("width", w)] {
        if len % 2 != 0 {
            return Err(Error::Extent {
                op: "haar_forward",
                axis,
                len,
                divisor: 2,
            });
        }
    }
    let (h2, w2) = (h / 2, w / 2);
    let band = c * h2 * w2;
    let src = x.data();
    let mut out = vec![0.0; 4 * band];
    for ch in 0..c {
        for y in 0..h2 {
            let top = (ch * h + 2 * y) * w;
            let bot = top + w;
            for xx in 0..w2 {
                let coef = butterfly(
                    src[top + 2 * xx],
                    src[top + 2 * xx + 1],
                    src[bot + 2 * xx],
                    src[bot + 2 * xx + 1],
                );
                let o = (ch * h2 + y) * w2 + xx;
                for (k, v) in coef.into_iter().enumerate() {
                    out[k * band + o] = v;
                }
            }
        }
    }
    Tensor::from_vec(&[4 * c, h2, w2], out)
}

/// Synthesis from a packed `[A; H; V; D]` tensor.
pub fn haar_inverse_packed(p: &Tensor) -> Result<Tensor> {
    let (c4, h2, w2) = p.dims3()?;
    if c4 % 4 != 0 {
        return Err(Error::shape(
            "haar_inverse",
            format!("packed input needs 4C channels, got {c4}"),
        ));
    }
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let band = c * h2 * w2;
    let src = p.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let o = (ch * h2 + y) * w2 + xx;
                let px = butterfly(src[o], src[band + o], src[2 * band + o], src[3 * band + o]);
                let top = (ch * h + 2 * y) * w + 2 * xx;
                out[top] = px[0];
                out[top + 1] = px[1];
                out[top + w] = px[2];
                out[top + w + 1] = px[3];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

pub fn haar_forward(x: &Tensor) -> Result<WaveletPair> {
    let packed = haar_forward_packed(x)?;
    let c = packed.shape()[0] / 4;
    Ok(WaveletPair {
        low: packed.slice_channels(0, c)?,
        high: packed.slice_channels(c, 3 * c)?,
    })
}

pub fn haar_inverse(p: &WaveletPair) -> Result<Tensor> {
    let (c, h, w) = p.low.dims3()?;
    let (hc, hh, hw) = p.high.dims3()?;
    if hc != 3 * c || (hh, hw) != (h, w) {
        return Err(Error::shape(
            "haar_inverse",
            format!(
                "low {:?} / high {:?}: high must have 3x the low channels",
                p.low.shape(),
                p.high.shape()
            ),
        ));
    }
    haar_inverse_packed(&Tensor::concat_channels(&[&p.low, &p.high])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_has_no_high_band() {
        let x = Tensor::full(&[2, 4, 6], 1.0);
        let p = haar_forward(&x).unwrap();
        assert!(p.low.data().iter().all(|&v| v == 2.0));
        assert!(p.high.data().iter().all(|&v| v == 0.0));
        assert_eq!(haar_inverse(&p).unwrap(), x);
    }

    #[test]
    fn single_impulse() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = haar_forward_packed(&x).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn pure_diagonal_band_is_a_checkerboard() {
        let low = Tensor::zeros(&[1, 2, 2]);
        let mut high = Tensor::zeros(&[3, 2, 2]);
        // D band of the block at (1, 0)
        high.set3(2, 1, 0, 1.0);
        let x = haar_inverse(&WaveletPair::new(low, high).unwrap()).unwrap();
        let expected = [
            0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            0.5, -0.5, 0.0, 0.0, //
            -0.5, 0.5, 0.0, 0.0,
        ];
        assert_eq!(x.data(), &expected);
    }

    #[test]
    fn odd_extent_names_the_axis() {
        let err = haar_forward(&Tensor::zeros(&[1, 4, 3])).unwrap_err();
        assert!(matches!(
            err,
            Error::Extent {
                axis: "width",
                len: 3,
                ..
            }
        ));
        let err = haar_forward(&Tensor::zeros(&[1, 5, 4])).unwrap_err();
        assert!(matches!(err, Error::Extent { axis: "height", .. }));
    }

    #[test]
    fn channel_mismatch_on_inverse() {
        let p = WaveletPair {
            low: Tensor::zeros(&[2, 2, 2]),
            high: Tensor::zeros(&[3, 2, 2]),
        };
        assert!(haar_inverse(&p).is_err());
    }

    #[test]
    fn energy_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[3, 8, 8], 1.0, &mut rng);
        let p = haar_forward(&x).unwrap();
        let direct: f64 = x.data().iter().map(|v| v * v).sum();
        let bands: f64 = p.low.data().iter().chain(p.high.data()).map(|v| v * v).sum();
        assert!((direct - bands).abs() <= 1e-12 * direct);
    }

    proptest! {
        #[test]
        fn perfect_reconstruction(vals in proptest::collection::vec(-1.0f64..1.0, 2 * 4 * 6)) {
            let x = Tensor::from_vec(&[2, 4, 6], vals).unwrap();
            let back = haar_inverse(&haar_forward(&x).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&x) < 1e-12);
        }
    }
}
