//! Statistics of the high-frequency residual `X - up(down(X))`.

use crate::error::Result;
use crate::resample::{bicubic_down, bicubic_up};
use crate::tensor::Tensor;

pub const HIST_BINS: usize = 64;
/// Histogram range in `[0, 1]` intensity units; outliers go to the edge bins.
pub const HIST_RANGE: (f64, f64) = (-0.5, 0.5);

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub variance: f64,
    pub histogram: [u64; HIST_BINS],
}

pub fn residual(x: &Tensor, factor: usize) -> Result<Tensor> {
    let round_trip = bicubic_up(&bicubic_down(x, factor)?, factor)?;
    x.zip_map(&round_trip, |a, b| a - b)
}

pub fn residual_stats(x: &Tensor, factor: usize) -> Result<ResidualStats> {
    let r = residual(x, factor)?;
    let n = r.len() as f64;
    let mean = r.sum() / n;
    let variance = r.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut histogram = [0u64; HIST_BINS];
    let (lo, hi) = HIST_RANGE;
    for &v in r.data() {
        let pos = ((v - lo) / (hi - lo) * HIST_BINS as f64).floor();
        let bin = pos.clamp(0.0, (HIST_BINS - 1) as f64) as usize;
        histogram[bin] += 1;
    }
    Ok(ResidualStats {
        mean,
        variance,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_has_no_residual() {
        let s = residual_stats(&Tensor::full(&[3, 16, 16], 0.4), 2).unwrap();
        assert!(s.mean.abs() < 1e-12);
        assert!(s.variance < 1e-24);
        assert_eq!(s.histogram[HIST_BINS / 2 - 1] + s.histogram[HIST_BINS / 2], 768);
    }

    #[test]
    fn histogram_counts_every_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let s = residual_stats(&x, 2).unwrap();
        assert_eq!(s.histogram.iter().sum::<u64>(), 768);
        assert!(s.variance > 0.0);
    }
}
