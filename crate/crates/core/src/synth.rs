//! Deterministic procedural test images: smooth gradients with a few
//! flat-coloured shapes, softened slightly so edges are not aliased.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bam::gauss_blur;
use crate::tensor::Tensor;

fn colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
    ]
}

/// One `3 x size x size` image in `[0, 1]`, fully determined by `seed`.
pub fn scene(seed: u64, size: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let s = size as f64;
    let (c0, c1) = (colour(&mut rng), colour(&mut rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut img = Tensor::zeros(&[3, size, size]);
    for y in 0..size {
        for x in 0..size {
            let t = (((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy) + 0.75) / 1.5;
            for c in 0..3 {
                img.set3(c, y, x, c0[c] * (1.0 - t) + c1[c] * t);
            }
        }
    }
    let shapes = rng.random_range(2..=4);
    for _ in 0..shapes {
        let col = colour(&mut rng);
        let cx = rng.random_range(0.1..0.9) * s;
        let cy = rng.random_range(0.1..0.9) * s;
        let r = rng.random_range(0.12..0.35) * s;
        let kind = rng.random_range(0..3);
        let stripe = rng.random_range(3.0..6.0);
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = match kind {
                    0 => px * px + py * py <= r * r,
                    1 => px.abs() <= r && py.abs() <= 0.6 * r,
                    _ => px.abs() <= r && py.abs() <= r && ((px + py) / stripe).floor() as i64 % 2 == 0,
                };
                if inside {
                    for (c, &v) in col.iter().enumerate() {
                        img.set3(c, y, x, v);
                    }
                }
            }
        }
    }
    gauss_blur(&img, 0.6).expect("valid sigma")
}

/// `count` scenes with consecutive seeds starting at `first`.
pub fn corpus(first: u64, count: usize, size: usize) -> Vec<Tensor> {
    (0..count as u64).map(|i| scene(first + i, size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let a = scene(3, 32);
        assert_eq!(a, scene(3, 32));
        assert_ne!(a, scene(4, 32));
        assert_eq!(a.shape(), &[3, 32, 32]);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
