//! Image resampling: antialiased bicubic, block averaging, nearest upsampling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keys cubic convolution with `a = -0.5`.
#[inline]
pub fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-sample `(first input index, normalized weights)` for a 1-D
/// resize. Downscaling widens the kernel by `1/scale` (antialiasing);
/// out-of-range taps are clamped to the edge.
fn contributions(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_out as f64 / n_in as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let wgt = stretch * cubic((center - j as f64) * stretch);
                if wgt != 0.0 {
                    let idx = j.clamp(0, n_in as isize - 1) as usize;
                    taps.push((idx, wgt));
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Separable bicubic resize of every channel to `out_h x out_w`.
pub fn resize_bicubic(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::shape("resize_bicubic", "extents must be positive"));
    }
    let cols = contributions(w, out_w);
    let rows = contributions(h, out_h);
    let src = img.data();
    let mut tmp = vec![0.0; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..][..w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[(ch * h + y) * out_w + x] = taps.iter().map(|&(j, k)| k * row[j]).sum();
            }
        }
    }
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &tmp[ch * h * out_w..][..h * out_w];
        for (y, taps) in rows.iter().enumerate() {
            for x in 0..out_w {
                out[(ch * out_h + y) * out_w + x] = taps.iter().map(|&(j, k)| k * plane[j * out_w + x]).sum();
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

fn check_divisible(op: &'static str, h: usize, w: usize, factor: usize) -> Result<()> {
    for (axis, len) in [("height", h), ("width", w)] {
        if factor == 0 || len % factor != 0 {
            return Err(Error::Extent {
                op,
                axis,
                len,
                divisor: factor,
            });
        }
    }
    Ok(())
}

pub fn bicubic_down(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = img.dims3()?;
    check_divisible("bicubic_down", h, w, factor)?;
    resize_bicubic(img, h / factor, w / factor)
}

pub fn bicubic_up(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = img.dims3()?;
    resize_bicubic(img, h * factor, w * factor)
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn area_down(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    check_divisible("area_down", h, w, factor)?;
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += img.get3(ch, y * factor + dy, x * factor + dx);
                    }
                }
                out.set3(ch, y, x, acc * norm);
            }
        }
    }
    Ok(out)
}

pub fn nearest_up(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let mut out = Tensor::zeros(&[c, h * factor, w * factor]);
    for ch in 0..c {
        for y in 0..h * factor {
            for x in 0..w * factor {
                out.set3(ch, y, x, img.get3(ch, y / factor, x / factor));
            }
        }
    }
    Ok(out)
}
