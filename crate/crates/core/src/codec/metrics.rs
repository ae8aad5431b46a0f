//! PSNR and SSIM on BT.601 luma, in 8-bit units.

use crate::bam::to_luma;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported when the images are identical.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Luma of a `[0, 1]` image scaled to `0..=255`.
pub fn luma_255(img: &Tensor) -> Result<Tensor> {
    let (c, _, _) = img.dims3()?;
    let y = match c {
        1 => img.clone(),
        3 => to_luma(img)?,
        _ => return Err(Error::shape("luma", format!("need 1 or 3 channels, got {c}"))),
    };
    Ok(y.map(|v| v * 255.0))
}

pub fn psnr_y(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "psnr_y")?;
    let (ya, yb) = (luma_255(a)?, luma_255(b)?);
    let mse = ya
        .data()
        .iter()
        .zip(yb.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / ya.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP))
}

fn window_1d() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every fully-contained 11x11 Gaussian window.
pub fn ssim_y(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "ssim_y")?;
    let (_, h, w) = a.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim_y",
            format!("images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"),
        ));
    }
    let (ya, yb) = (luma_255(a)?, luma_255(b)?);
    let (x, y) = (ya.data(), yb.data());
    let k = window_1d();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(x, h, w, &k);
    let my = filter_valid(y, h, w, &k);
    let sxx = filter_valid(&xx, h, w, &k);
    let syy = filter_valid(&yy, h, w, &k);
    let sxy = filter_valid(&xy, h, w, &k);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut acc = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(acc / mx.len() as f64)
}
