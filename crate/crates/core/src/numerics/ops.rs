//! Primitive tensor kernels and their vector-Jacobian products.

use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Clamp bound for [`pos_scale`]; outputs lie in `[0.1, 10]`.
pub const POS_SCALE_BOUND: f64 = LN_10;

/// Returns `(out_channels, in_channels, k)` for an odd, square kernel.
fn kernel_dims(kernel: &Tensor) -> Result<(usize, usize, usize)> {
    match kernel.shape()[..] {
        [o, c, kh, kw] if kh == kw && kh % 2 == 1 => Ok((o, c, kh)),
        _ => Err(Error::shape(
            "conv2d",
            format!("kernel must be (O, C, k, k) with odd k, got {:?}", kernel.shape()),
        )),
    }
}

fn check_conv(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<[usize; 5]> {
    let (c, h, w) = input.dims3()?;
    let (o, kc, k) = kernel_dims(kernel)?;
    if kc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, kernel expects {kc}"),
        ));
    }
    if let Some(b) = bias {
        if b.len() != o {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries for {o} output channels", b.len()),
            ));
        }
    }
    Ok([c, h, w, o, k])
}

/// Valid `[lo, hi)` output range along one axis for a tap offset `d`.
#[inline]
fn tap_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

/// Stride-1 cross-correlation with zero padding of `k / 2`; output keeps
/// the input's spatial extents.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let [c, h, w, o, k] = check_conv(input, kernel, bias)?;
    let p = (k / 2) as isize;
    let plane = h * w;
    let x = input.data();
    let kd = kernel.data();
    let mut out = vec![0.0; o * plane];
    for oc in 0..o {
        let out_plane = &mut out[oc * plane..(oc + 1) * plane];
        if let Some(b) = bias {
            out_plane.fill(b.data()[oc]);
        }
        for ic in 0..c {
            let in_plane = &x[ic * plane..(ic + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = tap_range(w, dx);
                    let wv = kd[((oc * c + ic) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let orow = &mut out_plane[y * w + x0..y * w + x1];
                        let irow = &in_plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[o, h, w], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(input: &Tensor, kernel: &Tensor, grad_out: &Tensor) -> Result<Conv2dGrads> {
    let [c, h, w, o, k] = check_conv(input, kernel, None)?;
    if grad_out.shape() != [o, h, w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {:?} vs output [{o}, {h}, {w}]", grad_out.shape()),
        ));
    }
    let p = (k / 2) as isize;
    let plane = h * w;
    let x = input.data();
    let kd = kernel.data();
    let g = grad_out.data();
    let mut gin = vec![0.0; c * plane];
    let mut gk = vec![0.0; kd.len()];
    let mut gb = vec![0.0; o];
    for oc in 0..o {
        let g_plane = &g[oc * plane..(oc + 1) * plane];
        gb[oc] = g_plane.iter().sum();
        for ic in 0..c {
            let in_plane = &x[ic * plane..(ic + 1) * plane];
            let gin_plane = &mut gin[ic * plane..(ic + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = tap_range(w, dx);
                    let widx = ((oc * c + ic) * k + ky) * k + kx;
                    let wv = kd[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let n = x1 - x0;
                        let grow = &g_plane[y * w + x0..y * w + x1];
                        let irow = &in_plane[sy * w + sx0..sy * w + sx0 + n];
                        let girow = &mut gin_plane[sy * w + sx0..sy * w + sx0 + n];
                        for ((gi, gv), iv) in girow.iter_mut().zip(grow).zip(irow) {
                            *gi += wv * gv;
                            acc += gv * iv;
                        }
                    }
                    gk[widx] += acc;
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::from_vec(&[c, h, w], gin)?,
        kernel: Tensor::from_vec(kernel.shape(), gk)?,
        bias: Tensor::from_vec(&[o], gb)?,
    })
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| v.max(slope * v))
}

pub fn leaky_relu_backward(x: &Tensor, slope: f64, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv *= slope;
        }
    }
    g
}

/// Strictly positive bounded scale: `exp(clamp(x, -ln 10, ln 10))`.
pub fn pos_scale(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(-POS_SCALE_BOUND, POS_SCALE_BOUND).exp())
}

/// The clamp has zero slope outside `(-ln 10, ln 10)`.
pub fn pos_scale_backward(x: &Tensor, out: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for ((gv, &xv), &s) in g.data_mut().iter_mut().zip(x.data()).zip(out.data()) {
        if xv > -POS_SCALE_BOUND && xv < POS_SCALE_BOUND {
            *gv *= s;
        } else {
            *gv = 0.0;
        }
    }
    g
}
