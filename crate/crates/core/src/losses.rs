//! Training objectives and the boundary-aware weight schedule.
//!
//! Every term is a per-element mean so values do not depend on resolution.
//! Each function has a plain-tensor form and a graph form; the graph forms
//! are what training differentiates, the plain forms are for reporting and
//! for checking the graph forms.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};
use crate::tensor::Tensor;

/// `0.5 * ln(2 pi)`: per-element negative log-density of `N(0,1)` at zero.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub forw: f64,
    pub back: f64,
    /// Perceptual-term weight. Kept for configuration parity; the term
    /// itself is always zero here.
    pub lpips: f64,
    pub bam: f64,
    pub latent: f64,
    /// Fraction of training after which the boundary-aware weights switch on.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            forw: 2.0,
            back: 2.0,
            lpips: 1.0,
            bam: 16.0,
            latent: 4.0,
            alpha: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_forw", self.forw),
            ("lambda_back", self.back),
            ("lambda_lpips", self.lpips),
            ("lambda_bam", self.bam),
            ("lambda_latent", self.latent),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Weighted per-term contributions of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub forw: f64,
    pub back: f64,
    pub bam: f64,
    pub latent: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,lr,forw,back,bam,latent,total";

    pub fn csv_row(&self, step: usize, lr: f64) -> String {
        format!(
            "{step},{lr:e},{},{},{},{},{}",
            self.forw, self.back, self.bam, self.latent, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.forw, self.back, self.bam, self.latent, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Sums already-weighted terms. The perceptual term contributes nothing.
pub fn total_loss(forw: f64, back: f64, bam: f64, latent: f64) -> LossReport {
    LossReport {
        forw,
        back,
        bam,
        latent,
        total: forw + back + bam + latent,
    }
}

/// First epoch that uses the boundary-aware branch: the smallest integer
/// `e` with `e >= alpha * e_max`. Products that land within rounding of an
/// integer (`0.3 * 100 = 30.000000000000004`) count as that integer.
pub fn baw_switch_epoch(e_max: usize, alpha: f64) -> usize {
    let x = alpha * e_max as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn baw_is_late(e_cur: usize, e_max: usize, alpha: f64) -> bool {
    e_cur >= baw_switch_epoch(e_max, alpha)
}

/// Per-pixel loss weights for the backward term: constant `lambda_back`
/// early, `lambda_back + normalized(B_s)` once the switch epoch is reached.
/// A flat `B_s` normalizes to zero.
pub fn baw_weight(sparse: &Tensor, e_cur: usize, e_max: usize, w: &LossWeights) -> Result<Tensor> {
    if e_max == 0 {
        return Err(Error::Config("e_max must be positive".into()));
    }
    if !baw_is_late(e_cur, e_max, w.alpha) {
        return Ok(Tensor::full(sparse.shape(), w.back));
    }
    let (lo, hi) = (sparse.min(), sparse.max());
    let range = hi - lo;
    Ok(sparse.map(|v| if range > 0.0 { w.back + (v - lo) / range } else { w.back }))
}

/// `lambda * mean((y - target)^2)`.
pub fn loss_forw(y: &Tensor, target: &Tensor, lambda: f64) -> Result<f64> {
    y.expect_same_shape(target, "loss_forw")?;
    let se: f64 = y.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(lambda * se / y.len() as f64)
}

fn broadcast_weights(weights: &Tensor, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let (wc, wh, ww) = weights.dims3()?;
    if (wh, ww) != (h, w) || !(wc == 1 || wc == c) {
        return Err(Error::shape(
            "loss_back",
            format!("weights {:?} do not broadcast over {c}x{h}x{w}", weights.shape()),
        ));
    }
    if wc == c {
        return Ok(weights.clone());
    }
    let parts: Vec<&Tensor> = std::iter::repeat_n(weights, c).collect();
    Tensor::concat_channels(&parts)
}

/// `mean(weights * |x_back - x|)` with `weights` broadcast over channels.
pub fn loss_back(x_back: &Tensor, x: &Tensor, weights: &Tensor) -> Result<f64> {
    x_back.expect_same_shape(x, "loss_back")?;
    let (c, h, w) = x.dims3()?;
    let wt = broadcast_weights(weights, c, h, w)?;
    let s: f64 = x_back
        .data()
        .iter()
        .zip(x.data())
        .zip(wt.data())
        .map(|((a, b), k)| k * (a - b).abs())
        .sum();
    Ok(s / x.len() as f64)
}

fn check_levels(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(op, format!("{got} levels predicted, {want} targets")));
    }
    Ok(())
}

/// `lambda * mean over levels of MSE(b_l, target_l)`.
pub fn loss_bam(b: &[Tensor], targets: &[Tensor], lambda: f64) -> Result<f64> {
    check_levels("loss_bam", b.len(), targets.len())?;
    if b.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (p, t) in b.iter().zip(targets) {
        acc += loss_forw(p, t, 1.0)?;
    }
    Ok(lambda * acc / b.len() as f64)
}

/// `lambda * mean over all elements of 0.5 * (z^2 + ln 2pi)`.
pub fn loss_latent(z: &[Tensor], lambda: f64) -> f64 {
    let n: usize = z.iter().map(Tensor::len).sum();
    if n == 0 {
        return lambda * HALF_LN_2PI;
    }
    let sq: f64 = z.iter().map(Tensor::sum_sq).sum();
    lambda * (0.5 * sq / n as f64 + HALF_LN_2PI)
}

pub fn loss_forw_graph(g: &mut Graph, y: Var, target: &Tensor, lambda: f64) -> Result<Var> {
    let t = g.constant(target.clone());
    let d = g.sub(y, t)?;
    let sq = g.square(d);
    let m = g.mean(sq);
    Ok(g.scale(m, lambda))
}

pub fn loss_back_graph(g: &mut Graph, x_back: Var, x: &Tensor, weights: &Tensor) -> Result<Var> {
    let (c, h, w) = x.dims3()?;
    let wt = g.constant(broadcast_weights(weights, c, h, w)?);
    let t = g.constant(x.clone());
    let d = g.sub(x_back, t)?;
    let a = g.abs(d);
    let p = g.mul(a, wt)?;
    Ok(g.mean(p))
}

pub fn loss_bam_graph(g: &mut Graph, b: &[Var], targets: &[Tensor], lambda: f64) -> Result<Var> {
    check_levels("loss_bam", b.len(), targets.len())?;
    let mut acc: Option<Var> = None;
    for (&p, t) in b.iter().zip(targets) {
        let term = loss_forw_graph(g, p, t, 1.0)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(match acc {
        Some(a) => g.scale(a, lambda / b.len() as f64),
        None => g.constant(Tensor::scalar(0.0)),
    })
}

pub fn loss_latent_graph(g: &mut Graph, z: &[Var], lambda: f64) -> Result<Var> {
    let n: usize = z.iter().map(|&v| g.shape(v).iter().product::<usize>()).sum();
    let mut acc: Option<Var> = None;
    for &v in z {
        let sq = g.square(v);
        let s = g.sum(sq);
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    let sum = match acc {
        Some(a) => a,
        None => g.constant(Tensor::scalar(0.0)),
    };
    let per = g.scale(sum, 0.5 / n.max(1) as f64);
    let shifted = g.offset(per, HALF_LN_2PI);
    Ok(g.scale(shifted, lambda))
}

/// Graph nodes of each weighted term and their sum.
#[derive(Debug, Clone, Copy)]
pub struct GraphTerms {
    pub forw: Var,
    pub back: Var,
    pub bam: Var,
    pub latent: Var,
    pub total: Var,
}

impl GraphTerms {
    pub fn new(g: &mut Graph, forw: Var, back: Var, bam: Var, latent: Var) -> Result<Self> {
        let a = g.add(forw, back)?;
        let b = g.add(a, bam)?;
        let total = g.add(b, latent)?;
        Ok(Self {
            forw,
            back,
            bam,
            latent,
            total,
        })
    }

    pub fn report(&self, g: &Graph) -> LossReport {
        LossReport {
            forw: g.scalar(self.forw),
            back: g.scalar(self.back),
            bam: g.scalar(self.bam),
            latent: g.scalar(self.latent),
            total: g.scalar(self.total),
        }
    }
}
