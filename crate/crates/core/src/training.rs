//! Adam, cosine learning-rate decay and the seeded training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bam::{bam_generate, BamConfig, Norm};
use crate::coupling::{CouplingMode, FlowConfig, FlowModel, FlowOutput, DEFAULT_INIT_STD};
use crate::error::{Error, Result};
use crate::losses::{
    baw_weight, loss_back_graph, loss_bam_graph, loss_forw_graph, loss_latent_graph, GraphTerms, LossReport,
    LossWeights,
};
use crate::numerics::{Graph, Var};
use crate::resample::{area_down, bicubic_down, nearest_up};
use crate::tensor::Tensor;

/// `lr_min + (lr_max - lr_min) * (1 + cos(pi t / t_max)) / 2`, exact at
/// both ends and clamped to `lr_min` past `t_max`.
pub fn cosine_lr(t: usize, t_max: usize, lr_max: f64, lr_min: f64) -> f64 {
    if t == 0 {
        return lr_max;
    }
    if t >= t_max {
        return lr_min;
    }
    let phase = std::f64::consts::PI * t as f64 / t_max as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos())
}

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            beta1,
            beta2,
            eps,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One update. Every gradient is checked before anything is modified;
    /// a non-finite entry aborts the step and names the parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.expect_same_shape(g, "adam_step")?;
            if !g.all_finite() {
                let name = names.get(i).map_or("?", String::as_str);
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((pv, &gv), mv), vv) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= k;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub batch: usize,
    pub crop: usize,
    pub flow: FlowConfig,
    pub bam: BamConfig,
    /// Standard deviation of the latent samples used for reconstruction.
    pub sigma_z: f64,
    pub clip: f64,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            epochs: 20,
            steps_per_epoch: 100,
            lr_max: 2e-4,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            batch: 4,
            crop: 32,
            flow: FlowConfig::default(),
            bam: BamConfig::default(),
            sigma_z: 1.0,
            clip: 5.0,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.bam.validate()?;
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch == 0 {
            return Err(Error::Config(
                "epochs, steps_per_epoch and batch must be positive".into(),
            ));
        }
        if !(self.lr_min < self.lr_max && self.lr_min >= 0.0) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.flow.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(self.flow.scale_factor()) {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of {}",
                self.crop,
                self.flow.scale_factor()
            )));
        }
        if !(self.sigma_z >= 0.0 && self.clip > 0.0 && self.init_std >= 0.0) {
            return Err(Error::Config("sigma_z, clip and init_std must be non-negative".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lambda_forw" => self.weights.forw = parse_num(key, v)?,
            "lambda_back" => self.weights.back = parse_num(key, v)?,
            "lambda_lpips" => self.weights.lpips = parse_num(key, v)?,
            "lambda_bam" => self.weights.bam = parse_num(key, v)?,
            "lambda_latent" => self.weights.latent = parse_num(key, v)?,
            "alpha" => self.weights.alpha = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = parse_num(key, v)?,
            "lr_max" => self.lr_max = parse_num(key, v)?,
            "lr_min" => self.lr_min = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "crop" => self.crop = parse_num(key, v)?,
            "levels" => self.flow.levels = parse_num(key, v)?,
            "hidden" => self.flow.hidden = parse_num(key, v)?,
            "mode" => {
                self.flow.mode = match v {
                    "general" => CouplingMode::General,
                    "additive" => CouplingMode::Additive,
                    _ => return Err(Error::Config(format!("mode: unknown {v:?}"))),
                }
            }
            "bits" => {
                self.bam.bits = parse_num(key, v)?;
                self.flow.bits = self.bam.bits;
            }
            "threshold" => self.bam.threshold = parse_num(key, v)?,
            "norm" => self.bam.norm = v.parse::<Norm>()?,
            "sigma" => self.bam.sigma = parse_num(key, v)?,
            "sigma_z" => self.sigma_z = parse_num(key, v)?,
            "clip" => self.clip = parse_num(key, v)?,
            "init_std" => self.init_std = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file; `#` starts a comment, every key is
    /// optional.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mode = match self.flow.mode {
            CouplingMode::General => "general",
            CouplingMode::Additive => "additive",
        };
        let norm = match self.bam.norm {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        };
        let w = &self.weights;
        let mut s = String::new();
        for (k, v) in [
            ("lambda_forw", w.forw.to_string()),
            ("lambda_back", w.back.to_string()),
            ("lambda_lpips", w.lpips.to_string()),
            ("lambda_bam", w.bam.to_string()),
            ("lambda_latent", w.latent.to_string()),
            ("alpha", w.alpha.to_string()),
            ("epochs", self.epochs.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
            ("lr_max", self.lr_max.to_string()),
            ("lr_min", self.lr_min.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("batch", self.batch.to_string()),
            ("crop", self.crop.to_string()),
            ("levels", self.flow.levels.to_string()),
            ("hidden", self.flow.hidden.to_string()),
            ("mode", mode.to_string()),
            ("bits", self.bam.bits.to_string()),
            ("threshold", self.bam.threshold.to_string()),
            ("norm", norm.to_string()),
            ("sigma", self.bam.sigma.to_string()),
            ("sigma_z", self.sigma_z.to_string()),
            ("clip", self.clip.to_string()),
            ("init_std", self.init_std.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Everything the objective needs for one high-resolution crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `C x H x W` in `[0, 1]`.
    pub x: Tensor,
    /// Bicubic-downscaled `x`, in `Y` units (already multiplied by the gain).
    pub y_target: Tensor,
    /// Per level, quantized boundary levels rescaled to `[0, 1]`.
    pub b_targets: Vec<Tensor>,
    /// First-level sparse magnitudes, nearest-upsampled to `H x W`.
    pub sparse_hr: Tensor,
}

impl Sample {
    pub fn prepare(x: &Tensor, flow: &FlowConfig, bam: &BamConfig) -> Result<Self> {
        let gain = flow.y_gain();
        let y_target = bicubic_down(x, flow.scale_factor())?.map(|v| v * gain);
        let mut b_targets = Vec::with_capacity(flow.levels);
        let mut sparse_hr = None;
        for l in 1..=flow.levels {
            let small = area_down(x, 1 << l)?.map(|v| v * 255.0);
            let map = bam_generate(&small, bam)?;
            if l == 1 {
                sparse_hr = Some(nearest_up(&map.sparse, 2)?);
            }
            b_targets.push(map.normalized());
        }
        Ok(Self {
            x: x.clone(),
            y_target,
            b_targets,
            sparse_hr: sparse_hr.expect("at least one level"),
        })
    }
}

/// Graph of the full objective for one sample. `z_sample` feeds the
/// reconstruction in place of the forward latents.
pub fn build_objective(
    g: &mut Graph,
    model: &FlowModel<Var>,
    sample: &Sample,
    baw: &Tensor,
    z_sample: &[Tensor],
    w: &LossWeights,
) -> Result<(GraphTerms, FlowOutput<Var>)> {
    let x = g.constant(sample.x.clone());
    let out = model.forward_graph(g, x)?;
    let forw = loss_forw_graph(g, out.y, &sample.y_target, w.forw)?;
    let bam = loss_bam_graph(g, &out.b, &sample.b_targets, w.bam)?;
    let latent = loss_latent_graph(g, &out.z, w.latent)?;
    let recon_in = FlowOutput {
        y: out.y,
        b: out.b.clone(),
        z: z_sample.iter().map(|t| g.constant(t.clone())).collect(),
    };
    let x_back = model.inverse_graph(g, &recon_in)?;
    let back = loss_back_graph(g, x_back, &sample.x, baw)?;
    Ok((GraphTerms::new(g, forw, back, bam, latent)?, out))
}

/// Per-level latent shapes for an `h x w` input.
pub fn latent_shapes(flow: &FlowConfig, h: usize, w: usize) -> Vec<[usize; 3]> {
    (1..=flow.levels)
        .map(|l| [3 * flow.channels - 1, h >> l, w >> l])
        .collect()
}

pub fn sample_latents<R: Rng + ?Sized>(flow: &FlowConfig, h: usize, w: usize, sigma: f64, rng: &mut R) -> Vec<Tensor> {
    latent_shapes(flow, h, w)
        .iter()
        .map(|s| Tensor::randn(s, sigma, rng))
        .collect()
}

fn crop(img: &Tensor, size: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if h < size || w < size {
        return Err(Error::Config(format!("image {h}x{w} is smaller than crop {size}")));
    }
    if h == size && w == size {
        return Ok(img.clone());
    }
    let y0 = rng.random_range(0..=h - size);
    let x0 = rng.random_range(0..=w - size);
    let mut out = Tensor::zeros(&[c, size, size]);
    for ch in 0..c {
        for y in 0..size {
            for x in 0..size {
                out.set3(ch, y, x, img.get3(ch, y0 + y, x0 + x));
            }
        }
    }
    Ok(out)
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub history: Vec<LossReport>,
    pub lrs: Vec<f64>,
}

/// Mean of one step's per-sample reports.
fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut r = LossReport::default();
    for x in reports {
        r.forw += x.forw / n;
        r.back += x.back / n;
        r.bam += x.bam / n;
        r.latent += x.latent / n;
        r.total += x.total / n;
    }
    r
}

/// Trains a freshly initialised model. `on_step(step, lr, report)` is called
/// after every update.
pub fn train(
    images: &[Tensor],
    cfg: &TrainConfig,
    on_step: impl FnMut(usize, f64, &LossReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = FlowModel::init(cfg.flow, cfg.init_std, &mut rng);
    train_from(model, images, cfg, &mut rng, on_step)
}

/// Continues training `model` with the caller's generator.
pub fn train_from(
    mut model: FlowModel,
    images: &[Tensor],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(usize, f64, &LossReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    for img in images {
        let (c, _, _) = img.dims3()?;
        if c != cfg.flow.channels {
            return Err(Error::shape(
                "train",
                format!("image has {c} channels, model expects {}", cfg.flow.channels),
            ));
        }
    }
    let names = model.param_names();
    let mut adam = Adam::new(model.params().iter().map(|p| p.shape()), cfg.beta1, cfg.beta2, cfg.eps);
    let total = cfg.total_steps();
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(total);
    let mut lrs = Vec::with_capacity(total);

    for step in 0..total {
        let epoch = step / cfg.steps_per_epoch;
        let lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min);
        let mut grads: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut reports = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if order.is_empty() {
                order = (0..images.len()).collect();
                order.shuffle(rng);
                order.reverse();
            }
            let idx = order.pop().expect("refilled above");
            let x = crop(&images[idx], cfg.crop, rng)?;
            let sample = Sample::prepare(&x, &cfg.flow, &cfg.bam)?;
            let baw = baw_weight(&sample.sparse_hr, epoch, cfg.epochs, &cfg.weights)?;
            let (_, h, w) = x.dims3()?;
            let z = sample_latents(&cfg.flow, h, w, cfg.sigma_z, rng);

            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let (terms, _) = build_objective(&mut g, &bound, &sample, &baw, &z, &cfg.weights)?;
            let report = terms.report(&g);
            if !report.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at step {step}: forw={} back={} bam={} latent={} total={}",
                    report.forw, report.back, report.bam, report.latent, report.total
                )));
            }
            let adj = g.backward(terms.total)?;
            let mut vars = Vec::with_capacity(grads.len());
            bound.visit(&mut |_, v: &Var| vars.push(*v));
            let k = 1.0 / cfg.batch as f64;
            for (acc, v) in grads.iter_mut().zip(vars) {
                if let Some(gv) = adj.get(v) {
                    acc.axpy(k, gv);
                }
            }
            reports.push(report);
        }
        clip_global_norm(&mut grads, cfg.clip);
        let mut params = model.params_mut();
        adam.step(&mut params, &grads, &names, lr)?;
        let report = mean_report(&reports);
        on_step(step, lr, &report);
        history.push(report);
        lrs.push(lr);
    }
    Ok(TrainOutcome { model, history, lrs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 1000, 2e-4, 1e-6), 2e-4);
        assert_eq!(cosine_lr(1000, 1000, 2e-4, 1e-6), 1e-6);
        assert_eq!(cosine_lr(5000, 1000, 2e-4, 1e-6), 1e-6);
        let mid = cosine_lr(500, 1000, 2e-4, 1e-6);
        assert!((mid - (2e-4 + 1e-6) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let orig = p.clone();
        let mut adam = Adam::new([p.shape()], 0.9, 0.999, 1e-8);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Tensor::zeros(&[3])], &["p".into()], 1e-2)
                .unwrap();
        }
        assert_eq!(p, orig);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let mut adam = Adam::new([p.shape()], 0.9, 0.999, 1e-8);
        let g = Tensor::from_vec(&[2], vec![3.0, -0.01]).unwrap();
        adam.step(&mut [&mut p], &[g], &["p".into()], 1e-3).unwrap();
        assert!((p.data()[0] + 1e-3).abs() < 1e-9);
        assert!((p.data()[1] - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn adam_matches_scalar_reference() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.05);
        let gs = [0.7, -1.3];
        // hand-rolled
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for (i, g) in gs.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = Tensor::scalar(2.0);
        let mut adam = Adam::new([p.shape()], b1, b2, eps);
        for g in gs {
            adam.step(&mut [&mut p], &[Tensor::scalar(g)], &["p".into()], lr)
                .unwrap();
        }
        assert!((p.data()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(1.0);
        let mut adam = Adam::new([a.shape(), b.shape()], 0.9, 0.999, 1e-8);
        let err = adam
            .step(
                &mut [&mut a, &mut b],
                &[Tensor::scalar(0.1), Tensor::scalar(f64::NAN)],
                &["l0.b0.phi.conv1.w".into(), "l0.b1.eta.conv2.b".into()],
                1e-3,
            )
            .unwrap_err();
        assert!(err.to_string().contains("l0.b1.eta.conv2.b"), "{err}");
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::full(&[4], 3.0), Tensor::full(&[1], 4.0)];
        let n = clip_global_norm(&mut g, 5.0);
        assert!((n - (36.0f64 + 16.0).sqrt()).abs() < 1e-12);
        let after = g.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
        assert!((after - 5.0).abs() < 1e-12);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let mut cfg = TrainConfig {
            seed: 17,
            sigma_z: 0.5,
            ..Default::default()
        };
        cfg.flow.mode = CouplingMode::Additive;
        cfg.bam.norm = Norm::L1;
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(TrainConfig::parse("# nothing\n\n").unwrap(), TrainConfig::default());
        let e = TrainConfig::parse("epochs = 3\nbogus = 1\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(TrainConfig::parse("lr_min = 1\n").is_err());
        assert!(TrainConfig::parse("crop = 30\nlevels = 2").is_err());
        assert!(TrainConfig::parse("seed").is_err());
    }

    #[test]
    fn default_weights_come_from_config() {
        let cfg = TrainConfig::parse("").unwrap();
        let w = cfg.weights;
        assert_eq!(
            (w.forw, w.back, w.lpips, w.bam, w.latent, w.alpha),
            (2.0, 2.0, 1.0, 16.0, 4.0, 0.3)
        );
        assert_eq!((cfg.lr_max, cfg.lr_min, cfg.beta1, cfg.beta2), (2e-4, 1e-6, 0.9, 0.999));
    }

    fn tiny_images() -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..2)
            .map(|_| Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng))
            .collect()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            steps_per_epoch: 2,
            batch: 2,
            crop: 8,
            flow: FlowConfig {
                hidden: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let imgs = tiny_images();
        let cfg = tiny_config();
        let a = train(&imgs, &cfg, |_, _, _| {}).unwrap();
        let b = train(&imgs, &cfg, |_, _, _| {}).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        let c = train(&imgs, &TrainConfig { seed: 1, ..cfg }, |_, _, _| {}).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn training_logs_every_step() {
        let mut seen = Vec::new();
        let out = train(&tiny_images(), &tiny_config(), |s, lr, r| seen.push((s, lr, r.total))).unwrap();
        assert_eq!(seen.len(), 4);
        assert_eq!(seen[0].1, 2e-4);
        assert_eq!(out.lrs.len(), 4);
        assert!(out.history.iter().all(LossReport::is_finite));
        assert!(out.history.iter().all(|r| r.latent >= 4.0 * crate::losses::HALF_LN_2PI));
    }

    #[test]
    fn training_rejects_bad_inputs() {
        let cfg = tiny_config();
        assert!(train(&[], &cfg, |_, _, _| {}).is_err());
        assert!(train(&[Tensor::zeros(&[1, 8, 8])], &cfg, |_, _, _| {}).is_err());
        assert!(train(&[Tensor::zeros(&[3, 4, 4])], &cfg, |_, _, _| {}).is_err());
    }

    #[test]
    fn sample_targets_have_level_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let flow = FlowConfig {
            levels: 2,
            ..Default::default()
        };
        let s = Sample::prepare(&x, &flow, &BamConfig::default()).unwrap();
        assert_eq!(s.y_target.shape(), &[3, 4, 4]);
        assert_eq!(s.b_targets[0].shape(), &[1, 8, 8]);
        assert_eq!(s.b_targets[1].shape(), &[1, 4, 4]);
        assert_eq!(s.sparse_hr.shape(), &[1, 16, 16]);
        assert!(s
            .b_targets
            .iter()
            .all(|b| b.data().iter().all(|&v| (0.0..=1.0).contains(&v))));
    }

    proptest! {
        #[test]
        fn cosine_is_monotone(t_max in 1usize..5000, a in 0usize..5000, b in 0usize..5000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(cosine_lr(lo, t_max, 2e-4, 1e-6) >= cosine_lr(hi, t_max, 2e-4, 1e-6));
        }

        #[test]
        fn adam_zero_grads_never_move(vals in proptest::collection::vec(-10.0f64..10.0, 1..8), steps in 1usize..20) {
            let mut p = Tensor::from_vec(&[vals.len()], vals).unwrap();
            let orig = p.clone();
            let mut adam = Adam::new([p.shape()], 0.9, 0.999, 1e-8);
            for _ in 0..steps {
                adam.step(&mut [&mut p], &[Tensor::zeros(orig.shape())], &["p".into()], 1e-3).unwrap();
            }
            prop_assert_eq!(p, orig);
        }
    }
}
