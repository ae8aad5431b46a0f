//! Invertible coupling blocks and the multi-level wavelet flow.
//!
//! Every parameterised structure here is generic over its parameter
//! carrier `P`: `Tensor` for stored weights, [`Var`] for weights bound into
//! a [`Graph`], and `Tensor` again for gradients mapped back out of
//! [`Gradients`](crate::numerics::Gradients). The topology is shared by all
//! three, so the parameter order used by the optimizer and by the model
//! file is defined in one place ([`FlowModel::visit`]).

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var, DEFAULT_LEAKY_SLOPE};
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN: usize = 16;
pub const BLOCKS_PER_LEVEL: usize = 2;
/// Std of the first convolution at initialisation.
pub const DEFAULT_INIT_STD: f64 = 0.02;
/// Largest flattened input accepted by [`numerical_jacobian_det`].
pub const MAX_JACOBIAN_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// `u1' = u1 * s(phi(u2)) + s(phi(u2))`, `u2' = u2 * s(rho(u1')) + eta(u1')`
    General,
    /// `u1' = u1 + phi(u2)`, `u2' = u2 + eta(u1')`
    Additive,
}

impl CouplingMode {
    pub fn id(self) -> u8 {
        match self {
            CouplingMode::General => 0,
            CouplingMode::Additive => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(CouplingMode::General),
            1 => Ok(CouplingMode::Additive),
            _ => Err(Error::Format(format!("unknown coupling mode id {id}"))),
        }
    }
}

/// `conv3x3 -> leaky-ReLU -> conv3x3`, plus a 1x1 projection skip when the
/// channel counts differ (identity otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTransform<P = Tensor> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub conv1_w: P,
    pub conv1_b: P,
    pub conv2_w: P,
    pub conv2_b: P,
    pub skip_w: Option<P>,
}

impl<P> ResidualTransform<P> {
    pub fn map<Q, F: FnMut(&P) -> Q>(&self, f: &mut F) -> ResidualTransform<Q> {
        ResidualTransform {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            conv1_w: f(&self.conv1_w),
            conv1_b: f(&self.conv1_b),
            conv2_w: f(&self.conv2_w),
            conv2_b: f(&self.conv2_b),
            skip_w: self.skip_w.as_ref().map(f),
        }
    }

    pub fn visit<'a, F: FnMut(String, &'a P)>(&'a self, prefix: &str, f: &mut F) {
        f(format!("{prefix}.conv1.w"), &self.conv1_w);
        f(format!("{prefix}.conv1.b"), &self.conv1_b);
        f(format!("{prefix}.conv2.w"), &self.conv2_w);
        f(format!("{prefix}.conv2.b"), &self.conv2_b);
        if let Some(w) = &self.skip_w {
            f(format!("{prefix}.skip.w"), w);
        }
    }

    pub fn visit_mut<'a, F: FnMut(String, &'a mut P)>(&'a mut self, prefix: &str, f: &mut F) {
        f(format!("{prefix}.conv1.w"), &mut self.conv1_w);
        f(format!("{prefix}.conv1.b"), &mut self.conv1_b);
        f(format!("{prefix}.conv2.w"), &mut self.conv2_w);
        f(format!("{prefix}.conv2.b"), &mut self.conv2_b);
        if let Some(w) = &mut self.skip_w {
            f(format!("{prefix}.skip.w"), w);
        }
    }
}

impl ResidualTransform<Tensor> {
    /// All-zero transform: maps every input to zero.
    pub fn zeros(in_channels: usize, out_channels: usize, hidden: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            conv1_w: Tensor::zeros(&[hidden, in_channels, 3, 3]),
            conv1_b: Tensor::zeros(&[hidden]),
            conv2_w: Tensor::zeros(&[out_channels, hidden, 3, 3]),
            conv2_b: Tensor::zeros(&[out_channels]),
            skip_w: (in_channels != out_channels).then(|| Tensor::zeros(&[out_channels, in_channels, 1, 1])),
        }
    }

    /// First convolution drawn from `N(0, std^2)`; the output-side
    /// convolutions start at zero so the transform initially returns zero.
    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::zeros(in_channels, out_channels, hidden);
        t.conv1_w = Tensor::randn(&[hidden, in_channels, 3, 3], std, rng);
        t
    }
}

impl ResidualTransform<Var> {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.conv2d(x, self.conv1_w, Some(self.conv1_b))?;
        let h = g.leaky_relu(h, DEFAULT_LEAKY_SLOPE);
        let out = g.conv2d(h, self.conv2_w, Some(self.conv2_b))?;
        let skip = match self.skip_w {
            Some(w) => g.conv2d(x, w, None)?,
            None => x,
        };
        g.add(out, skip)
    }
}

/// One coupling block: `phi` reads the high branch, `rho` and `eta` read
/// the updated low branch.
#[derive(Debug, Clone, PartialEq)]
pub struct InvBlock<P = Tensor> {
    pub mode: CouplingMode,
    /// `3C -> C`
    pub phi: ResidualTransform<P>,
    /// `C -> 3C`; unused in additive mode.
    pub rho: ResidualTransform<P>,
    /// `C -> 3C`
    pub eta: ResidualTransform<P>,
}

impl<P> InvBlock<P> {
    pub fn map<Q, F: FnMut(&P) -> Q>(&self, f: &mut F) -> InvBlock<Q> {
        InvBlock {
            mode: self.mode,
            phi: self.phi.map(f),
            rho: self.rho.map(f),
            eta: self.eta.map(f),
        }
    }

    pub fn visit<'a, F: FnMut(String, &'a P)>(&'a self, prefix: &str, f: &mut F) {
        self.phi.visit(&format!("{prefix}.phi"), f);
        self.rho.visit(&format!("{prefix}.rho"), f);
        self.eta.visit(&format!("{prefix}.eta"), f);
    }

    pub fn visit_mut<'a, F: FnMut(String, &'a mut P)>(&'a mut self, prefix: &str, f: &mut F) {
        self.phi.visit_mut(&format!("{prefix}.phi"), f);
        self.rho.visit_mut(&format!("{prefix}.rho"), f);
        self.eta.visit_mut(&format!("{prefix}.eta"), f);
    }

    /// Channels of the low branch.
    pub fn channels(&self) -> usize {
        self.phi.out_channels
    }
}

impl InvBlock<Tensor> {
    pub fn zeros(channels: usize, hidden: usize, mode: CouplingMode) -> Self {
        Self {
            mode,
            phi: ResidualTransform::zeros(3 * channels, channels, hidden),
            rho: ResidualTransform::zeros(channels, 3 * channels, hidden),
            eta: ResidualTransform::zeros(channels, 3 * channels, hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, hidden: usize, mode: CouplingMode, std: f64, rng: &mut R) -> Self {
        Self {
            mode,
            phi: ResidualTransform::init(3 * channels, channels, hidden, std, rng),
            rho: ResidualTransform::init(channels, 3 * channels, hidden, std, rng),
            eta: ResidualTransform::init(channels, 3 * channels, hidden, std, rng),
        }
    }

    /// Every weight and bias drawn from `N(0, std^2)`.
    pub fn random<R: Rng + ?Sized>(channels: usize, hidden: usize, mode: CouplingMode, std: f64, rng: &mut R) -> Self {
        Self::zeros(channels, hidden, mode).map(&mut |t: &Tensor| Tensor::randn(t.shape(), std, rng))
    }

    pub fn bind(&self, g: &mut Graph) -> InvBlock<Var> {
        self.map(&mut |t: &Tensor| g.constant(t.clone()))
    }
}

fn check_branches(g: &Graph, channels: usize, a: Var, b: Var, op: &'static str) -> Result<()> {
    let (ca, ha, wa) = g.value(a).dims3()?;
    let (cb, hb, wb) = g.value(b).dims3()?;
    if ca != channels || cb != 3 * channels || (ha, wa) != (hb, wb) {
        return Err(Error::shape(
            op,
            format!(
                "branches {:?} / {:?} do not match a block over {channels} channels",
                g.shape(a),
                g.shape(b)
            ),
        ));
    }
    Ok(())
}

impl InvBlock<Var> {
    pub fn forward_graph(&self, g: &mut Graph, u1: Var, u2: Var) -> Result<(Var, Var)> {
        check_branches(g, self.channels(), u1, u2, "invblock_forward")?;
        match self.mode {
            CouplingMode::General => {
                let phi = self.phi.apply(g, u2)?;
                let s1 = g.pos_scale(phi);
                let scaled = g.mul(u1, s1)?;
                let v1 = g.add(scaled, s1)?;
                let rho = self.rho.apply(g, v1)?;
                let s2 = g.pos_scale(rho);
                let shift = self.eta.apply(g, v1)?;
                let scaled = g.mul(u2, s2)?;
                let v2 = g.add(scaled, shift)?;
                Ok((v1, v2))
            }
            CouplingMode::Additive => {
                let f = self.phi.apply(g, u2)?;
                let v1 = g.add(u1, f)?;
                let gv = self.eta.apply(g, v1)?;
                let v2 = g.add(u2, gv)?;
                Ok((v1, v2))
            }
        }
    }

    pub fn inverse_graph(&self, g: &mut Graph, v1: Var, v2: Var) -> Result<(Var, Var)> {
        check_branches(g, self.channels(), v1, v2, "invblock_inverse")?;
        match self.mode {
            CouplingMode::General => {
                let rho = self.rho.apply(g, v1)?;
                let s2 = g.pos_scale(rho);
                let shift = self.eta.apply(g, v1)?;
                let centred = g.sub(v2, shift)?;
                let u2 = g.div(centred, s2)?;
                let phi = self.phi.apply(g, u2)?;
                let s1 = g.pos_scale(phi);
                let centred = g.sub(v1, s1)?;
                let u1 = g.div(centred, s1)?;
                Ok((u1, u2))
            }
            CouplingMode::Additive => {
                let gv = self.eta.apply(g, v1)?;
                let u2 = g.sub(v2, gv)?;
                let f = self.phi.apply(g, u2)?;
                let u1 = g.sub(v1, f)?;
                Ok((u1, u2))
            }
        }
    }
}

pub fn invblock_forward(u1: &Tensor, u2: &Tensor, block: &InvBlock) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let b = block.bind(&mut g);
    let (a, c) = (g.constant(u1.clone()), g.constant(u2.clone()));
    let (v1, v2) = b.forward_graph(&mut g, a, c)?;
    Ok((g.value(v1).clone(), g.value(v2).clone()))
}

pub fn invblock_inverse(v1: &Tensor, v2: &Tensor, block: &InvBlock) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let b = block.bind(&mut g);
    let (a, c) = (g.constant(v1.clone()), g.constant(v2.clone()));
    let (u1, u2) = b.inverse_graph(&mut g, a, c)?;
    Ok((g.value(u1).clone(), g.value(u2).clone()))
}

/// Determinant of the block's Jacobian, assembled column by column from
/// central differences of the flattened `(u1, u2) -> (u1', u2')` map.
pub fn numerical_jacobian_det(block: &InvBlock, u1: &Tensor, u2: &Tensor, step: f64) -> Result<f64> {
    let (n1, n2) = (u1.len(), u2.len());
    let dim = n1 + n2;
    if dim > MAX_JACOBIAN_DIM {
        return Err(Error::TooLarge {
            what: "jacobian",
            dim,
            max: MAX_JACOBIAN_DIM,
        });
    }
    let flatten = |a: &Tensor, b: &Tensor| -> Vec<f64> { a.data().iter().chain(b.data()).copied().collect() };
    let eval = |x: &[f64]| -> Result<Vec<f64>> {
        let a = Tensor::from_vec(u1.shape(), x[..n1].to_vec())?;
        let b = Tensor::from_vec(u2.shape(), x[n1..].to_vec())?;
        let (v1, v2) = invblock_forward(&a, &b, block)?;
        Ok(flatten(&v1, &v2))
    };
    let mut x = flatten(u1, u2);
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..dim {
        let orig = x[j];
        x[j] = orig + step;
        let plus = eval(&x)?;
        x[j] = orig - step;
        let minus = eval(&x)?;
        x[j] = orig;
        for i in 0..dim {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok(jac.determinant())
}

/// Topology of a flow: `levels` Haar levels with two blocks each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowConfig {
    pub levels: usize,
    /// Image channels `C`.
    pub channels: usize,
    pub hidden: usize,
    pub mode: CouplingMode,
    /// Quantisation depth used when storing the boundary channel.
    pub bits: u8,
}

impl FlowConfig {
    /// The orthonormal Haar low band carries `2^levels` times the block mean,
    /// so `Y = y_gain * LR image` in image intensity units.
    pub fn y_gain(&self) -> f64 {
        (1u64 << self.levels) as f64
    }

    pub fn scale_factor(&self) -> usize {
        1 << self.levels
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 1,
            channels: 3,
            hidden: DEFAULT_HIDDEN,
            mode: CouplingMode::General,
            bits: 1,
        }
    }
}

/// Outputs of the forward flow: low-resolution image plus, per level, the
/// boundary channel and the latent channels of the final high branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutput<T = Tensor> {
    pub y: T,
    /// `1 x H/2^(l+1) x W/2^(l+1)` for level `l`.
    pub b: Vec<T>,
    /// `(3C - 1) x H/2^(l+1) x W/2^(l+1)` for level `l`.
    pub z: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<P = Tensor> {
    pub config: FlowConfig,
    pub levels: Vec<[InvBlock<P>; BLOCKS_PER_LEVEL]>,
}

impl<P> FlowModel<P> {
    pub fn map<Q, F: FnMut(&P) -> Q>(&self, f: &mut F) -> FlowModel<Q> {
        FlowModel {
            config: self.config,
            levels: self.levels.iter().map(|[a, b]| [a.map(f), b.map(f)]).collect(),
        }
    }

    /// Visits parameters in canonical order with names like `l0.b1.rho.conv2.w`.
    pub fn visit<'a, F: FnMut(String, &'a P)>(&'a self, f: &mut F) {
        for (l, blocks) in self.levels.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                block.visit(&format!("l{l}.b{b}"), f);
            }
        }
    }

    pub fn visit_mut<'a, F: FnMut(String, &'a mut P)>(&'a mut self, f: &mut F) {
        for (l, blocks) in self.levels.iter_mut().enumerate() {
            for (b, block) in blocks.iter_mut().enumerate() {
                block.visit_mut(&format!("l{l}.b{b}"), f);
            }
        }
    }

    /// Per-level extents `(h, w)` of the branches for an input of `h x w`.
    pub fn level_extents(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        (1..=self.config.levels).map(|l| (h >> l, w >> l)).collect()
    }
}

impl FlowModel<Tensor> {
    fn build(config: FlowConfig, mut block: impl FnMut() -> InvBlock) -> Self {
        let levels = (0..config.levels).map(|_| [block(), block()]).collect();
        Self { config, levels }
    }

    /// Every transform returns zero: general blocks shift the low band by
    /// one, additive blocks are the identity.
    pub fn zeros(config: FlowConfig) -> Self {
        Self::build(config, || InvBlock::zeros(config.channels, config.hidden, config.mode))
    }

    /// Training initialisation: first convolutions `N(0, std^2)`, the rest zero.
    pub fn init<R: Rng + ?Sized>(config: FlowConfig, std: f64, rng: &mut R) -> Self {
        Self::build(config, || {
            InvBlock::init(config.channels, config.hidden, config.mode, std, rng)
        })
    }

    /// Every parameter drawn from `N(0, std^2)`.
    pub fn random<R: Rng + ?Sized>(config: FlowConfig, std: f64, rng: &mut R) -> Self {
        Self::build(config, || {
            InvBlock::random(config.channels, config.hidden, config.mode, std, rng)
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n));
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, t| out.push(t));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Binds parameters as graph leaves; `trainable` decides whether they
    /// receive adjoints.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> FlowModel<Var> {
        self.map(&mut |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<FlowOutput> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = m.forward_graph(&mut g, xv)?;
        Ok(out.resolve(&g))
    }

    pub fn inverse(&self, out: &FlowOutput) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false);
        let vars = FlowOutput {
            y: g.constant(out.y.clone()),
            b: out.b.iter().map(|t| g.constant(t.clone())).collect(),
            z: out.z.iter().map(|t| g.constant(t.clone())).collect(),
        };
        let x = m.inverse_graph(&mut g, &vars)?;
        Ok(g.value(x).clone())
    }
}

impl FlowOutput<Var> {
    pub fn resolve(&self, g: &Graph) -> FlowOutput {
        FlowOutput {
            y: g.value(self.y).clone(),
            b: self.b.iter().map(|&v| g.value(v).clone()).collect(),
            z: self.z.iter().map(|&v| g.value(v).clone()).collect(),
        }
    }
}

impl FlowModel<Var> {
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<FlowOutput<Var>> {
        let c = self.config.channels;
        let (xc, h, w) = g.value(x).dims3()?;
        if xc != c {
            return Err(Error::shape(
                "flow_forward",
                format!("model expects {c} channels, input has {xc}"),
            ));
        }
        let divisor = 1usize << self.config.levels;
        for (axis, len) in [("height", h), ("width", w)] {
            if len % divisor != 0 {
                return Err(Error::Extent {
                    op: "flow_forward",
                    axis,
                    len,
                    divisor,
                });
            }
        }
        let mut low = x;
        let mut b = Vec::with_capacity(self.levels.len());
        let mut z = Vec::with_capacity(self.levels.len());
        for blocks in &self.levels {
            let packed = g.haar_forward(low)?;
            let mut u1 = g.slice_channels(packed, 0, c)?;
            let mut u2 = g.slice_channels(packed, c, 3 * c)?;
            for block in blocks {
                (u1, u2) = block.forward_graph(g, u1, u2)?;
            }
            b.push(g.slice_channels(u2, 0, 1)?);
            z.push(g.slice_channels(u2, 1, 3 * c - 1)?);
            low = u1;
        }
        Ok(FlowOutput { y: low, b, z })
    }

    pub fn inverse_graph(&self, g: &mut Graph, out: &FlowOutput<Var>) -> Result<Var> {
        let c = self.config.channels;
        let n = self.levels.len();
        if out.b.len() != n || out.z.len() != n {
            return Err(Error::shape(
                "flow_inverse",
                format!(
                    "model has {n} levels, got {} boundary and {} latent tensors",
                    out.b.len(),
                    out.z.len()
                ),
            ));
        }
        let (yc, yh, yw) = g.value(out.y).dims3()?;
        if yc != c {
            return Err(Error::shape(
                "flow_inverse",
                format!("branch Y has {yc} channels, model expects {c}"),
            ));
        }
        let mut low = out.y;
        for (l, blocks) in self.levels.iter().enumerate().rev() {
            let scale = 1usize << (n - 1 - l);
            let want = (yh * scale, yw * scale);
            for (name, v, ch) in [("B", out.b[l], 1), ("Z", out.z[l], 3 * c - 1)] {
                let shape = g.shape(v);
                if shape != [ch, want.0, want.1] {
                    return Err(Error::shape(
                        "flow_inverse",
                        format!(
                            "level {l} branch {name}: got {shape:?}, expected [{ch}, {}, {}]",
                            want.0, want.1
                        ),
                    ));
                }
            }
            let mut v1 = low;
            let mut v2 = g.concat_channels(&[out.b[l], out.z[l]])?;
            for block in blocks.iter().rev() {
                (v1, v2) = block.inverse_graph(g, v1, v2)?;
            }
            let packed = g.concat_channels(&[v1, v2])?;
            low = g.haar_inverse(packed)?;
        }
        Ok(low)
    }
}

pub fn flow_forward(x: &Tensor, model: &FlowModel) -> Result<FlowOutput> {
    model.forward(x)
}

pub fn flow_inverse(out: &FlowOutput, model: &FlowModel) -> Result<Tensor> {
    model.inverse(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn config(levels: usize, mode: CouplingMode) -> FlowConfig {
        FlowConfig {
            levels,
            mode,
            ..FlowConfig::default()
        }
    }

    #[test]
    fn additive_zero_block_is_identity() {
        let mut r = rng(1);
        let block = InvBlock::zeros(3, 16, CouplingMode::Additive);
        let u1 = Tensor::randn(&[3, 4, 4], 1.0, &mut r);
        let u2 = Tensor::randn(&[9, 4, 4], 1.0, &mut r);
        let (v1, v2) = invblock_forward(&u1, &u2, &block).unwrap();
        assert_eq!((&v1, &v2), (&u1, &u2));
        let (a, b) = invblock_inverse(&v1, &v2, &block).unwrap();
        assert_eq!((a, b), (u1, u2));
    }

    #[test]
    fn general_zero_block_shifts_low_band_by_one() {
        let mut r = rng(2);
        let block = InvBlock::zeros(3, 16, CouplingMode::General);
        let u1 = Tensor::randn(&[3, 4, 4], 1.0, &mut r);
        let u2 = Tensor::randn(&[9, 4, 4], 1.0, &mut r);
        let (v1, v2) = invblock_forward(&u1, &u2, &block).unwrap();
        assert_eq!(v1, u1.map(|v| v * 1.0 + 1.0));
        assert_eq!(v2, u2);
        let (a, b) = invblock_inverse(&v1, &v2, &block).unwrap();
        assert!(a.max_abs_diff(&u1) < 1e-15);
        assert_eq!(b, u2);
    }

    #[test]
    fn random_block_round_trip() {
        let mut r = rng(3);
        for mode in [CouplingMode::General, CouplingMode::Additive] {
            let block = InvBlock::random(3, 16, mode, 0.1, &mut r);
            let u1 = Tensor::randn(&[3, 4, 6], 1.0, &mut r);
            let u2 = Tensor::randn(&[9, 4, 6], 1.0, &mut r);
            let (v1, v2) = invblock_forward(&u1, &u2, &block).unwrap();
            let (a, b) = invblock_inverse(&v1, &v2, &block).unwrap();
            assert!(a.max_abs_diff(&u1) < 1e-10, "{mode:?}");
            assert!(b.max_abs_diff(&u2) < 1e-10, "{mode:?}");
        }
    }

    #[test]
    fn block_rejects_channel_mismatch() {
        let block = InvBlock::zeros(3, 16, CouplingMode::General);
        let err = invblock_forward(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[9, 4, 4]), &block);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn output_shapes_for_two_levels() {
        let model = FlowModel::zeros(config(2, CouplingMode::General));
        let out = model.forward(&Tensor::zeros(&[3, 32, 32])).unwrap();
        assert_eq!(out.y.shape(), &[3, 8, 8]);
        let bs: Vec<_> = out.b.iter().map(|t| t.shape().to_vec()).collect();
        let zs: Vec<_> = out.z.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(bs, vec![vec![1, 16, 16], vec![1, 8, 8]]);
        assert_eq!(zs, vec![vec![8, 16, 16], vec![8, 8, 8]]);
    }

    #[test]
    fn zero_model_on_constant_input() {
        let model = FlowModel::zeros(config(1, CouplingMode::General));
        let x = Tensor::full(&[3, 8, 8], 1.0);
        let out = model.forward(&x).unwrap();
        // A band of a constant 1 image is 2; two blocks each add 1.
        assert!(out.y.data().iter().all(|&v| v == 4.0));
        assert!(out.b.iter().chain(&out.z).all(|t| t.data().iter().all(|&v| v == 0.0)));
        let back = model.inverse(&out).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn flow_round_trip_random_params() {
        let mut r = rng(4);
        for levels in 1..=3 {
            let model = FlowModel::random(config(levels, CouplingMode::General), 0.05, &mut r);
            let x = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut r);
            let back = model.inverse(&model.forward(&x).unwrap()).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-9, "levels {levels}");
        }
    }

    #[test]
    fn sampled_latent_gives_finite_different_output() {
        let mut r = rng(5);
        let model = FlowModel::init(config(1, CouplingMode::General), DEFAULT_INIT_STD, &mut r);
        let x = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
        let mut out = model.forward(&x).unwrap();
        for z in &mut out.z {
            *z = Tensor::randn(z.shape(), 1.0, &mut r);
        }
        let back = model.inverse(&out).unwrap();
        assert!(back.all_finite());
        assert!(back.max_abs_diff(&x) > 1e-3);
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let model = FlowModel::zeros(config(2, CouplingMode::General));
        let err = model.forward(&Tensor::zeros(&[3, 10, 16])).unwrap_err();
        assert!(matches!(
            err,
            Error::Extent {
                axis: "height",
                divisor: 4,
                ..
            }
        ));
    }

    #[test]
    fn inverse_names_level_and_branch() {
        let model = FlowModel::zeros(config(2, CouplingMode::General));
        let mut out = model.forward(&Tensor::zeros(&[3, 16, 16])).unwrap();
        out.z[0] = Tensor::zeros(&[7, 8, 8]);
        let msg = model.inverse(&out).unwrap_err().to_string();
        assert!(msg.contains("level 0 branch Z"), "{msg}");
    }

    #[test]
    fn information_is_conserved() {
        let model = FlowModel::zeros(config(2, CouplingMode::General));
        let x = Tensor::zeros(&[3, 16, 16]);
        let out = model.forward(&x).unwrap();
        let total: usize = out.y.len() + out.b.iter().chain(&out.z).map(Tensor::len).sum::<usize>();
        assert_eq!(total, x.len());
    }

    #[test]
    fn jacobian_determinants() {
        let mut r = rng(6);
        let u1 = Tensor::randn(&[1, 2, 2], 1.0, &mut r);
        let u2 = Tensor::randn(&[3, 2, 2], 1.0, &mut r);
        let additive = InvBlock::random(1, 4, CouplingMode::Additive, 0.3, &mut r);
        let det = numerical_jacobian_det(&additive, &u1, &u2, 1e-6).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "{det}");

        let zero = InvBlock::zeros(1, 4, CouplingMode::General);
        let det = numerical_jacobian_det(&zero, &u1, &u2, 1e-6).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "{det}");

        let general = InvBlock::random(1, 4, CouplingMode::General, 0.3, &mut r);
        let det = numerical_jacobian_det(&general, &u1, &u2, 1e-6).unwrap();
        assert!(det.abs() > 1e-6, "{det}");
    }

    #[test]
    fn jacobian_refuses_large_inputs() {
        let block = InvBlock::zeros(1, 4, CouplingMode::Additive);
        let err = numerical_jacobian_det(&block, &Tensor::zeros(&[1, 4, 6]), &Tensor::zeros(&[3, 4, 6]), 1e-6);
        assert!(matches!(err, Err(Error::TooLarge { dim: 96, .. })));
        let ok = numerical_jacobian_det(&block, &Tensor::zeros(&[1, 4, 4]), &Tensor::zeros(&[3, 4, 4]), 1e-6);
        assert!(ok.is_ok());
    }
}
