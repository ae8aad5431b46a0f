//! Invariants cheap enough to verify on any machine in a few seconds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use edgeflow_core::coupling::{numerical_jacobian_det, CouplingMode, FlowConfig, FlowModel, InvBlock};
use edgeflow_core::wavelet::{haar_forward, haar_inverse};
use edgeflow_core::{Result, Tensor};

type Outcome = (&'static str, bool, String);

pub(crate) fn run_all(trials: usize, seed: u64) -> Result<Vec<Outcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = trials.max(1);

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = Tensor::randn(&[3, 16, 16], 1.0, &mut rng);
        let back = haar_inverse(&haar_forward(&x)?)?;
        worst = worst.max(back.max_abs_diff(&x));
    }
    let haar = ("haar reconstruction", worst < 1e-12, format!("max error {worst:.3e}"));

    let mut worst = 0.0f64;
    for i in 0..trials {
        let levels = 1 + i % 2;
        let cfg = FlowConfig {
            levels,
            hidden: 8,
            ..Default::default()
        };
        let model = FlowModel::random(cfg, 0.1, &mut rng);
        let x = Tensor::randn(&[3, 16, 16], 1.0, &mut rng);
        let back = model.inverse(&model.forward(&x)?)?;
        worst = worst.max(back.max_abs_diff(&x));
    }
    let flow = ("flow bijection", worst < 1e-9, format!("max error {worst:.3e}"));

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let block = InvBlock::random(1, 4, CouplingMode::Additive, 0.3, &mut rng);
        let u1 = Tensor::randn(&[1, 2, 2], 1.0, &mut rng);
        let u2 = Tensor::randn(&[3, 2, 2], 1.0, &mut rng);
        let det = numerical_jacobian_det(&block, &u1, &u2, 1e-5)?;
        worst = worst.max((det - 1.0).abs());
    }
    let jac = ("additive jacobian", worst < 1e-6, format!("max |det - 1| {worst:.3e}"));

    let block = InvBlock::random(1, 4, CouplingMode::General, 0.3, &mut rng);
    let u1 = Tensor::randn(&[1, 2, 2], 1.0, &mut rng);
    let u2 = Tensor::randn(&[3, 2, 2], 1.0, &mut rng);
    let det = numerical_jacobian_det(&block, &u1, &u2, 1e-5)?;
    let general = ("general jacobian nonzero", det.abs() > 1e-6, format!("det {det:.3e}"));

    Ok(vec![haar, flow, jac, general])
}
