//! Dense tensor arithmetic with a small reverse-mode engine.

pub mod fd;
pub mod graph;
pub mod ops;

pub use fd::{fd_check, FdReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::{conv2d, leaky_relu, pos_scale, DEFAULT_LEAKY_SLOPE};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    /// Contracts a tensor-valued node with fixed random weights so every
    /// output entry contributes a distinct amount to the scalar.
    fn contract(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::randn(g.shape(v), 1.0, &mut rng);
        let w = g.constant(w);
        let p = g.mul(v, w)?;
        Ok(g.sum(p))
    }

    fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 3] {
        [
            rng.random_range(1..=4),
            2 * rng.random_range(1..=4),
            2 * rng.random_range(1..=4),
        ]
    }

    #[test]
    fn conv2d_sum_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::randn(&[2, 5, 5], 1.0, &mut rng);
        let k = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[3], 1.0, &mut rng);
        let report = fd_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]))?;
                Ok(g.sum(y))
            },
            &[x, k, b],
            STEP,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn leaky_relu_slope_on_negative_side() {
        let report = fd_check(
            |g, v| {
                let y = g.leaky_relu(v[0], 0.2);
                Ok(g.sum(y))
            },
            &[Tensor::scalar(-3.0)],
            STEP,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9);
        assert!((report.numeric - 0.2).abs() < 1e-9);
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..6u64 {
            let [c, h, w] = random_shape(&mut rng);
            let shape = [c, h, w];
            let a = Tensor::randn(&shape, 1.0, &mut rng);
            let b = Tensor::rand_uniform(&shape, 0.5, 2.0, &mut rng);
            let k = Tensor::randn(&[3, c, 3, 3], 0.5, &mut rng);
            let k1 = Tensor::randn(&[2, c, 1, 1], 0.5, &mut rng);
            let bias = Tensor::randn(&[3], 0.5, &mut rng);
            type Case = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
            let cases: Vec<(&str, Case)> = vec![
                ("add", Box::new(|g, v| g.add(v[0], v[1]))),
                ("sub", Box::new(|g, v| g.sub(v[0], v[1]))),
                ("mul", Box::new(|g, v| g.mul(v[0], v[1]))),
                ("div", Box::new(|g, v| g.div(v[0], v[1]))),
                ("scale", Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
                ("offset", Box::new(|g, v| Ok(g.offset(v[0], 0.3)))),
                ("square", Box::new(|g, v| Ok(g.square(v[0])))),
                ("abs", Box::new(|g, v| Ok(g.abs(v[0])))),
                ("mean", Box::new(|g, v| Ok(g.mean(v[0])))),
                ("leaky_relu", Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.2)))),
                ("pos_scale", Box::new(|g, v| Ok(g.pos_scale(v[0])))),
                ("conv3", Box::new(|g, v| g.conv2d(v[0], v[2], Some(v[4])))),
                ("conv1", Box::new(|g, v| g.conv2d(v[0], v[3], None))),
                (
                    "slice",
                    Box::new(|g, v| {
                        let c = g.shape(v[0])[0];
                        g.slice_channels(v[0], c - 1, 1)
                    }),
                ),
                ("concat", Box::new(|g, v| g.concat_channels(&[v[1], v[0]]))),
                ("haar_fwd", Box::new(|g, v| g.haar_forward(v[0]))),
                (
                    "haar_inv",
                    Box::new(|g, v| {
                        let p = g.concat_channels(&[v[0], v[1], v[0], v[1]])?;
                        g.haar_inverse(p)
                    }),
                ),
            ];
            for (i, (name, op)) in cases.iter().enumerate() {
                let seed = trial * 100 + i as u64;
                let report = fd_check(
                    |g, v| {
                        let y = op(g, v)?;
                        contract(g, y, seed)
                    },
                    &[a.clone(), b.clone(), k.clone(), k1.clone(), bias.clone()],
                    STEP,
                )
                .unwrap();
                assert!(report.max_rel_error < TOL, "{name} on {shape:?}: {report:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn conv2d_is_linear(
            seed in 0u64..1000,
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[2, 6, 5], 1.0, &mut rng);
            let y = Tensor::randn(&[2, 6, 5], 1.0, &mut rng);
            let k = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
            let mix = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
            let lhs = conv2d(&mix, &k, None).unwrap();
            let cx = conv2d(&x, &k, None).unwrap();
            let cy = conv2d(&y, &k, None).unwrap();
            let rhs = cx.zip_map(&cy, |a, b| alpha * a + beta * b).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn pos_scale_is_bounded(v in proptest::num::f64::NORMAL) {
            let s = pos_scale(&Tensor::scalar(v)).data()[0];
            prop_assert!((0.1 - 1e-15..=10.0 + 1e-14).contains(&s));
        }
    }
}
