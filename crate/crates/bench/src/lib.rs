//! Shared fixtures for the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use edgeflow_core::coupling::{FlowConfig, FlowModel};
use edgeflow_core::synth;
use edgeflow_core::Tensor;

/// A randomly parameterised model with `levels` wavelet levels.
pub fn model(levels: usize, hidden: usize, seed: u64) -> FlowModel {
    let cfg = FlowConfig {
        levels,
        hidden,
        ..Default::default()
    };
    FlowModel::random(cfg, 0.05, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A procedural `3 x size x size` scene in `[0, 1]`.
pub fn image(size: usize, seed: u64) -> Tensor {
    synth::scene(seed, size)
}

/// The same scene in 8-bit intensity units, as the boundary map expects.
pub fn image_255(size: usize, seed: u64) -> Tensor {
    image(size, seed).map(|v| v * 255.0)
}
