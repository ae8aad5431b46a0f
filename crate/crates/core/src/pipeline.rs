//! Downscaling to an LR image plus boundary sidecars, and reconstruction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bam::BamConfig;
use crate::codec::{model_hash, quantize_8bit, BamSidecar, EncodeMode, RescalePayload};
use crate::coupling::{FlowModel, FlowOutput};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::sample_latents;

/// Boundary channel values mapped to stored levels: `round(clamp(b) * K)`.
pub fn quantize_boundary(b: &Tensor, bits: u8) -> Vec<u8> {
    let k = f64::from((1u8 << bits) - 1);
    b.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * k).round() as u8)
        .collect()
}

/// Runs the forward flow on `x` (`[0, 1]` intensities) and packages the
/// 8-bit LR image with quantized boundary sidecars. The raw flow output is
/// returned as well for callers that need the exact latents.
pub fn downscale(
    model: &FlowModel,
    x: &Tensor,
    bam: &BamConfig,
    mode: EncodeMode,
) -> Result<(RescalePayload, FlowOutput)> {
    let out = model.forward(x)?;
    let gain = model.config.y_gain();
    let lr = quantize_8bit(&out.y.map(|v| v / gain));
    let cfg = BamConfig {
        bits: model.config.bits,
        ..*bam
    };
    let sidecars = out
        .b
        .iter()
        .map(|b| {
            let (_, h, w) = b.dims3()?;
            BamSidecar::encode(&quantize_boundary(b, cfg.bits), w, h, &cfg, mode)
        })
        .collect::<Result<Vec<_>>>()?;
    let payload = RescalePayload {
        lr,
        sidecars,
        model_hash: model_hash(model),
    };
    payload.validate()?;
    Ok((payload, out))
}

/// Source of the latents for [`upscale`].
#[derive(Debug, Clone, Copy)]
pub enum LatentSource {
    /// Fresh `N(0, sigma^2)` draws from a generator seeded with `seed`.
    Sampled { seed: u64, sigma: f64 },
}

/// Reconstructs an HR image from a payload, sampling the latents.
pub fn upscale(model: &FlowModel, payload: &RescalePayload, latents: LatentSource) -> Result<Tensor> {
    payload.validate()?;
    let n = model.config.levels;
    if payload.levels() != n {
        return Err(Error::Format(format!(
            "payload has {} sidecars, model has {n} levels",
            payload.levels()
        )));
    }
    let (_, h, w) = payload.lr.dims3()?;
    let f = model.config.scale_factor();
    let LatentSource::Sampled { seed, sigma } = latents;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latents(&model.config, h * f, w * f, sigma, &mut rng);
    let b = payload
        .sidecars
        .iter()
        .map(BamSidecar::normalized)
        .collect::<Result<Vec<_>>>()?;
    let gain = model.config.y_gain();
    let out = FlowOutput {
        y: payload.lr.map(|v| v * gain),
        b,
        z,
    };
    model.inverse(&out)
}
