//! File formats, image metrics and storage accounting.

mod bytes;
pub mod image;
pub mod latent;
pub mod metrics;
pub mod model_file;
pub mod sidecar;
pub mod stats;

pub use image::{decode_pnm, encode_pnm, quantize_8bit, read_image, write_image};
pub use latent::{decode_latent, encode_latent};
pub use metrics::{psnr_y, ssim_y, PSNR_CAP};
pub use model_file::{decode_model, encode_model, load_model, model_hash, save_model};
pub use sidecar::{storage_report, BamSidecar, EncodeMode, Encoding, RescalePayload, StorageReport};
pub use stats::{residual_stats, ResidualStats};
