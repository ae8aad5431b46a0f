//! Invertible wavelet-flow image rescaling.

pub mod bam;
pub mod codec;
pub mod coupling;
pub mod error;
pub mod losses;
pub mod numerics;
pub mod pipeline;
pub mod resample;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use bam::{BamConfig, BoundaryMap, Norm};
pub use codec::{EncodeMode, RescalePayload};
pub use coupling::{CouplingMode, FlowConfig, FlowModel, FlowOutput};
pub use losses::{LossReport, LossWeights};
pub use pipeline::LatentSource;
pub use training::TrainConfig;
