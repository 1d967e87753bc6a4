//! Photorealistic style transfer by per-pair optimization of a
//! multi-resolution generation network under a VGG19 perceptual objective.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file name the common instantiations.

pub mod archive;
pub mod autograd;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod image_io;
pub mod kernels;
pub mod loss;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use eval::{
    contour_similarity, run_benchmark, sobel_contour, structure_score, to_grayscale, BenchmarkReport, BenchmarkRow,
    EdgeMap,
};
pub use extractor::{ExtractorSource, FeatureExtractor};
pub use image_io::{
    denormalize, load_image, normalize, prepare_content, prepare_style, save_image, ImageTensor, RangeMode,
    ResizePolicy,
};
pub use loss::{
    content_loss, gram_matrix, style_loss_layer, total_loss, total_style_loss, tv_loss, FeatureMap, LossBreakdown,
    LossConfig,
};
pub use network::{bottleneck_block, build_network, forward, fuse, GenerationNetworkSpec, NetworkParameters};
pub use scalar::Scalar;
pub use trainer::{run_transfer, StepRecord, TrainingConfig, TrainingRun, Transfer};

pub type Image32 = ImageTensor<f32>;
pub type Image64 = ImageTensor<f64>;
pub type Features32 = FeatureMap<f32>;
pub type Features64 = FeatureMap<f64>;
pub type Extractor32 = FeatureExtractor<f32>;
pub type Extractor64 = FeatureExtractor<f64>;
pub type Params32 = NetworkParameters<f32>;
pub type Params64 = NetworkParameters<f64>;
pub type Run32 = TrainingRun<f32>;
pub type Run64 = TrainingRun<f64>;
