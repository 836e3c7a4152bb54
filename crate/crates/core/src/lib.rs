//! Spatiotemporal 3D convolutional network for 3D human pose regression from
//! short video windows, with training, preprocessing and evaluation.

pub mod api;
pub mod config;
pub mod datapipe;
pub mod error;
pub mod inference;
pub mod layers;
pub mod network;
pub mod pipeline;
pub mod tensor;
pub mod training;
pub mod weights;

pub use config::RunConfig;
pub use error::{Error, ErrorKind, Result};
pub use network::{ArchitectureConfig, NetworkParams};
pub use tensor::{Dtype, RngState, Scalar, Tensor};
pub use training::TrainConfig;
