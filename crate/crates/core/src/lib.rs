//! Dynamic multiscale graph networks for 3D skeleton motion prediction.
//!
//! The crate holds the tensor engine with reverse-mode differentiation,
//! skeleton scale definitions, the graph layers, the encoder-decoder
//! model, dataset handling and evaluation.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod skeleton;
pub mod tensor;

pub use data::{Dataset, DatasetManifest, SynthDatasetSpec, SynthSpec, WindowedSample};
pub use error::{Error, Result};
pub use eval::{Horizons, MaeTable};
pub use model::{Batch, Dmgnn, ModelConfig, Trainer};
pub use skeleton::{MotionSequence, SkeletonSpec};
pub use tensor::Tensor;
