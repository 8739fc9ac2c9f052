//! Series saliency: hybrid autoregressive + neural forecasters trained with
//! a learned perturbation mask, per-sample saliency masks on frozen models,
//! feature ordering by simulated annealing, and the metrics and spectral
//! tools around them.

pub mod analysis;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod forecasters;
pub mod interpretation;
pub mod mask;
pub mod metrics;
pub mod optim;
pub mod permutation;
pub mod reference;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use config::Config;
pub use data::{Prepared, SeriesFrame, SeriesImage, Window};
pub use error::{Error, Result};
pub use forecasters::{Checkpoint, Forecaster, ModelConfig, NeuralKind};
pub use interpretation::{interpret, interpret_batch, InterpretConfig, SaliencyMap};
pub use mask::Mask;
pub use reference::{ReferenceMode, ReferenceSpec};
pub use tensor::Tensor;
pub use training::{evaluate, train, TrainConfig};
