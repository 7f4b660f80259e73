//! Joint latent-space energy-based priors over hierarchical generators.

pub mod checkpoint;
pub mod data;
pub mod diffcore;
pub mod ebm;
mod error;
pub mod eval;
pub mod generator;
pub mod inference;
pub mod langevin;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ConfigHash};
pub use data::{LabeledDataset, SyntheticSpec};
pub use ebm::{EnergyNet, LatentStack};
pub use generator::{GeneratorNet, GeneratorSpec};
pub use inference::{InferenceNet, InferenceSpec, PosteriorParams};
pub use langevin::LangevinConfig;
pub use model::{Model, ModelSpec};
pub use trainer::{TrainConfig, TrainState};

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type ModelSpec64 = ModelSpec<f64>;
pub type ModelSpec32 = ModelSpec<f32>;
pub type TrainState64 = TrainState<f64>;
pub type TrainState32 = TrainState<f32>;
pub type TrainConfig64 = TrainConfig<f64>;
pub type TrainConfig32 = TrainConfig<f32>;
pub type Dataset64 = LabeledDataset<f64>;
pub type Dataset32 = LabeledDataset<f32>;
pub type LatentStack64 = LatentStack<f64>;
pub type LatentStack32 = LatentStack<f32>;
