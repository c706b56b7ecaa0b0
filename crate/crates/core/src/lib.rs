pub mod autograd;
pub mod error;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases for the generic types.
pub mod f64 {
    pub type Tensor = crate::autograd::Tensor<f64>;
    pub type Tape = crate::autograd::Tape<f64>;
    pub type BaseLm = crate::model::BaseLm<f64>;
    pub type AdaptedModel = crate::model::AdaptedModel<f64>;
    pub type LoraPatch = crate::model::LoraPatch<f64>;
    pub type DualMemory = crate::memory::DualMemory<f64>;
    pub type MemoryItem = crate::memory::MemoryItem<f64>;
    pub type MemoryProjections = crate::memory::MemoryProjections<f64>;
    pub type IcftModel = crate::train::IcftModel<f64>;
    pub type Trainer = crate::train::Trainer<f64>;
    pub type Adam = crate::train::Adam<f64>;
    pub type Checkpoint = crate::harness::Checkpoint<f64>;
}

pub use self::f64::{
    AdaptedModel as AdaptedModelF64, Checkpoint as CheckpointF64, IcftModel as IcftModelF64, Tape as TapeF64,
    Tensor as TensorF64, Trainer as TrainerF64,
};
