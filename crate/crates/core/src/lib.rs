//! Periodic-memory video anomaly detection.
//!
//! The crate covers the whole pipeline: procedurally generated periodic
//! device scenes ([`synth`]), differentiable building blocks ([`nn`]), the
//! phase-boosted memory bank ([`memory`]), the reconstruction model with its
//! phase classifier ([`model`]), sliding-window phase inspection
//! ([`perioddet`]), frame scoring and AUC ([`scoring`]), and low-rank adapter
//! fine-tuning ([`lora`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod error;
pub mod lora;
pub mod memory;
pub mod model;
pub mod nn;
pub mod perioddet;
pub mod scalar;
pub mod scoring;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type VadModel32 = model::VadModel<f32>;
pub type VadModel64 = model::VadModel<f64>;
pub type MemoryBank32 = memory::PeriodicMemoryBank<f32>;
pub type MemoryBank64 = memory::PeriodicMemoryBank<f64>;
