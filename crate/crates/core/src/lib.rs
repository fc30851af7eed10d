//! Core of the SmartPilot manufacturing copilot.
//!
//! * [`kernel`]: small differentiable engine (dense, LSTM, Adam/SGD).
//! * [`ontology`]: process ontology, range penalty and explanations.
//! * [`predictx`]: multimodal anomaly prediction with knowledge-infused loss.
//! * [`foresight`]: LSTM production forecasting with feature infusion.
//! * [`infoguide`]: manual ingestion and hybrid retrieval with refusal.
//! * [`datagen`]: deterministic synthetic datasets for all of the above.

pub mod datagen;
pub mod foresight;
pub mod infoguide;
pub mod kernel;
pub mod live;
pub mod ontology;
pub mod predictx;
mod scalar;

pub use scalar::Scalar;

/// Real type used outside the kernel.
pub type Real = f64;

pub type Tensor = kernel::Tensor<Real>;
pub type ModelParams = kernel::ModelParams<Real>;
pub type Layer = kernel::Layer<Real>;
pub type Graph = kernel::Graph<Real>;
pub type GradientSet = kernel::GradientSet<Real>;

/// Single-precision variants for reduced-footprint inference.
pub type Tensor32 = kernel::Tensor<f32>;
pub type ModelParams32 = kernel::ModelParams<f32>;
