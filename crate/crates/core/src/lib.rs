//! Cascaded flow matching for mixed-type tabular data.
//!
//! A low-resolution categorical model generates the categorical columns together
//! with a per-feature discretization `z` of every numerical column; a conditional
//! flow then fills in the numerical detail starting from a source distribution
//! centred on the component picked by `z`.

pub mod cascade;
pub mod data;
pub mod encoders;
pub mod highres;
pub mod lowres;
pub mod matrix;
pub mod nn;
pub mod scalar;

pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Mlp64 = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type LowResModel64 = lowres::LowResModel<f64>;
pub type LowResModel32 = lowres::LowResModel<f32>;
pub type HighResModel64 = highres::HighResModel<f64>;
pub type HighResModel32 = highres::HighResModel<f32>;
pub type Cascade64 = cascade::Cascade<f64>;
pub type Cascade32 = cascade::Cascade<f32>;
