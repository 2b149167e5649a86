//! Speech- and text-driven generation of upper-face action units and head
//! rotations.

pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod training;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type ParamStore32 = numerics::ParamStore<f32>;
pub type ParamStore64 = numerics::ParamStore<f64>;
pub type GestureModel32 = model::GestureModel<f32>;
pub type GestureModel64 = model::GestureModel<f64>;
