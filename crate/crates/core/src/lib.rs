//! A RefineDet-style single-shot detector built from plain tensor kernels,
//! with a stage-wise latency profiler and a COCO-style evaluator.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod blocks;
pub mod config;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod head;
pub mod model;
pub mod postprocess;
pub mod profiler;
pub mod scalar;
pub mod tensor;
pub mod weights;

pub use config::{BackboneKind, ModelSpec};
pub use error::{Error, Result};
pub use model::{init_weights, Model, ModelRunner};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type BBox32 = postprocess::BBox<f32>;
pub type BBox64 = postprocess::BBox<f64>;
pub type Detection32 = postprocess::Detection<f32>;
pub type Detection64 = postprocess::Detection<f64>;
