//! End-to-end pipeline for classifying reduced vs. preserved ejection fraction
//! from chest x-ray images: cohort construction, leakage-safe splitting,
//! augmented CNN training, per-class and per-subgroup evaluation, and
//! gradient-based attribution.

pub mod cohort;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod imaging;
pub mod models;
pub mod nn;
pub mod num;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use num::Scalar;

/// Default scalar type for model weights and image buffers.
pub type DefaultElem = f32;

pub type Image32 = imaging::Image<f32>;
pub type Image64 = imaging::Image<f64>;
pub type Model32 = models::Model<f32>;
pub type Model64 = models::Model<f64>;
