//! Scalar abstraction so the numeric core runs in f32 or f64.

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};

/// Floating-point element type for images, tensors, and model weights.
pub trait Scalar:
    Float
    + NumAssign
    + ScalarOperand
    + LinalgScalar
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Name recorded in checkpoint headers.
    const DTYPE: &'static str;
    /// Bytes per element in the checkpoint encoding.
    const WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Little-endian encoding used by the checkpoint container.
    fn write_le(values: &[Self], out: &mut Vec<u8>);
    /// Inverse of [`Scalar::write_le`]; `None` if the byte length is not a
    /// multiple of the element width.
    fn read_le(bytes: &[u8]) -> Option<Vec<Self>>;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const WIDTH: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Option<Vec<Self>> {
        if bytes.len() % 4 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const WIDTH: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Option<Vec<Self>> {
        if bytes.len() % 8 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| {
                    f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                })
                .collect(),
        )
    }
}
