//! Dense tensors, a reverse-mode tape, and Adam.

mod adam;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
pub mod ops;
mod params;
mod tensor;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use graph::{Graph, Var};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tensor::Tensor;

/// Element type for all tensors. 32-bit unless built with the `f64` feature.
#[cfg(not(feature = "f64"))]
pub type Float = f32;
#[cfg(feature = "f64")]
pub type Float = f64;

/// True when built with 64-bit floats.
pub const WIDE_FLOATS: bool = cfg!(feature = "f64");
