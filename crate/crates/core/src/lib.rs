#![cfg_attr(feature = "f64", allow(clippy::unnecessary_cast))]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod inverse;
pub mod model;
pub mod numerics;
pub mod prompt;
pub mod training;

pub use error::{Error, Result};
