//! Operator-valued free probability over `B = M_d(C)`.

pub mod config;
pub mod dist;
pub mod error;
pub mod hinchin;
pub mod linalg;
pub mod multilinear;
pub mod nc;
pub mod steinitz;
pub mod transforms;

pub use error::{Error, Result};
