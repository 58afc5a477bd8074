//! Shallow ReLU MLP, GLU and GQU function approximators with spline-based
//! parameter constructions, a block Gauss-Newton trainer, and scaling-sweep
//! tooling that measures log-log convergence slopes.

pub mod checkpoint;
pub mod construct;
pub mod error;
pub mod experiments;
mod gram;
mod linalg;
pub mod models;
pub mod plot;
mod scalar;
pub mod splines;
pub mod target;
pub mod train;

pub use error::{Error, Result};
pub use models::{ArchKind, Architecture, Block, ModelParams};
pub use target::TargetFunction;
