//! Optimal control of the 1-D Kobayashi–Warren–Carter grain-boundary system.
//!
//! The crate solves the regularized state system for the orientation order
//! `eta` and angle `theta`, the linear parabolic system that carries both the
//! linearized state map and its adjoint, assembles cost gradients and runs
//! descent and `eps`-continuation.

// `!(x > 0.0)` is how NaN gets rejected together with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod adjoint;
pub mod banded;
pub mod catalog;
pub mod error;
pub mod field;
pub mod grid;
pub mod linear;
pub mod model;
pub mod optimizer;
pub mod problems;
pub mod state;

pub use error::{Error, Result};
pub use field::{ControlPair, FieldPair, SpaceTime};
pub use grid::Grid;
pub use model::ModelParams;
