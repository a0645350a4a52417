//! Free-boundary equilibrium reconstruction in axisymmetric geometry with
//! P1 finite elements.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod forward;
pub mod geometry;
pub mod inverse;
pub mod mesh;
pub mod observation;
pub mod twin;

pub use error::{Error, Result};
