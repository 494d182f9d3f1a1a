//! Numerical laboratory for the parabolic free-boundary problem
//! `u_t - Δu = χ_{u>0}`.

// `!(a < b)` comparisons deliberately reject NaN; index loops mirror the
// stencil notation; report builders take many scalar parameters.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod error;
pub mod grid;

pub use error::{Error, Result};
pub use grid::{finite_differences, restrict, DerivativeBundle, Grid, ParabolicCylinder, Point, SpaceTimeField};
pub mod solver;
pub mod stats;
pub mod boundary;
pub mod weiss;
pub mod series;
pub mod hodograph;
pub mod blowup;
pub mod pipeline;
pub mod acceptance;
