//! Local machinery of Hellinger–Reissner virtual elements for 2D elasticity:
//! polygonal geometry, scaled polynomial bases, the local stress space with its
//! degrees of freedom, projector and stabilizations, a finite element surrogate
//! for the virtual basis, interpolation, and generalized eigenvalue studies.

// `!(x > 0.0)` is used on purpose so that NaN fails validation; index loops
// mirror the coefficient formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod check;
#[cfg(feature = "cli")]
pub mod cli;
pub mod eigenstudy;
pub mod elasticity;
pub mod error;
pub mod geometry;
pub mod hrspace;
pub mod interp;
pub mod localsolver;
pub mod polybasis;

pub use elasticity::{Material, SymTensor};
pub use error::{Error, Result};
pub use geometry::{Point, Polygon};
