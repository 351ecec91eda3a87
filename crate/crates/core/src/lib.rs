//! Structure-preserving finite-volume simulation of the degenerate cross-diffusion system
//!
//! ```text
//!   ∂t f = div( f ∇[a f + b g] ),   ∂t g = div( g ∇[c f + d g] )   on (x_lo, x_hi)
//! ```
//!
//! with no-flux boundary conditions, together with relative-entropy diagnostics
//! used to study weak-strong stability numerically.

// Negated comparisons are used throughout so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entropy;
pub mod grid;
pub mod harness;
pub mod model;
pub mod reference;
pub mod solver;

pub use grid::{Grid1D, State};
pub use model::ModelParams;
pub use solver::{MobilityAverage, SolverConfig};
