//! Deterministic dense real linear algebra kernels.
//!
//! Everything operates on the row-major [`Matrix`] type in 64-bit floats.
//! Kernels avoid parallel reductions and platform-dependent summation so
//! that seeded experiments reproduce bit-identically.

mod csv;
mod decomp;
mod matrix;
mod solve;

pub use decomp::{SvdResult, SymEigResult};
pub use matrix::Matrix;
