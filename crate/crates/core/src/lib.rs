//! loft-kit: right-multiplicative subspace rotations for orthogonal
//! parameter-efficient adaptation.
//!
//! A frozen weight `W0` is adapted as `W+ = W0 (I + P^T (T - I) P)` where
//! the row-orthonormal support `P` selects *where* adaptation acts and the
//! in-subspace transform `T` (orthogonal, free, or fixed) decides *how*.
//! The crate provides:
//!
//! - dense deterministic linear algebra kernels ([`linalg`]),
//! - the Cayley parameterization of in-subspace rotations ([`transform`]),
//! - adapter construction, application, merging, and the induced additive
//!   delta ([`adapter`]),
//! - support selection (principal / GradSVD / SkewGrad / random /
//!   coordinate / butterfly) and first-order diagnostics ([`support`]),
//! - factory configurations reproducing prior orthogonal PEFT updates
//!   (full/block OFT, Givens products, butterfly stages, Householder
//!   reflections, principal-subspace rotation) ([`recovery`]),
//! - a desk-scale experiment harness with planted-rotation tasks, probes,
//!   training dynamics, and sweeps ([`harness`]),
//! - seeded property-check suites used by the CLI and CI gates
//!   ([`checks`]).

pub mod adapter;
pub mod checks;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod recovery;
pub mod rng;
pub mod support;
pub mod transform;

pub use error::{Error, Result};
pub use linalg::Matrix;
