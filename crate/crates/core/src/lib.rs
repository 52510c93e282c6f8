//! Dirichlet-Laplacian eigenvalues on a fixed grid by penalization, and a
//! projected-gradient optimizer for multiphase spectral partitions.
//!
//! The shape `Ω ⊂ D` enters only through a density `φ` on a uniform grid of
//! the box `D`; eigenvalues of `-Δ_h + C·diag(1 - φ)` approximate the
//! Dirichlet eigenvalues of `Ω` as `C` grows. The optimizer minimizes
//! `Σ_i λ_k(φ_i, C) - α·|Ω_{h+1}|` over `h + 1` densities that sum to one.
//!
//! Modules:
//! - [`grid`]: boxes, fields and the 5-point Laplacian
//! - [`eigen`]: matrix-free eigensolver for the penalized operator
//! - [`relaxed`]: relaxed eigenvalues, their gradients, the multiphase cost
//! - [`phase`]: phase systems and the simplex projection
//! - [`optimizer`]: expanding linesearch and the descent loop
//! - [`reference`]: analytic disk/rectangle spectra and rasterized shapes
//! - [`study`]: error tables, decay fits, stability and α-sweeps
//! - [`io`], [`config`]: checkpoints, rasters and run configuration

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod eigen;
pub mod error;
pub mod grid;
pub mod io;
pub mod optimizer;
pub mod par;
pub mod phase;
pub mod reference;
pub mod relaxed;
pub mod study;

pub use error::{Error, Result};
pub use grid::{laplacian_apply, Boundary, GridSpec, ScalarField};
pub use phase::PhaseSystem;
