//! Numerical Krein mapping between accelerants on [-1,1] and off-diagonal
//! Dirac potentials on [0,1], together with its inverse and a suite of
//! residual checks for the identities the construction relies on.
//!
//! Everything is sampled on the uniform grid x_i = i/N. Accelerants carry
//! 4N+1 samples at step 1/(2N) so that x - t and (x ± t)/2 always land on a
//! sample. Integrals use the trapezoid rule, so every pipeline converges at
//! O(N^-2).
//!
//! The `parallel` feature (on by default) spreads per-row solves, α-sweeps
//! and probe trials over a rayon pool. Results do not depend on the number
//! of threads.

pub mod block;
pub mod dirac_verify;
pub mod error;
pub mod factorization;
pub mod fields;
pub mod forward_map;
pub mod inverse_map;
pub mod par;
pub mod quadops;

pub use error::{Error, Result};
pub use fields::{
    Accelerant, DiagnosticEntry, DiagnosticReport, GridSpec, Kernel2D, Potential, Side,
    SpectralParameter, StructuralConstants, Support, ZeroLimits, C64,
};
