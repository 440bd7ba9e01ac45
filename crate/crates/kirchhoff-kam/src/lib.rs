//! Spectral toolkit for small-amplitude quasi-periodic solutions of the
//! 1-D forced Kirchhoff equation with periodic boundary conditions,
//!
//! `d_tt v - (1 + int_T |d_x v|^2 dx) d_xx v = eps f(omega t, x)`.
//!
//! The pipeline mirrors the structure of the underlying existence argument:
//!
//! 1. split off the spatial zero mode and solve it explicitly
//!    ([`nash_moser::solve_zero_mode`]);
//! 2. regularize the linearized operator at a state to constant coefficients
//!    plus a one-smoothing remainder ([`regularize`]);
//! 3. conjugate to a time-independent 2x2 block-diagonal operator by a
//!    quadratic reducibility iteration ([`kam`]);
//! 4. invert the linearized operator through the conjugation (or a dense
//!    factorization oracle) inside a Newton iteration with smoothing
//!    projectors ([`nash_moser`]);
//! 5. estimate the measure of excluded frequencies by Monte Carlo sampling of
//!    the non-resonance margins ([`measure`]) and verify linear stability by
//!    integrating the reduced and original flows ([`stability`]).
//!
//! Everything lives on truncated Fourier grids (`|l|_inf <= l_max`,
//! `|j| <= j_max`); operators keep blocks on the doubled band `2 l_max` so
//! that single products are exact.

pub mod block;
pub mod config;
pub mod context;
pub mod diffeo;
pub mod dense;
pub mod error;
pub mod field;
pub mod kam;
pub mod linearize;
pub mod measure;
pub mod nash_moser;
pub mod paired;
pub mod regularize;
pub mod stability;
pub mod toeplitz;

pub use context::{FrequencyContext, LGrid};
pub use error::{Error, Result};
pub use field::{SpaceTimeField, ToroidalFunction};
pub use paired::{PairField, PairedOperator};
pub use toeplitz::{BlockDiagonal, ToeplitzOperator};
