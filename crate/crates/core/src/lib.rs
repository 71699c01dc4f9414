//! Pulsed electron-spin-resonance simulation and relaxation analysis.
//!
//! The crate is organised bottom-up:
//!
//! * [`spin`]: effective spin Hamiltonians with zero-field splitting and
//!   their eigensystems, backed by [`linalg`].
//! * [`powder`]: orientation grids, resonance-field search and
//!   echo-detected field-sweep spectra.
//! * [`pulse`]: rotating-frame two-level pulse dynamics, Hahn echo and
//!   inversion-recovery curves, excitation bandwidths.
//! * [`eseem`]: nuclear envelope modulation of the two-pulse echo.
//! * [`fit`]: damped least squares for relaxation, ESEEM and spectral models.
//! * [`calc`], [`config`], [`noise`], [`plot`]: calculators and the plumbing
//!   behind the `spinecho` command-line tool.

pub mod calc;
pub mod config;
pub mod constants;
pub mod error;
pub mod eseem;
pub mod fit;
pub mod linalg;
pub mod noise;
pub mod plot;
pub mod powder;
pub mod pulse;
pub mod spin;
pub mod trace;

pub use error::{Error, Result};
