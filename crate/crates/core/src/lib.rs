//! Simulation and finite-key security analysis of decoy-state
//! measurement-device-independent quantum key distribution with time-bin
//! phase encoding.
//!
//! - [`protocol`]: state preparation, Bell-state post-selection, sifting and
//!   count tables.
//! - [`photonics`]: lossy links, two-pulse interference and threshold
//!   detectors; analytic pattern probabilities and Monte Carlo samplers.
//! - [`feedback`]: environmental drift and the timing, wavelength,
//!   polarization and phase feedback loops.
//! - [`decoy`]: decoy-state bounds, Chernoff finite-key corrections and the
//!   secure key length.
//! - [`io`] and [`pipeline`]: table files, configuration, reports and the
//!   end-to-end runs behind the command-line tool.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decoy;
pub mod error;
pub mod feedback;
pub mod io;
pub mod photonics;
pub mod pipeline;
pub mod protocol;

pub use error::{Error, Result};
