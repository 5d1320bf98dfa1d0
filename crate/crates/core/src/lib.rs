//! Model, simulator and analysis toolkit for sequential-readout (Qdyne)
//! AC magnetometry with NV-center ensembles.
//!
//! The crate is organised bottom-up:
//!
//! - [`sequence`]: dynamical-decoupling blocks and their timing arithmetic.
//! - [`response`]: finite-pulse weighting, accumulated phase, bandwidth and
//!   the π-phase calibration field, plus a quadrature oracle.
//! - [`photophysics`]: repolarization and contrast-decay models and their
//!   least-squares fits.
//! - [`qdyne`]: the sequential-readout block schedule, down-conversion and
//!   synthetic trace generation.
//! - [`spectrum`]: amplitude spectra, peak and noise-floor estimation, and
//!   conversion to field sensitivity.
//! - [`sensmodel`]: frequency dependence of sensitivity, its limits and
//!   optimum.
//! - [`io`]: CSV formats shared by the command-line front end.
//! - [`presets`]: the reference XY4-(4) scenarios.
//!
//! Data-parallel loops go through [`exec::Exec`]; with the `parallel`
//! feature disabled every path runs sequentially.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod io;
pub mod photophysics;
pub mod presets;
pub mod qdyne;
pub mod response;
pub mod sensmodel;
pub mod sequence;
pub mod spectrum;

pub use error::{Error, Result};
pub use exec::Exec;
