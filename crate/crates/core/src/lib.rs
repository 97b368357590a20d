//! Fourier phase retrieval with a sine-activated coordinate network.
//!
//! The crate provides the CDI and ptychography forward models, the
//! coordinate-network reconstruction (magnitude loss, distilled phase loss,
//! total variation) with hand-written gradients, the classical alternating
//! projection baselines (ER, HIO, shrinkwrap) and ePIE, plus the metrics and
//! reporting used to compare them.

// `!(x > 0.0)` guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cdi;
pub mod classical;
mod container;
pub mod dft;
pub mod error;
pub mod grid;
pub mod loss;
pub mod measurement;
pub mod metrics;
pub mod net;
pub mod object;
pub mod optim;
pub mod ptycho;
pub mod record;
pub mod report;
pub mod seed;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use grid::{ComplexGrid, Grid, RealGrid, SupportMask};
pub use measurement::{Geometry, MeasurementSet};
pub use object::ObjectEstimate;
pub use optim::TrainConfig;
pub use record::{Method, RunRecord};
