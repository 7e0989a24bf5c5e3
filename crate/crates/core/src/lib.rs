//! Core algorithms for characterizing afterpulsing in single-photon
//! avalanche detectors.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. It covers the
//! whole analysis chain:
//!
//! - [`sim`]: Monte Carlo generation of TDC interval streams from a known
//!   trap model (discrete deep levels or a log-uniform continuum) plus dark
//!   counts, under pulsed illumination and detector dead time.
//! - [`extract`]: recovery of pulse-to-extra-count intervals from a stream
//!   and binning into a trimmed [`extract::ResponseHistogram`].
//! - [`models`]: the three density families (sum of exponentials,
//!   hyperbolic-sinc continuum, power law), their Jacobians and window
//!   masses.
//! - [`fit`]: log-parametrized Levenberg-Marquardt with multistart.
//! - [`stats`]: R², Pearson χ² against its 95% critical value, residual
//!   bands and the afterpulse probability estimate.
#![no_std]

extern crate alloc;

pub mod extract;
pub mod fit;
pub mod linalg;
pub mod models;
pub mod sim;
pub mod special;
pub mod stats;

pub use extract::{ExtraIntervals, ResponseHistogram};
pub use fit::{FitOutcome, FitProblem, Weighting};
pub use models::{ModelFamily, ModelParams, MultiExpParams, PowerLawParams, SinhcParams};
pub use sim::{DetectorConfig, IntervalStream, TrapModel};
pub use stats::GofReport;
