//! Numerical laboratory for K-ary phase-shift-keyed floodlight quantum key
//! distribution.
//!
//! The pipeline runs from physical link parameters to a per-symbol Gaussian
//! measurement channel ([`link`]), through the dual-homodyne receiver's
//! confusion matrix ([`receiver`]), to Shannon-information and secret-key
//! rates ([`rates`]). [`monitor`] simulates the single-photon monitoring taps
//! and the intrusion-parameter estimate, and [`optimizer`] maximizes the key
//! rate lower bound over source brightness for distance sweeps. The [`cli`]
//! module backs the `flqkd` binary.

pub mod cli;
pub mod constellation;
pub mod error;
pub mod link;
pub mod monitor;
pub mod optimizer;
pub mod rates;
pub mod receiver;
pub mod stream;

pub use constellation::{Constellation, IqPoint};
pub use error::{Error, Result};
pub use link::{GaussianChannel, ProtocolParams};
pub use monitor::MonitorCounts;
pub use optimizer::SweepRow;
pub use rates::{EveModel, RateResult, TabulatedBound, ZeroLeakage};
pub use receiver::ConfusionMatrix;
