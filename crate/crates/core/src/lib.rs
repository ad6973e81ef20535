//! Monte-Carlo simulator for a single-cell massive MIMO downlink serving
//! URLLC devices.
//!
//! The pipeline for one deployment is
//! [`scenario`] (device drop and large-scale fading) →
//! [`channel`] (Rayleigh realizations and MMSE estimates) →
//! [`precoding`] (MR or MMSE) →
//! [`sinr`] (hardening-bound coefficients, SE and outage thresholds) →
//! [`power`] (equal, max-min or max-product allocation).
//! [`harness`] repeats it over many deployments and aggregates spectral
//! efficiency and outage statistics.

pub mod channel;
pub mod error;
pub mod harness;
pub mod power;
pub mod precoding;
pub mod scenario;
pub mod sinr;
pub mod stats;
pub mod validate;

pub use error::{Error, Result};
