//! Joint precoder and RIS phase-shift design for multi-RIS-aided MU-MIMO
//! downlink under imperfect CSIT, built on generalized power iteration (GPI).
//!
//! The numerical core is generic over a [`Real`] scalar (`f32` or `f64`);
//! complex quantities are `Complex<T>` held in nalgebra dynamic matrices.
//! Concrete `f64` aliases are provided at the crate root for the common case.
//!
//! Module map:
//!
//! - [`scenario`]: system dimensions, geometry, pathloss and noise scalars.
//! - [`channel`]: Saleh-Valenzuela channel synthesis, cascaded channels and
//!   LMMSE estimation error statistics.
//! - [`metrics`]: exact sum SE, the instantaneous-SE lower bound in both
//!   precoder and phase form, NMSE and a Monte Carlo oracle.
//! - [`gpi_precoder`]: GPI precoder optimization for fixed phases.
//! - [`gpi_ris`]: regularized GPI phase-shift optimization for a fixed precoder.
//! - [`joint`]: alternating optimizer with a line search over the
//!   regularization weight.
//! - [`baselines`]: RZF precoding and random phases.
//! - [`fixture`]: binary dump/load of channel realizations.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod fixture;
pub mod gpi_precoder;
pub mod gpi_ris;
pub mod joint;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Real;

pub use nalgebra::Complex;

/// Double-precision complex scalar.
pub type C64 = Complex<f64>;
/// Single-precision complex scalar.
pub type C32 = Complex<f32>;

pub type ChannelSet64 = channel::ChannelSet<f64>;
pub type ChannelEstimate64 = channel::ChannelEstimate<f64>;
pub type Precoder64 = metrics::Precoder<f64>;
pub type PhaseShifts64 = metrics::PhaseShifts<f64>;
pub type JointResult64 = joint::JointResult<f64>;

pub type ChannelSet32 = channel::ChannelSet<f32>;
pub type ChannelEstimate32 = channel::ChannelEstimate<f32>;
pub type Precoder32 = metrics::Precoder<f32>;
pub type PhaseShifts32 = metrics::PhaseShifts<f32>;
