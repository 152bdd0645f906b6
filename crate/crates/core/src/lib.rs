//! Monte Carlo simulation and power optimization for a multipair
//! decode-and-forward full-duplex relay with large antenna arrays.
//!
//! The relay suppresses its own loopback interference with an MMSE receive
//! filter, detects with zero forcing and forwards with a zero-forcing
//! precoder. The crate provides
//!
//! * [`modem`]: square QAM mapping and hard decisions,
//! * [`channel`]: system parameters and block-fading realizations with
//!   estimation and hardware errors,
//! * [`filters`]: ZF detector/precoder, MMSE loopback filter and diagnostics,
//! * [`sim`]: the symbol-level full-duplex transmission loop and BER sweeps,
//! * [`rates`]: Monte Carlo rate coefficients, achievable rates and energy
//!   efficiency,
//! * [`lp`] and [`opa`]: an embedded dense simplex and the iterative optimal
//!   power allocation built on it,
//! * [`experiment`]: experiment specs, orchestration and CSV output.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix it to `f64`.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod lp;
pub mod modem;
pub mod opa;
pub mod rates;
pub mod scalar;
pub mod sim;
pub mod stats;

pub use channel::{SystemConfig, snr_relay_db};
pub use error::{Error, Result};
pub use filters::FilterMode;
pub use scalar::{CMatrix, CVector, Complex, Real};

pub type Constellation = modem::Constellation<f64>;
pub type ChannelSet = channel::ChannelSet<f64>;
pub type FilterSet = filters::FilterSet<f64>;
pub type RateCoefficients = rates::RateCoefficients<f64>;
pub type LpStandardForm = lp::LpStandardForm<f64>;
pub type PowerAllocation = opa::PowerAllocation<f64>;
