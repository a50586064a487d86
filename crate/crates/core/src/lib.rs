//! Library for OFDMA initial-ranging reception and simulation.
//!
//! The receiver chain takes the frequency-domain slot observations of one
//! ranging subchannel and recovers, per active user: the ranging code, the
//! carrier frequency offset (MUSIC grid search over the noise subspace), the
//! timing offset (phase slope across adjacent subcarriers) and the received
//! power, plus a residual-energy collision test. The number of active codes
//! comes from the MDL rule on the sample correlation eigenvalues. A Monte
//! Carlo harness reproduces the performance curves of the scheme and of a
//! correlation-threshold baseline.

pub mod channel;
pub mod collision;
pub mod error;
pub mod estimators;
pub mod flm;
pub mod linalg;
pub mod montecarlo;
pub mod rng;
pub mod scenario;
pub mod subspace;

pub use error::{RangingError, Result};
