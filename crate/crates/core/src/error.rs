//! Error type shared across the receiver chain.

use std::fmt;

/// Errors raised by configuration validation and the estimation chain.
#[derive(Debug, Clone, PartialEq)]
pub enum RangingError {
    /// A configuration value or combination violates a model constraint.
    Config(String),
    /// An index argument is outside its valid range.
    Range(String),
    /// The matrix handed to the eigensolver is not Hermitian.
    NotHermitian,
    /// The Jacobi sweeps failed to drive the off-diagonal mass below tolerance.
    NoConvergence,
    /// Every eigenvector was assigned to the signal subspace; the MUSIC metric
    /// needs at least one noise dimension (requires fewer active codes than
    /// slot symbols).
    NoNoiseSubspace,
    /// The Gram matrix of the rotated codes is too ill-conditioned to solve;
    /// the estimated CFOs sit too close to the identifiability boundary.
    NearCollinearCodes { condition: f64 },
    /// The adjacent-subcarrier correlation sum vanished, leaving the timing
    /// phase undefined.
    DegenerateTimingSum,
    /// The Gram matrix of the rotated codes is singular.
    SingularGram,
}

impl fmt::Display for RangingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RangingError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            RangingError::Range(msg) => write!(f, "index out of range: {msg}"),
            RangingError::NotHermitian => write!(f, "matrix is not Hermitian"),
            RangingError::NoConvergence => write!(f, "eigensolver did not converge"),
            RangingError::NoNoiseSubspace => {
                write!(f, "no noise subspace: all dimensions assigned to signal")
            }
            RangingError::NearCollinearCodes { condition } => {
                write!(
                    f,
                    "code matrix nearly collinear (condition {condition:.3e})"
                )
            }
            RangingError::DegenerateTimingSum => {
                write!(f, "timing correlation sum is zero; phase undefined")
            }
            RangingError::SingularGram => write!(f, "code Gram matrix is singular"),
        }
    }
}

impl std::error::Error for RangingError {}

pub type Result<T> = std::result::Result<T, RangingError>;
