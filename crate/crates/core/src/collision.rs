//! Residual-energy collision detector.
//!
//! When two users pick the same code on the same subchannel the detected code
//! set cannot explain the observations and the least-squares fit leaves a
//! large residual. The detector averages the residual energy over the
//! ranging bins, subtracts the part attributable to noise, and declares a
//! collision when the excess crosses a threshold. A flagged subchannel gets
//! no response message; its estimates are treated as unreliable.

use num_complex::Complex64;

use crate::channel::ObservationSet;
use crate::estimators::AmplitudeEstimates;
use crate::scenario::ScenarioConfig;

/// Outcome of the collision test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionVerdict {
    /// Residual statistic: mean excess residual energy per ranging bin.
    pub statistic: f64,
    /// Decision threshold.
    pub threshold: f64,
    pub collided: bool,
}

/// Computes the residual statistic
/// `mean ||y - C s||^2 - sigma2 (M - K)` over the ranging bins and compares
/// it with the configured threshold. With no detected codes the raw
/// observation is the residual.
pub fn detect_collision(
    obs: &ObservationSet,
    amp: Option<&AmplitudeEstimates>,
    num_codes: usize,
    noise_power: f64,
    cfg: &ScenarioConfig,
) -> CollisionVerdict {
    let m = cfg.symbols_per_slot;
    let mut sum = 0.0;
    for (idx, bin) in obs.bins.iter().enumerate() {
        let residual: f64 = match amp {
            Some(amp) => {
                let fitted = amp.code_matrix.matvec(&amp.per_bin[idx]);
                bin.iter()
                    .zip(&fitted)
                    .map(|(y, f)| (y - f).norm_sqr())
                    .sum()
            }
            None => bin.iter().map(Complex64::norm_sqr).sum(),
        };
        sum += residual;
    }
    let statistic = sum / obs.bins.len() as f64 - noise_power * (m - num_codes) as f64;
    let threshold = cfg.collision_threshold;
    CollisionVerdict {
        statistic,
        threshold,
        collided: statistic > threshold,
    }
}
