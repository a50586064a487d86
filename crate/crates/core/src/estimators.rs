//! Amplitude, timing and power recovery for the detected codes.
//!
//! With the CFO estimates in hand, the per-bin code superposition becomes a
//! linear model; least squares through a Cholesky factorization of the code
//! Gram matrix recovers the per-user complex amplitudes on every ranging
//! subcarrier. Timing follows from the phase slope between amplitudes on
//! adjacent subcarriers of each tile, and power from the bias-corrected mean
//! squared amplitude.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::channel::ObservationSet;
use crate::error::{RangingError, Result};
use crate::linalg::{
    cholesky_lower, cholesky_solve, hermitian_condition, spd_inverse_diag, CMatrix,
};
use crate::scenario::{rotated_code, Codebook, ScenarioConfig};
use crate::subspace::DetectionResult;

/// Gram condition number beyond which the estimated CFOs are treated as
/// sitting on the identifiability boundary.
const MAX_GRAM_CONDITION: f64 = 1e12;

/// Least-squares amplitude estimates for the detected codes.
#[derive(Debug, Clone)]
pub struct AmplitudeEstimates {
    /// Detected code indices (1-based), defining the column order below.
    pub codes: Vec<usize>,
    /// Rotated-code matrix the amplitudes were solved against (M x K).
    pub code_matrix: CMatrix,
    /// Amplitude vector (length K) per ranging bin, aligned with the
    /// observation set's bin order.
    pub per_bin: Vec<Vec<Complex64>>,
    /// Gram matrix of the rotated codes.
    pub gram: CMatrix,
    /// Real diagonal of the Gram inverse (per-code noise amplification).
    pub gram_inverse_diag: Vec<f64>,
}

/// Solves the per-bin normal equations for all detected codes.
///
/// The Gram matrix is factored once; each bin then costs one O(K^2)
/// triangular solve on top of the K matched filters, a negligible fraction
/// of the subspace stage.
pub fn ls_amplitudes(
    obs: &ObservationSet,
    det: &DetectionResult,
    codebook: &Codebook,
    cfg: &ScenarioConfig,
) -> Result<AmplitudeEstimates> {
    assert!(det.num_codes >= 1, "nothing to solve for");
    let columns: Vec<Vec<Complex64>> = det
        .codes
        .iter()
        .zip(&det.cfo)
        .map(|(&code, &eps)| rotated_code(cfg, codebook, code, eps))
        .collect();
    let code_matrix = CMatrix::from_columns(&columns);
    let gram = code_matrix.gram();
    let condition = hermitian_condition(&gram)?;
    if condition.is_nan() || condition > MAX_GRAM_CONDITION {
        return Err(RangingError::NearCollinearCodes { condition });
    }
    let chol = cholesky_lower(&gram)?;
    let per_bin = obs
        .bins
        .iter()
        .map(|y| cholesky_solve(&chol, &code_matrix.adjoint_matvec(y)))
        .collect();
    let gram_inverse_diag = spd_inverse_diag(&gram)?;
    Ok(AmplitudeEstimates {
        codes: det.codes.clone(),
        code_matrix,
        per_bin,
        gram,
        gram_inverse_diag,
    })
}

/// Refined timing estimate for the detected code in column `column`:
/// `round(N/(2 pi) arg(sum of adjacent-bin amplitude products) - N_GD/2)`.
///
/// The products pair amplitudes of neighbouring subcarriers within each tile;
/// the `N_GD/2` shift centers the residual error in the IBI-free window of
/// the data section.
pub fn timing_estimate(
    amp: &AmplitudeEstimates,
    column: usize,
    cfg: &ScenarioConfig,
) -> Result<i64> {
    let v = cfg.tile_width;
    let q = cfg.tiles_per_subchannel;
    let mut sum = Complex64::new(0.0, 0.0);
    for tile in 0..q {
        for nu in 1..v {
            let prev = amp.per_bin[tile * v + nu - 1][column];
            let curr = amp.per_bin[tile * v + nu][column];
            sum += prev * curr.conj();
        }
    }
    if sum.norm() == 0.0 {
        return Err(RangingError::DegenerateTimingSum);
    }
    let n = cfg.dft_size as f64;
    let raw = n / (2.0 * PI) * sum.arg() - cfg.data_cp as f64 / 2.0;
    Ok(raw.round() as i64)
}

/// Power estimate for the detected code in column `column`: mean squared
/// amplitude minus the noise bias `sigma2 * [T^-1]_kk`. Negative outputs are
/// reported as-is.
pub fn power_estimate(amp: &AmplitudeEstimates, column: usize, noise_power: f64) -> f64 {
    let bins = amp.per_bin.len() as f64;
    let mean_sq = amp
        .per_bin
        .iter()
        .map(|s| s[column].norm_sqr())
        .sum::<f64>()
        / bins;
    mean_sq - noise_power * amp.gram_inverse_diag[column]
}

/// Predicted variance of the power estimate under exact CFO and noise power
/// knowledge: `sigma_k^2 (2 P_k + sigma_k^2) / QV` with
/// `sigma_k^2 = sigma^2 [T^-1]_kk`.
pub fn power_estimate_variance(power: f64, amplitude_noise_var: f64, bins: usize) -> f64 {
    amplitude_noise_var * (2.0 * power + amplitude_noise_var) / bins as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        draw_users, ranging_amplitude, synthesize, CollisionMode, UserGroundTruth,
    };
    use crate::linalg::{inner, norm_sqr};
    use crate::rng::TrialRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn noiseless_cfg() -> ScenarioConfig {
        ScenarioConfig {
            snr_db: f64::INFINITY,
            ..Default::default()
        }
    }

    fn detection_from_truth(users: &[UserGroundTruth], noise_power: f64) -> DetectionResult {
        let mut pairs: Vec<(usize, f64)> = users.iter().map(|u| (u.code, u.cfo)).collect();
        pairs.sort_by_key(|&(code, _)| code);
        DetectionResult {
            num_codes: pairs.len(),
            codes: pairs.iter().map(|&(code, _)| code).collect(),
            cfo: pairs.iter().map(|&(_, eps)| eps).collect(),
            peaks: vec![0.0; 4],
            peak_cfo: vec![0.0; 4],
            noise_power,
        }
    }

    fn flat_user(cfg: &ScenarioConfig, code: usize, timing: usize, cfo: f64) -> UserGroundTruth {
        let mut taps = vec![c(0.0, 0.0); cfg.channel_len];
        taps[0] = c(1.0, 0.0);
        UserGroundTruth {
            code,
            timing_offset: timing,
            cfo,
            taps,
            channel_order: 1,
            power: 1.0,
        }
    }

    #[test]
    fn single_code_reduces_to_matched_filter() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        let user = flat_user(&cfg, 2, 17, 0.0);
        let mut rng = TrialRng::from_master(0, 0);
        let obs = synthesize(&cfg, std::slice::from_ref(&user), &mut rng);
        let det = detection_from_truth(&[user], 0.0);
        let amp = ls_amplitudes(&obs, &det, &cb, &cfg).unwrap();
        let m = cfg.symbols_per_slot as f64;
        for (bin, s) in obs.bins.iter().zip(&amp.per_bin) {
            let matched = inner(cb.code(2), bin) / m;
            assert!((s[0] - matched).norm() < 1e-12);
        }
    }

    #[test]
    fn noiseless_amplitudes_are_exact() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(1, 0);
        for _ in 0..50 {
            let users = draw_users(&cfg, 3, CollisionMode::DistinctCodes, &mut rng).unwrap();
            let obs = synthesize(&cfg, &users, &mut rng);
            let det = detection_from_truth(&users, 0.0);
            let amp = ls_amplitudes(&obs, &det, &cb, &cfg).unwrap();
            for (bin_idx, &i) in obs.bin_subcarriers.iter().enumerate() {
                for (col, &code) in det.codes.iter().enumerate() {
                    let user = users.iter().find(|u| u.code == code).unwrap();
                    let truth = ranging_amplitude(user, i, cfg.dft_size);
                    assert!(
                        (amp.per_bin[bin_idx][col] - truth).norm() < 1e-10,
                        "bin {bin_idx} code {code}"
                    );
                }
            }
        }
    }

    #[test]
    fn gram_properties_hold() {
        let cfg = ScenarioConfig::default();
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(2, 0);
        let users = draw_users(&cfg, 3, CollisionMode::DistinctCodes, &mut rng).unwrap();
        let obs = synthesize(&cfg, &users, &mut rng);
        let det = detection_from_truth(&users, obs.noise_variance);
        let amp = ls_amplitudes(&obs, &det, &cb, &cfg).unwrap();
        let m = cfg.symbols_per_slot as f64;
        for k in 0..det.num_codes {
            assert!(
                (amp.gram[(k, k)].re - m).abs() < 1e-9,
                "unit-modulus diagonal"
            );
            assert!(amp.gram_inverse_diag[k] >= 1.0 / m - 1e-12);
        }
        // Zero CFO everywhere: the Gram collapses to M * I.
        let zeros = DetectionResult {
            cfo: vec![0.0; det.num_codes],
            ..det.clone()
        };
        let amp0 = ls_amplitudes(&obs, &zeros, &cb, &cfg).unwrap();
        for a in 0..det.num_codes {
            for b in 0..det.num_codes {
                let expect = if a == b { m } else { 0.0 };
                assert!((amp0.gram[(a, b)] - c(expect, 0.0)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn residual_is_orthogonal_to_code_matrix() {
        let cfg = ScenarioConfig {
            snr_db: 10.0,
            ..Default::default()
        };
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(3, 0);
        for _ in 0..50 {
            let users = draw_users(&cfg, 2, CollisionMode::DistinctCodes, &mut rng).unwrap();
            let obs = synthesize(&cfg, &users, &mut rng);
            let det = detection_from_truth(&users, obs.noise_variance);
            let amp = ls_amplitudes(&obs, &det, &cb, &cfg).unwrap();
            for (bin, s) in obs.bins.iter().zip(&amp.per_bin) {
                let fitted = amp.code_matrix.matvec(s);
                let residual: Vec<Complex64> =
                    bin.iter().zip(&fitted).map(|(y, f)| y - f).collect();
                let back = amp.code_matrix.adjoint_matvec(&residual);
                assert!(norm_sqr(&back).sqrt() < 1e-9);
            }
        }
    }

    #[test]
    fn near_collinear_codes_are_rejected() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        let user = flat_user(&cfg, 1, 0, 0.0);
        let mut rng = TrialRng::from_master(0, 0);
        let obs = synthesize(&cfg, &[user], &mut rng);
        // Codes 1 and 2 rotated to (almost) the same point on the
        // identifiability boundary are numerically collinear.
        let bound = cfg.acquisition_range();
        let det = DetectionResult {
            num_codes: 2,
            codes: vec![1, 2],
            cfo: vec![bound - 1e-9, -bound + 1e-9],
            peaks: vec![0.0; 4],
            peak_cfo: vec![0.0; 4],
            noise_power: 0.0,
        };
        match ls_amplitudes(&obs, &det, &cb, &cfg) {
            Err(RangingError::NearCollinearCodes { condition }) => {
                assert!(condition > MAX_GRAM_CONDITION);
            }
            other => panic!("expected NearCollinearCodes, got {other:?}"),
        }
    }

    #[test]
    fn timing_flat_channel_reference_values() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        for (theta, expect) in [(10usize, -14i64), (0, -24)] {
            let user = flat_user(&cfg, 1, theta, 0.0);
            let mut rng = TrialRng::from_master(0, 0);
            let obs = synthesize(&cfg, std::slice::from_ref(&user), &mut rng);
            let det = detection_from_truth(&[user], 0.0);
            let amp = ls_amplitudes(&obs, &det, &cb, &cfg).unwrap();
            let got = timing_estimate(&amp, 0, &cfg).unwrap();
            assert_eq!(got, expect, "theta = {theta}");
            // Inside the IBI-free window [L - N_GD - 1, 0].
            let delta = got - theta as i64;
            assert!((-35..=0).contains(&delta));
        }
    }

    #[test]
    fn timing_decouples_across_users() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        let users = vec![
            flat_user(&cfg, 1, 37, 0.031),
            flat_user(&cfg, 3, 92, -0.017),
        ];
        let mut rng = TrialRng::from_master(0, 0);
        let obs = synthesize(&cfg, &users, &mut rng);
        let det = detection_from_truth(&users, 0.0);
        let amp = ls_amplitudes(&obs, &det, &cb, &cfg).unwrap();
        let half_cp = cfg.data_cp as i64 / 2;
        for (col, &code) in det.codes.iter().enumerate() {
            let user = users.iter().find(|u| u.code == code).unwrap();
            let got = timing_estimate(&amp, col, &cfg).unwrap();
            assert_eq!(got, user.timing_offset as i64 - half_cp);
        }
    }

    #[test]
    fn timing_is_invariant_to_common_scaling() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(4, 0);
        let users = draw_users(&cfg, 2, CollisionMode::DistinctCodes, &mut rng).unwrap();
        let obs = synthesize(&cfg, &users, &mut rng);
        let det = detection_from_truth(&users, 0.0);
        let mut amp = ls_amplitudes(&obs, &det, &cb, &cfg).unwrap();
        let base = timing_estimate(&amp, 0, &cfg).unwrap();
        let scale = c(-1.3, 2.4);
        for bin in amp.per_bin.iter_mut() {
            bin[0] *= scale;
        }
        assert_eq!(timing_estimate(&amp, 0, &cfg).unwrap(), base);
    }

    #[test]
    fn degenerate_timing_sum_is_reported() {
        let cfg = ScenarioConfig::default();
        let amp = AmplitudeEstimates {
            codes: vec![1],
            code_matrix: CMatrix::zeros(4, 1),
            // Tile products cancel pairwise: +1 and -1.
            per_bin: vec![
                vec![c(1.0, 0.0)],
                vec![c(1.0, 0.0)],
                vec![c(1.0, 0.0)],
                vec![c(-1.0, 0.0)],
                vec![c(0.0, 0.0)],
                vec![c(0.0, 0.0)],
                vec![c(0.0, 0.0)],
                vec![c(0.0, 0.0)],
            ],
            gram: CMatrix::identity(1),
            gram_inverse_diag: vec![1.0],
        };
        assert_eq!(
            timing_estimate(&amp, 0, &cfg),
            Err(RangingError::DegenerateTimingSum)
        );
    }

    #[test]
    fn noiseless_power_is_exact() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(5, 0);
        let users = draw_users(&cfg, 2, CollisionMode::DistinctCodes, &mut rng).unwrap();
        let obs = synthesize(&cfg, &users, &mut rng);
        let det = detection_from_truth(&users, 0.0);
        let amp = ls_amplitudes(&obs, &det, &cb, &cfg).unwrap();
        for (col, &code) in det.codes.iter().enumerate() {
            let user = users.iter().find(|u| u.code == code).unwrap();
            let got = power_estimate(&amp, col, 0.0);
            assert!((got - user.power).abs() < 1e-10);
        }
    }

    #[test]
    fn power_variance_reference_values() {
        assert_eq!(power_estimate_variance(1.0, 0.0, 8), 0.0);
        let v = power_estimate_variance(1.0, 0.25, 8);
        assert!((v - 0.0703125).abs() < 1e-15);
        let doubled = power_estimate_variance(1.0, 0.25, 16);
        assert!((v / doubled - 2.0).abs() < 1e-12);
    }
}
