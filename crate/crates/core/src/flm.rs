//! Correlation-threshold baseline detector (FLM scheme).
//!
//! The baseline declares code `k` active when the normalized correlation
//! statistic `Z_k = mean |c_k^H y|^2 / M^2` exceeds a threshold proportional
//! to the estimated noise power. The proportionality constant is calibrated
//! offline against a target false-alarm rate on noise-only slots, since a
//! fixed constant cannot hold the false-alarm rate across SNRs.

use crate::channel::{synthesize, ObservationSet};
use crate::linalg::inner;
use crate::rng::TrialRng;
use crate::scenario::{Codebook, ScenarioConfig};

/// Baseline detector output.
#[derive(Debug, Clone)]
pub struct FlmResult {
    /// Correlation statistic per code (index `k-1`).
    pub statistics: Vec<f64>,
    /// Codes whose statistic exceeded the threshold (1-based, ascending).
    pub detected_codes: Vec<usize>,
    /// Power estimate per detected code, aligned with `detected_codes`.
    pub power: Vec<f64>,
    /// Threshold factor `alpha`; the decision threshold is `alpha * sigma2`.
    pub threshold_factor: f64,
}

/// Runs the baseline detector: `Z_k` per code, threshold `alpha * sigma2`,
/// bias-corrected power `Z_k - sigma2 / M` per detected code.
pub fn flm_detect(
    obs: &ObservationSet,
    codebook: &Codebook,
    noise_power: f64,
    alpha: f64,
) -> FlmResult {
    let m = codebook.size();
    let bins = obs.bins.len() as f64;
    let statistics: Vec<f64> = (1..=m)
        .map(|k| {
            obs.bins
                .iter()
                .map(|y| inner(codebook.code(k), y).norm_sqr())
                .sum::<f64>()
                / (bins * (m * m) as f64)
        })
        .collect();
    let threshold = alpha * noise_power;
    let detected_codes: Vec<usize> = (1..=m).filter(|&k| statistics[k - 1] > threshold).collect();
    let power = detected_codes
        .iter()
        .map(|&k| statistics[k - 1] - noise_power / m as f64)
        .collect();
    FlmResult {
        statistics,
        detected_codes,
        power,
        threshold_factor: alpha,
    }
}

/// Calibrates the threshold factor for one SNR: the `(1 - target_pfa)`
/// quantile of `Z_k / sigma2_hat` over noise-only slots.
pub fn calibrate_alpha(
    cfg: &ScenarioConfig,
    codebook: &Codebook,
    trials: usize,
    target_pfa: f64,
    master_seed: u64,
) -> f64 {
    assert!(trials > 0 && target_pfa > 0.0 && target_pfa < 1.0);
    let mut samples = Vec::with_capacity(trials * codebook.size());
    for trial in 0..trials {
        let mut rng = TrialRng::from_master(master_seed, trial as u64);
        let obs = synthesize(cfg, &[], &mut rng);
        let sigma2 = crate::subspace::estimate_noise_power(&obs);
        if sigma2 <= 0.0 {
            continue;
        }
        let result = flm_detect(&obs, codebook, sigma2, f64::INFINITY);
        for z in result.statistics {
            samples.push(z / sigma2);
        }
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((1.0 - target_pfa) * samples.len() as f64).ceil() as usize;
    samples[rank.min(samples.len() - 1)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::UserGroundTruth;
    use num_complex::Complex64;

    fn noiseless_cfg() -> ScenarioConfig {
        ScenarioConfig {
            snr_db: f64::INFINITY,
            ..Default::default()
        }
    }

    fn flat_user(cfg: &ScenarioConfig, code: usize) -> UserGroundTruth {
        let mut taps = vec![Complex64::new(0.0, 0.0); cfg.channel_len];
        taps[0] = Complex64::new(1.0, 0.0);
        UserGroundTruth {
            code,
            timing_offset: 33,
            cfo: 0.0,
            taps,
            channel_order: 1,
            power: 1.0,
        }
    }

    #[test]
    fn noiseless_single_code_statistic_is_one() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(0, 0);
        let obs = synthesize(&cfg, &[flat_user(&cfg, 1)], &mut rng);
        let result = flm_detect(&obs, &cb, 0.0, 1.0);
        assert!((result.statistics[0] - 1.0).abs() < 1e-12);
        for &z in &result.statistics[1..] {
            assert!(z.abs() < 1e-20);
        }
    }

    #[test]
    fn zero_cfo_statistics_separate_active_codes() {
        let cfg = noiseless_cfg();
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(1, 0);
        let mut users = crate::channel::draw_users(
            &cfg,
            2,
            crate::channel::CollisionMode::DistinctCodes,
            &mut rng,
        )
        .unwrap();
        for u in users.iter_mut() {
            u.cfo = 0.0;
        }
        let obs = synthesize(&cfg, &users, &mut rng);
        let result = flm_detect(&obs, &cb, 0.0, 1.0);
        for k in 1..=cb.size() {
            let active = users.iter().any(|u| u.code == k);
            assert_eq!(result.statistics[k - 1] > 1e-12, active, "code {k}");
        }
    }

    #[test]
    fn zero_threshold_detects_everything_nonzero() {
        let cfg = ScenarioConfig {
            snr_db: 16.0,
            ..Default::default()
        };
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(2, 0);
        let obs = synthesize(&cfg, &[flat_user(&cfg, 2)], &mut rng);
        let result = flm_detect(&obs, &cb, 0.0, 123.0);
        assert_eq!(result.detected_codes, vec![1, 2, 3, 4]);
    }

    #[test]
    fn pure_noise_statistic_mean_is_sigma2_over_m() {
        let cfg = ScenarioConfig {
            snr_db: 10.0, // sigma^2 = 0.1
            ..Default::default()
        };
        let cb = Codebook::build(&cfg).unwrap();
        let mut rng = TrialRng::from_master(3, 0);
        let trials = 2000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let obs = synthesize(&cfg, &[], &mut rng);
            let result = flm_detect(&obs, &cb, 0.1, 1.0);
            sum += result.statistics.iter().sum::<f64>() / cb.size() as f64;
        }
        let mean = sum / trials as f64;
        let expect = cfg.noise_variance() / cfg.symbols_per_slot as f64;
        assert!((mean - expect).abs() / expect < 0.05, "mean {mean}");
    }

    #[test]
    fn calibrated_alpha_hits_target_pfa() {
        let cfg = ScenarioConfig {
            snr_db: 16.0,
            ..Default::default()
        };
        let cb = Codebook::build(&cfg).unwrap();
        let alpha = calibrate_alpha(&cfg, &cb, 2000, 0.01, 77);
        // Verify on an independent batch.
        let mut false_alarms = 0usize;
        let mut total = 0usize;
        for trial in 0..2000u64 {
            let mut rng = TrialRng::from_master(78, trial);
            let obs = synthesize(&cfg, &[], &mut rng);
            let sigma2 = crate::subspace::estimate_noise_power(&obs);
            let result = flm_detect(&obs, &cb, sigma2, alpha);
            false_alarms += result.detected_codes.len();
            total += cb.size();
        }
        let pfa = false_alarms as f64 / total as f64;
        assert!((0.005..=0.02).contains(&pfa), "measured pfa {pfa}");
    }
}
