//! Per-user ground truth and frequency-domain observation synthesis.
//!
//! Observations are generated directly at the DFT output: a small residual
//! CFO leaves each ranging bin carrying a superposition of phase-rotated
//! codes scaled by the users' (timing-rotated) channel responses, plus white
//! Gaussian noise. Inter-carrier and inter-block interference are below the
//! noise floor in the quasi-synchronous regime and are not modeled, which
//! keeps exact analytic oracles available for every estimator.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{RangingError, Result};
use crate::rng::TrialRng;
use crate::scenario::{cfo_rotation, Codebook, ScenarioConfig};

/// How ranging codes are assigned to the users of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionMode {
    /// Every user picks a different code (no collision).
    DistinctCodes,
    /// Exactly one code is shared by two users; the rest are distinct.
    ForceSharedCode,
}

/// Ground truth for one ranging user.
#[derive(Debug, Clone)]
pub struct UserGroundTruth {
    /// Transmitted code, 1-based.
    pub code: usize,
    /// Timing offset in samples.
    pub timing_offset: usize,
    /// Normalized CFO in subcarrier spacings.
    pub cfo: f64,
    /// Channel impulse response, zero-padded to the design length `L`.
    pub taps: Vec<Complex64>,
    /// Actual channel order `L_k` (taps beyond it are zero).
    pub channel_order: usize,
    /// Received ranging power: mean of `|S(theta, i)|^2` over the subchannel.
    pub power: f64,
}

/// Variance of tap `tap` for a channel of order `order`: exponential power
/// delay profile scaled so the expected total channel energy is one.
pub fn pdp_tap_variance(order: usize, tap: usize) -> f64 {
    assert!(tap < order);
    let lk = order as f64;
    let scale = (1.0 - (-1.0 / lk).exp()) / (1.0 - (-1.0f64).exp());
    scale * (-(tap as f64) / lk).exp()
}

/// Channel frequency response at subcarrier `i`: `sum_l h(l) exp(-j 2 pi l i / N)`.
pub fn channel_frequency_response(
    taps: &[Complex64],
    subcarrier: usize,
    dft_size: usize,
) -> Complex64 {
    taps.iter()
        .enumerate()
        .map(|(l, &h)| {
            let phase = -2.0 * PI * (l as f64) * (subcarrier as f64) / dft_size as f64;
            h * Complex64::new(phase.cos(), phase.sin())
        })
        .sum()
}

/// Timing-rotated channel response `exp(-j 2 pi theta i / N) H(i)` observed on
/// subcarrier `i`.
pub fn ranging_amplitude(user: &UserGroundTruth, subcarrier: usize, dft_size: usize) -> Complex64 {
    let phase = -2.0 * PI * (user.timing_offset as f64) * (subcarrier as f64) / dft_size as f64;
    Complex64::new(phase.cos(), phase.sin())
        * channel_frequency_response(&user.taps, subcarrier, dft_size)
}

fn received_power(cfg: &ScenarioConfig, user: &UserGroundTruth) -> f64 {
    let bins = cfg.ranging_subcarriers();
    bins.iter()
        .map(|&i| ranging_amplitude(user, i, cfg.dft_size).norm_sqr())
        .sum::<f64>()
        / bins.len() as f64
}

/// Draws `count` users with independent channels, timing offsets and CFOs.
///
/// Codes are sampled without replacement in [`CollisionMode::DistinctCodes`];
/// in [`CollisionMode::ForceSharedCode`] the last user repeats the first
/// user's code. The colliding pair is placed at the opposite extremes of the
/// CFO range (sign assignment randomized): two signals on the same code are
/// only distinguishable through their CFO gap, so the collision scenario
/// exercises the detector at resolvable separations. Channels, powers and
/// timing offsets stay independent. Channel orders are uniform on the top
/// seven values `{max(1, L-6), .., L}`.
pub fn draw_users(
    cfg: &ScenarioConfig,
    count: usize,
    mode: CollisionMode,
    rng: &mut TrialRng,
) -> Result<Vec<UserGroundTruth>> {
    if count == 0 {
        return Err(RangingError::Config("user count must be at least 1".into()));
    }
    let m = cfg.symbols_per_slot;
    let codes: Vec<usize> = match mode {
        CollisionMode::DistinctCodes => {
            if count > m {
                return Err(RangingError::Config(format!(
                    "{count} users cannot hold distinct codes from a set of {m}"
                )));
            }
            rng.sample_distinct(m, count)
        }
        CollisionMode::ForceSharedCode => {
            if count < 2 {
                return Err(RangingError::Config(
                    "a forced collision needs at least 2 users".into(),
                ));
            }
            if count - 1 > m {
                return Err(RangingError::Config(format!(
                    "{count} users with one shared code need {} distinct codes, set has {m}",
                    count - 1
                )));
            }
            let mut codes = rng.sample_distinct(m, count - 1);
            codes.push(codes[0]);
            codes
        }
    };

    let order_lo = cfg.channel_len.saturating_sub(6).max(1);
    let mut users = Vec::with_capacity(count);
    for &code in &codes {
        let channel_order = rng.integer_in(order_lo, cfg.channel_len);
        let mut taps = vec![Complex64::new(0.0, 0.0); cfg.channel_len];
        for (l, tap) in taps.iter_mut().enumerate().take(channel_order) {
            *tap = rng.complex_gaussian(pdp_tap_variance(channel_order, l));
        }
        let timing_offset = rng.integer_in(0, cfg.max_timing_offset);
        let cfo = rng.uniform_in(-cfg.max_cfo, cfg.max_cfo);
        let mut user = UserGroundTruth {
            code,
            timing_offset,
            cfo,
            taps,
            channel_order,
            power: 0.0,
        };
        user.power = received_power(cfg, &user);
        users.push(user);
    }
    if mode == CollisionMode::ForceSharedCode {
        // Pin the colliding pair at the CFO extremes; the shared code sits at
        // positions 0 and count-1 by construction.
        let sign = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
        users[0].cfo = sign * cfg.max_cfo;
        users[count - 1].cfo = -sign * cfg.max_cfo;
    }
    Ok(users)
}

/// DFT outputs for one ranging slot on one subchannel.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    /// One length-`M` vector per ranging subcarrier, tile by tile.
    pub bins: Vec<Vec<Complex64>>,
    /// Absolute subcarrier index of each entry of `bins`.
    pub bin_subcarriers: Vec<usize>,
    /// One length-`M` noise vector per null subcarrier at the band edges.
    pub guard_bins: Vec<Vec<Complex64>>,
    /// Absolute subcarrier index of each entry of `guard_bins`.
    pub guard_subcarriers: Vec<usize>,
    /// Noise variance used during synthesis.
    pub noise_variance: f64,
}

impl ObservationSet {
    pub fn symbols(&self) -> usize {
        self.bins.first().map_or(0, Vec::len)
    }
}

/// Synthesizes the slot observations for the given users plus guard-band
/// noise. An empty user list produces pure noise.
pub fn synthesize(
    cfg: &ScenarioConfig,
    users: &[UserGroundTruth],
    rng: &mut TrialRng,
) -> ObservationSet {
    let codebook = Codebook::build(cfg).expect("validated config");
    let sigma2 = cfg.noise_variance();
    let m = cfg.symbols_per_slot;

    let signatures: Vec<Vec<Complex64>> = users
        .iter()
        .map(|u| {
            cfo_rotation(cfg, u.cfo)
                .into_iter()
                .zip(codebook.code(u.code))
                .map(|(r, &c)| r * c)
                .collect()
        })
        .collect();

    let bin_subcarriers = cfg.ranging_subcarriers();
    let bins = bin_subcarriers
        .iter()
        .map(|&i| {
            let mut y = vec![Complex64::new(0.0, 0.0); m];
            for (user, signature) in users.iter().zip(&signatures) {
                let amp = ranging_amplitude(user, i, cfg.dft_size);
                for (sym, &sig) in y.iter_mut().zip(signature) {
                    *sym += amp * sig;
                }
            }
            if sigma2 > 0.0 {
                for sym in y.iter_mut() {
                    *sym += rng.complex_gaussian(sigma2);
                }
            }
            y
        })
        .collect();

    let guard_subcarriers: Vec<usize> = (0..cfg.guard_subcarriers)
        .chain(cfg.dft_size - cfg.guard_subcarriers..cfg.dft_size)
        .collect();
    let guard_bins = guard_subcarriers
        .iter()
        .map(|_| {
            (0..m)
                .map(|_| {
                    if sigma2 > 0.0 {
                        rng.complex_gaussian(sigma2)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect();

    ObservationSet {
        bins,
        bin_subcarriers,
        guard_bins,
        guard_subcarriers,
        noise_variance: sigma2,
    }
}

/// Text dump of an observation set, one line per `(subcarrier, symbol)` pair:
/// `subcarrier symbol real imag`. Ranging bins come first, then guard bins.
pub fn write_observation_text(obs: &ObservationSet) -> String {
    let mut out = String::new();
    out.push_str("# subcarrier symbol real imag\n");
    let mut push = |i: usize, bin: &[Complex64]| {
        for (m, z) in bin.iter().enumerate() {
            out.push_str(&format!("{} {} {:.17e} {:.17e}\n", i, m, z.re, z.im));
        }
    };
    for (&i, bin) in obs.bin_subcarriers.iter().zip(&obs.bins) {
        push(i, bin);
    }
    for (&i, bin) in obs.guard_subcarriers.iter().zip(&obs.guard_bins) {
        push(i, bin);
    }
    out
}
