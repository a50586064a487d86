//! Monte Carlo harness: seeded trials, metric aggregation, parameter sweeps.
//!
//! A trial runs the full receiver chain on one synthesized slot. Trials are
//! independent units of work: each derives its own random stream from the
//! master seed and its index, so a batch can be distributed over any number
//! of workers and still produce byte-identical aggregates. Metrics merge as
//! counts and sums, one row per sweep point.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{draw_users, synthesize, CollisionMode, UserGroundTruth};
use crate::collision::{detect_collision, CollisionVerdict};
use crate::error::{RangingError, Result};
use crate::estimators::{ls_amplitudes, power_estimate, power_estimate_variance, timing_estimate};
use crate::flm::{flm_detect, FlmResult};
use crate::linalg::{spd_inverse_diag, CMatrix};
use crate::rng::TrialRng;
use crate::scenario::{rotated_code, Codebook, ScenarioConfig};
use crate::subspace::{
    estimate_noise_power, mdl_order, mdl_scores, mfe_error_variance, mfe_scan, sample_correlation,
};

/// Receiver output for one ranging slot.
#[derive(Debug, Clone)]
pub struct RangingReport {
    /// Estimated number of active codes.
    pub num_codes: usize,
    /// Detected codes (1-based, ascending).
    pub codes: Vec<usize>,
    /// CFO estimate per detected code.
    pub cfo: Vec<f64>,
    /// Refined timing estimate per detected code; `None` when the amplitude
    /// stage failed or the timing phase was undefined.
    pub timing: Vec<Option<i64>>,
    /// Power estimate per detected code (`NaN` when unavailable).
    pub power: Vec<f64>,
    pub collision: CollisionVerdict,
    /// Noise power estimate from the guard bins.
    pub noise_power: f64,
}

/// Chain failures recorded per trial; a flagged trial never aborts a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialFlags {
    /// Ground truth had as many users as codes: the noise subspace the
    /// detector relies on is empty in truth.
    pub no_noise_subspace: bool,
    /// Estimated CFOs put the code matrix too close to collinearity.
    pub near_collinear: bool,
    /// A timing correlation sum vanished.
    pub degenerate_timing: bool,
}

impl TrialFlags {
    pub fn any(&self) -> bool {
        self.no_noise_subspace || self.near_collinear || self.degenerate_timing
    }
}

/// Estimation errors for one detected code whose truth assignment is
/// unambiguous (exactly one active user holds the code).
#[derive(Debug, Clone)]
pub struct MatchedCode {
    pub code: usize,
    pub cfo_error: f64,
    /// Predicted CFO error variance for this code (asymptotic analysis).
    pub cfo_var_theory: Option<f64>,
    pub timing_error: Option<i64>,
    pub power_error: Option<f64>,
    /// Predicted power estimate variance under exact CFO knowledge.
    pub power_var_theory: Option<f64>,
}

/// Intermediate quantities kept for the single-trial report.
#[derive(Debug, Clone)]
pub struct TrialDetail {
    pub eigenvalues: Vec<f64>,
    pub mdl_scores: Vec<f64>,
    pub scan_cfo: Vec<f64>,
    pub scan_peaks: Vec<f64>,
    pub amplitudes: Option<Vec<Vec<Complex64>>>,
}

/// Everything produced by one trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub users: Vec<UserGroundTruth>,
    pub report: RangingReport,
    pub flags: TrialFlags,
    /// Per-code estimation errors for unambiguously matched codes.
    pub matched: Vec<MatchedCode>,
    /// Active codes the detector did not declare.
    pub missed_codes: Vec<usize>,
    /// Declared codes no user transmitted.
    pub phantom_codes: Vec<usize>,
    /// Size of the code set.
    pub code_set_size: usize,
    pub flm: Option<FlmResult>,
    pub detail: TrialDetail,
}

/// Runs the full chain on one synthesized slot. Deterministic given
/// `(master_seed, stream)`.
pub fn run_trial(
    cfg: &ScenarioConfig,
    users_count: usize,
    mode: CollisionMode,
    master_seed: u64,
    stream: u64,
    flm_alpha: Option<f64>,
) -> Result<TrialOutcome> {
    let mut rng = TrialRng::from_master(master_seed, stream);
    let users = draw_users(cfg, users_count, mode, &mut rng)?;
    let obs = synthesize(cfg, &users, &mut rng);
    let codebook = Codebook::build(cfg)?;
    let m = cfg.symbols_per_slot;

    let corr = sample_correlation(&obs)?;
    let sigma2_hat = estimate_noise_power(&obs);
    let scores = mdl_scores(&corr.eigenvalues, sigma2_hat, obs.bins.len());
    let k_hat = mdl_order(&corr.eigenvalues, sigma2_hat, obs.bins.len());

    let mut flags = TrialFlags::default();
    if users.len() >= m {
        flags.no_noise_subspace = true;
    }

    let basis = corr.noise_subspace(k_hat)?;
    let scan = mfe_scan(&basis, cfg, &codebook)?;
    let det = crate::subspace::mcd_select(&scan, k_hat, sigma2_hat);

    let amp = if det.num_codes >= 1 {
        match ls_amplitudes(&obs, &det, &codebook, cfg) {
            Ok(a) => Some(a),
            Err(RangingError::NearCollinearCodes { .. }) => {
                flags.near_collinear = true;
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let mut timing = vec![None; det.num_codes];
    let mut power = vec![f64::NAN; det.num_codes];
    if let Some(amp) = &amp {
        for col in 0..det.num_codes {
            match timing_estimate(amp, col, cfg) {
                Ok(t) => timing[col] = Some(t),
                Err(RangingError::DegenerateTimingSum) => flags.degenerate_timing = true,
                Err(e) => return Err(e),
            }
            power[col] = power_estimate(amp, col, sigma2_hat);
        }
    }

    let collision = detect_collision(&obs, amp.as_ref(), det.num_codes, sigma2_hat, cfg);
    let flm = flm_alpha.map(|alpha| flm_detect(&obs, &codebook, sigma2_hat, alpha));

    // Ground-truth bookkeeping for the metrics.
    let mut active: Vec<usize> = users.iter().map(|u| u.code).collect();
    active.sort_unstable();
    active.dedup();
    let missed_codes: Vec<usize> = active
        .iter()
        .copied()
        .filter(|c| !det.codes.contains(c))
        .collect();
    let phantom_codes: Vec<usize> = det
        .codes
        .iter()
        .copied()
        .filter(|c| !active.contains(c))
        .collect();

    let sigma2_true = cfg.noise_variance();
    let truth_pairs: Vec<(usize, f64)> = users.iter().map(|u| (u.code, u.cfo)).collect();
    // Gram inverse of the true rotated-code matrix, for the power theory term.
    let true_gram_diag: Option<Vec<f64>> = {
        let cols: Vec<Vec<Complex64>> = truth_pairs
            .iter()
            .map(|&(code, eps)| rotated_code(cfg, &codebook, code, eps))
            .collect();
        spd_inverse_diag(&CMatrix::from_columns(&cols).gram()).ok()
    };

    let mut matched = Vec::new();
    for (col, &code) in det.codes.iter().enumerate() {
        let holders: Vec<usize> = users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.code == code)
            .map(|(i, _)| i)
            .collect();
        if holders.len() != 1 {
            continue; // phantom or ambiguous (shared) code
        }
        let user = &users[holders[0]];
        let cfo_var_theory = mfe_error_variance(
            cfg,
            &codebook,
            &truth_pairs,
            holders[0],
            user.power,
            sigma2_true,
        )
        .ok();
        let power_var_theory = true_gram_diag.as_ref().map(|diag| {
            power_estimate_variance(user.power, sigma2_true * diag[holders[0]], obs.bins.len())
        });
        matched.push(MatchedCode {
            code,
            cfo_error: det.cfo[col] - user.cfo,
            cfo_var_theory,
            timing_error: timing[col].map(|t| t - user.timing_offset as i64),
            power_error: if power[col].is_nan() {
                None
            } else {
                Some(power[col] - user.power)
            },
            power_var_theory,
        });
    }

    Ok(TrialOutcome {
        users,
        report: RangingReport {
            num_codes: det.num_codes,
            codes: det.codes.clone(),
            cfo: det.cfo.clone(),
            timing,
            power,
            collision,
            noise_power: sigma2_hat,
        },
        flags,
        matched,
        missed_codes,
        phantom_codes,
        code_set_size: m,
        flm,
        detail: TrialDetail {
            eigenvalues: corr.eigenvalues,
            mdl_scores: scores,
            scan_cfo: scan.cfo,
            scan_peaks: scan.peaks,
            amplitudes: amp.map(|a| a.per_bin),
        },
    })
}

/// Commutative-monoid accumulator over trial outcomes: counts and sums only,
/// so partial aggregates merge without order sensitivity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricAccumulator {
    pub trials: u64,
    pub flagged: u64,
    pub active_total: u64,
    pub active_missed: u64,
    pub inactive_total: u64,
    pub inactive_declared: u64,
    pub cfo_count: u64,
    pub cfo_sq_sum: f64,
    pub cfo_quad_sum: f64,
    pub cfo_theory_count: u64,
    pub cfo_theory_var_sum: f64,
    pub timing_count: u64,
    pub timing_errors: u64,
    pub power_count: u64,
    pub power_sq_sum: f64,
    pub power_quad_sum: f64,
    pub power_theory_count: u64,
    pub power_theory_var_sum: f64,
    pub coll_fa_trials: u64,
    pub coll_fa_events: u64,
    pub coll_md_trials: u64,
    pub coll_md_events: u64,
    pub flm_active_total: u64,
    pub flm_active_missed: u64,
    pub flm_inactive_total: u64,
    pub flm_inactive_declared: u64,
    pub flm_power_count: u64,
    pub flm_power_sq_sum: f64,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one trial into the running counts. Timing and power statistics
    /// skip trials that were collision-flagged or hit a chain failure, since
    /// the base station would not act on those estimates.
    pub fn add(&mut self, outcome: &TrialOutcome, mode: CollisionMode, cfg: &ScenarioConfig) {
        self.trials += 1;
        let excluded = outcome.report.collision.collided || outcome.flags.any();
        if excluded {
            self.flagged += 1;
        }

        let active = unique_active_codes(outcome);
        self.active_total += active;
        self.active_missed += outcome.missed_codes.len() as u64;
        self.inactive_total += outcome.code_set_size as u64 - active;
        self.inactive_declared += outcome.phantom_codes.len() as u64;

        let window_lo = cfg.channel_len as i64 - cfg.data_cp as i64 - 1;
        for m in &outcome.matched {
            self.cfo_count += 1;
            self.cfo_sq_sum += m.cfo_error * m.cfo_error;
            self.cfo_quad_sum += m.cfo_error.powi(4);
            if let Some(v) = m.cfo_var_theory {
                self.cfo_theory_count += 1;
                self.cfo_theory_var_sum += v;
            }
            if !excluded {
                if let Some(t) = m.timing_error {
                    self.timing_count += 1;
                    if t > 0 || t < window_lo {
                        self.timing_errors += 1;
                    }
                }
                if let Some(e) = m.power_error {
                    self.power_count += 1;
                    self.power_sq_sum += e * e;
                    self.power_quad_sum += e.powi(4);
                    if let Some(v) = m.power_var_theory {
                        self.power_theory_count += 1;
                        self.power_theory_var_sum += v;
                    }
                }
            }
        }

        match mode {
            CollisionMode::DistinctCodes => {
                self.coll_fa_trials += 1;
                if outcome.report.collision.collided {
                    self.coll_fa_events += 1;
                }
            }
            CollisionMode::ForceSharedCode => {
                self.coll_md_trials += 1;
                if !outcome.report.collision.collided {
                    self.coll_md_events += 1;
                }
            }
        }

        if let Some(flm) = &outcome.flm {
            let mut active_codes: Vec<usize> = outcome.users.iter().map(|u| u.code).collect();
            active_codes.sort_unstable();
            active_codes.dedup();
            self.flm_active_total += active_codes.len() as u64;
            self.flm_inactive_total += (outcome.code_set_size - active_codes.len()) as u64;
            self.flm_active_missed += active_codes
                .iter()
                .filter(|c| !flm.detected_codes.contains(c))
                .count() as u64;
            self.flm_inactive_declared += flm
                .detected_codes
                .iter()
                .filter(|c| !active_codes.contains(c))
                .count() as u64;
            for (&code, &p_hat) in flm.detected_codes.iter().zip(&flm.power) {
                let holders: Vec<&UserGroundTruth> =
                    outcome.users.iter().filter(|u| u.code == code).collect();
                if holders.len() == 1 {
                    let e = p_hat - holders[0].power;
                    self.flm_power_count += 1;
                    self.flm_power_sq_sum += e * e;
                }
            }
        }
    }

    /// Merges two partial aggregates (counts add, sums add).
    pub fn merge(&self, other: &Self) -> Self {
        Self {
            trials: self.trials + other.trials,
            flagged: self.flagged + other.flagged,
            active_total: self.active_total + other.active_total,
            active_missed: self.active_missed + other.active_missed,
            inactive_total: self.inactive_total + other.inactive_total,
            inactive_declared: self.inactive_declared + other.inactive_declared,
            cfo_count: self.cfo_count + other.cfo_count,
            cfo_sq_sum: self.cfo_sq_sum + other.cfo_sq_sum,
            cfo_quad_sum: self.cfo_quad_sum + other.cfo_quad_sum,
            cfo_theory_count: self.cfo_theory_count + other.cfo_theory_count,
            cfo_theory_var_sum: self.cfo_theory_var_sum + other.cfo_theory_var_sum,
            timing_count: self.timing_count + other.timing_count,
            timing_errors: self.timing_errors + other.timing_errors,
            power_count: self.power_count + other.power_count,
            power_sq_sum: self.power_sq_sum + other.power_sq_sum,
            power_quad_sum: self.power_quad_sum + other.power_quad_sum,
            power_theory_count: self.power_theory_count + other.power_theory_count,
            power_theory_var_sum: self.power_theory_var_sum + other.power_theory_var_sum,
            coll_fa_trials: self.coll_fa_trials + other.coll_fa_trials,
            coll_fa_events: self.coll_fa_events + other.coll_fa_events,
            coll_md_trials: self.coll_md_trials + other.coll_md_trials,
            coll_md_events: self.coll_md_events + other.coll_md_events,
            flm_active_total: self.flm_active_total + other.flm_active_total,
            flm_active_missed: self.flm_active_missed + other.flm_active_missed,
            flm_inactive_total: self.flm_inactive_total + other.flm_inactive_total,
            flm_inactive_declared: self.flm_inactive_declared + other.flm_inactive_declared,
            flm_power_count: self.flm_power_count + other.flm_power_count,
            flm_power_sq_sum: self.flm_power_sq_sum + other.flm_power_sq_sum,
        }
    }

    pub fn finalize(&self, swept_value: f64, flm_enabled: bool) -> SweepRow {
        fn rate(events: u64, total: u64) -> f64 {
            if total == 0 {
                f64::NAN
            } else {
                events as f64 / total as f64
            }
        }
        fn rmse(sq_sum: f64, count: u64) -> f64 {
            if count == 0 {
                f64::NAN
            } else {
                (sq_sum / count as f64).sqrt()
            }
        }
        SweepRow {
            swept_value,
            p_md: rate(self.active_missed, self.active_total),
            p_fa: rate(self.inactive_declared, self.inactive_total),
            rmse_eps: rmse(self.cfo_sq_sum, self.cfo_count),
            rmse_eps_theory: rmse(self.cfo_theory_var_sum, self.cfo_theory_count),
            p_timing_err: rate(self.timing_errors, self.timing_count),
            rmse_power: rmse(self.power_sq_sum, self.power_count),
            rmse_power_theory: rmse(self.power_theory_var_sum, self.power_theory_count),
            coll_p_fa: rate(self.coll_fa_events, self.coll_fa_trials),
            coll_p_md: rate(self.coll_md_events, self.coll_md_trials),
            n_trials: self.trials,
            n_flagged: self.flagged,
            flm: if flm_enabled {
                Some(FlmRowMetrics {
                    p_md: rate(self.flm_active_missed, self.flm_active_total),
                    p_fa: rate(self.flm_inactive_declared, self.flm_inactive_total),
                    rmse_power: rmse(self.flm_power_sq_sum, self.flm_power_count),
                })
            } else {
                None
            },
            accumulator: self.clone(),
        }
    }
}

/// Baseline-detector columns, present only when the baseline runs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlmRowMetrics {
    pub p_md: f64,
    pub p_fa: f64,
    pub rmse_power: f64,
}

/// One sweep point's aggregated metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub swept_value: f64,
    pub p_md: f64,
    pub p_fa: f64,
    pub rmse_eps: f64,
    pub rmse_eps_theory: f64,
    pub p_timing_err: f64,
    pub rmse_power: f64,
    pub rmse_power_theory: f64,
    pub coll_p_fa: f64,
    pub coll_p_md: f64,
    pub n_trials: u64,
    pub n_flagged: u64,
    pub flm: Option<FlmRowMetrics>,
    /// Raw counts and sums behind the rates, for standard errors.
    pub accumulator: MetricAccumulator,
}

impl SweepRow {
    fn rate_stderr(p: f64, n: u64) -> f64 {
        if n == 0 || p.is_nan() {
            f64::NAN
        } else {
            (p * (1.0 - p) / n as f64).sqrt()
        }
    }

    /// Delta-method standard error of an RMSE from its second and fourth
    /// moments.
    fn rmse_stderr(sq_sum: f64, quad_sum: f64, count: u64) -> f64 {
        if count == 0 {
            return f64::NAN;
        }
        let n = count as f64;
        let mse = sq_sum / n;
        if mse <= 0.0 {
            return 0.0;
        }
        let var_sq = (quad_sum / n - mse * mse).max(0.0);
        (var_sq / n).sqrt() / (2.0 * mse.sqrt())
    }

    pub fn p_md_stderr(&self) -> f64 {
        Self::rate_stderr(self.p_md, self.accumulator.active_total)
    }

    pub fn p_timing_stderr(&self) -> f64 {
        Self::rate_stderr(self.p_timing_err, self.accumulator.timing_count)
    }

    pub fn rmse_eps_stderr(&self) -> f64 {
        Self::rmse_stderr(
            self.accumulator.cfo_sq_sum,
            self.accumulator.cfo_quad_sum,
            self.accumulator.cfo_count,
        )
    }
}

/// Variable swept by a Monte Carlo batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    SnrDb,
    EpsMax,
    UserCount,
    Eta,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::EpsMax => "eps_max",
            SweepVariable::UserCount => "k",
            SweepVariable::Eta => "eta",
        }
    }
}

/// Full description of a sweep run.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub trials: usize,
    pub base: ScenarioConfig,
    pub users: usize,
    pub collision_mode: CollisionMode,
    pub flm_alpha: Option<f64>,
}

fn build_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool")
}

/// Runs `trials` seeded trials at one configuration point and aggregates
/// them. Aggregation folds the ordered outcome list, so any worker count
/// produces identical results.
pub fn run_point(
    cfg: &ScenarioConfig,
    users: usize,
    mode: CollisionMode,
    trials: usize,
    master_seed: u64,
    workers: usize,
    flm_alpha: Option<f64>,
) -> Result<MetricAccumulator> {
    cfg.validate()?;
    let pool = build_pool(workers);
    let outcomes: Result<Vec<TrialOutcome>> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, users, mode, master_seed, t as u64, flm_alpha))
            .collect()
    });
    let outcomes = outcomes?;
    let mut acc = MetricAccumulator::new();
    for outcome in &outcomes {
        acc.add(outcome, mode, cfg);
    }
    Ok(acc)
}

/// Runs a sweep, one aggregated row per value.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(RangingError::Config(
            "sweep needs at least one value".into(),
        ));
    }
    if spec.trials == 0 {
        return Err(RangingError::Config("trials per point must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let mut cfg = spec.base.clone();
        let mut users = spec.users;
        match spec.variable {
            SweepVariable::SnrDb => cfg.snr_db = value,
            SweepVariable::EpsMax => cfg.max_cfo = value,
            SweepVariable::Eta => cfg.collision_threshold = value,
            SweepVariable::UserCount => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(RangingError::Config(format!(
                        "swept user count must be a positive integer, got {value}"
                    )));
                }
                users = value as usize;
            }
        }
        let acc = run_point(
            &cfg,
            users,
            spec.collision_mode,
            spec.trials,
            cfg.seed,
            workers,
            spec.flm_alpha,
        )?;
        rows.push(acc.finalize(value, spec.flm_alpha.is_some()));
    }
    Ok(rows)
}

/// Renders sweep rows as CSV with an audit comment carrying the resolved
/// configuration and master seed.
pub fn render_sweep_csv(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# config: {} | sweep={} values={} k={} trials={} collision_mode={} master_seed={}\n",
        spec.base.summary(),
        spec.variable.name(),
        spec.values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
        spec.users,
        spec.trials,
        match spec.collision_mode {
            CollisionMode::DistinctCodes => "distinct",
            CollisionMode::ForceSharedCode => "shared",
        },
        spec.base.seed,
    ));
    out.push_str("swept_value,p_md,p_fa,rmse_eps,rmse_eps_theory,p_timing_err,rmse_power,rmse_power_theory,coll_p_fa,coll_p_md,n_trials,n_flagged");
    if spec.flm_alpha.is_some() {
        out.push_str(",flm_p_md,flm_p_fa,flm_rmse_power");
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.swept_value,
            row.p_md,
            row.p_fa,
            row.rmse_eps,
            row.rmse_eps_theory,
            row.p_timing_err,
            row.rmse_power,
            row.rmse_power_theory,
            row.coll_p_fa,
            row.coll_p_md,
            row.n_trials,
            row.n_flagged,
        ));
        if let Some(flm) = &row.flm {
            out.push_str(&format!(",{},{},{}", flm.p_md, flm.p_fa, flm.rmse_power));
        }
        out.push('\n');
    }
    out
}

/// One threshold point of the collision-threshold design curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaRow {
    pub eta: f64,
    pub p_fa: f64,
    pub p_md: f64,
    pub n_trials: u64,
}

/// Sweeps the collision threshold over two fixed scenarios: false alarms are
/// measured with two users on distinct codes, mis-detections with three users
/// of which two share a code. The residual statistic does not depend on the
/// threshold, so each scenario runs once and every threshold is applied to
/// the same statistics.
pub fn run_eta_sweep(
    cfg: &ScenarioConfig,
    etas: &[f64],
    trials: usize,
    workers: usize,
) -> Result<Vec<EtaRow>> {
    cfg.validate()?;
    if etas.is_empty() {
        return Err(RangingError::Config("eta sweep needs values".into()));
    }
    if trials == 0 {
        return Err(RangingError::Config("trials per point must be >= 1".into()));
    }
    let pool = build_pool(workers);
    let collect = |users: usize, mode: CollisionMode, stream_base: u64| -> Result<Vec<f64>> {
        pool.install(|| {
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    run_trial(cfg, users, mode, cfg.seed, stream_base + t as u64, None)
                        .map(|o| o.report.collision.statistic)
                })
                .collect()
        })
    };
    let fa_stats = collect(2, CollisionMode::DistinctCodes, 0)?;
    let md_stats = collect(3, CollisionMode::ForceSharedCode, trials as u64)?;
    Ok(etas
        .iter()
        .map(|&eta| EtaRow {
            eta,
            p_fa: fa_stats.iter().filter(|&&d| d > eta).count() as f64 / trials as f64,
            p_md: md_stats.iter().filter(|&&d| d <= eta).count() as f64 / trials as f64,
            n_trials: trials as u64,
        })
        .collect())
}

pub fn render_eta_csv(cfg: &ScenarioConfig, trials: usize, rows: &[EtaRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# config: {} | sweep=eta trials={} fa_scenario=k2_distinct md_scenario=k3_shared master_seed={}\n",
        cfg.summary(),
        trials,
        cfg.seed,
    ));
    out.push_str("eta,p_fa,p_md,n_trials\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.eta, row.p_fa, row.p_md, row.n_trials
        ));
    }
    out
}

/// Plain-text report of one trial with every intermediate quantity, for
/// debugging the multistage pipeline. Stable formatting: identical inputs
/// render identical reports.
pub fn render_trial_report(
    cfg: &ScenarioConfig,
    outcome: &TrialOutcome,
    master_seed: u64,
    stream: u64,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "trial: master_seed={master_seed} stream={stream}\n"
    ));
    out.push_str(&format!("config: {}\n", cfg.summary()));
    out.push_str("ground_truth:\n");
    for (i, u) in outcome.users.iter().enumerate() {
        out.push_str(&format!(
            "  user[{i}]: code={} theta={} eps={:.9e} power={:.9e} channel_order={}\n",
            u.code, u.timing_offset, u.cfo, u.power, u.channel_order
        ));
    }
    out.push_str(&format!(
        "noise_power_estimate: {:.9e}\n",
        outcome.report.noise_power
    ));
    out.push_str(&format!(
        "eigenvalues: [{}]\n",
        join(&outcome.detail.eigenvalues)
    ));
    out.push_str(&format!(
        "mdl_scores: [{}] -> k_hat={}\n",
        join(&outcome.detail.mdl_scores),
        outcome.report.num_codes
    ));
    out.push_str("music:\n");
    for (k, (&eps, &peak)) in outcome
        .detail
        .scan_cfo
        .iter()
        .zip(&outcome.detail.scan_peaks)
        .enumerate()
    {
        out.push_str(&format!(
            "  code {}: eps_hat={:.9e} peak={:.9e}\n",
            k + 1,
            eps,
            peak
        ));
    }
    out.push_str(&format!("detected_codes: {:?}\n", outcome.report.codes));
    match &outcome.detail.amplitudes {
        Some(amps) => {
            out.push_str("amplitudes:\n");
            for (bin, s) in amps.iter().enumerate() {
                let entries: Vec<String> = s
                    .iter()
                    .map(|z| format!("{:.9e}{:+.9e}j", z.re, z.im))
                    .collect();
                out.push_str(&format!("  bin[{bin}]: [{}]\n", entries.join(", ")));
            }
        }
        None => out.push_str("amplitudes: unavailable\n"),
    }
    out.push_str("timing:\n");
    for (code, t) in outcome.report.codes.iter().zip(&outcome.report.timing) {
        match t {
            Some(t) => out.push_str(&format!("  code {code}: {t}\n")),
            None => out.push_str(&format!("  code {code}: undefined\n")),
        }
    }
    out.push_str("power:\n");
    for (code, p) in outcome.report.codes.iter().zip(&outcome.report.power) {
        out.push_str(&format!("  code {code}: {p:.9e}\n"));
    }
    out.push_str(&format!(
        "collision: delta_hat={:.9e} eta={} -> {}\n",
        outcome.report.collision.statistic,
        outcome.report.collision.threshold,
        outcome.report.collision.collided
    ));
    out.push_str(&format!(
        "flags: no_noise_subspace={} near_collinear={} degenerate_timing={}\n",
        outcome.flags.no_noise_subspace,
        outcome.flags.near_collinear,
        outcome.flags.degenerate_timing
    ));
    if let Some(flm) = &outcome.flm {
        out.push_str(&format!(
            "flm: statistics=[{}] detected={:?} alpha={}\n",
            join(&flm.statistics),
            flm.detected_codes,
            flm.threshold_factor
        ));
    }
    out
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.9e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn unique_active_codes(outcome: &TrialOutcome) -> u64 {
    let mut active: Vec<usize> = outcome.users.iter().map(|u| u.code).collect();
    active.sort_unstable();
    active.dedup();
    active.len() as u64
}
