//! Subspace stage: code counting, noise power, CFO estimation, code detection.
//!
//! The slot observations on one subchannel form snapshots of rotated codes in
//! white noise, so the receiver first estimates how many codes are active by
//! applying the minimum description length rule to the eigenvalues of the
//! sample correlation matrix. A MUSIC grid search over candidate CFOs then
//! scores every code against the estimated noise subspace; the codes with the
//! largest peak metrics are declared active and the peak locations are their
//! CFO estimates.

use num_complex::Complex64;

use crate::channel::ObservationSet;
use crate::error::{RangingError, Result};
use crate::linalg::{hermitian_evd, inner, norm_sqr, CMatrix};
use crate::scenario::{rotated_code, Codebook, ScenarioConfig};

/// Floor applied to eigenvalues before logarithms and to the MUSIC metric
/// denominator before inversion.
const EIGENVALUE_FLOOR: f64 = 1e-30;

/// Sample correlation matrix of the slot observations with its
/// eigendecomposition (eigenvalues descending).
#[derive(Debug, Clone)]
pub struct CorrelationEstimate {
    pub matrix: CMatrix,
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, ordered like `eigenvalues`.
    pub eigenvectors: CMatrix,
}

impl CorrelationEstimate {
    /// Basis of the estimated noise subspace: eigenvectors of the `M - k`
    /// smallest eigenvalues. Fails when no dimension is left for noise.
    pub fn noise_subspace(&self, active_codes: usize) -> Result<CMatrix> {
        let m = self.eigenvalues.len();
        if active_codes >= m {
            return Err(RangingError::NoNoiseSubspace);
        }
        let cols: Vec<Vec<Complex64>> = (active_codes..m)
            .map(|j| self.eigenvectors.column(j))
            .collect();
        Ok(CMatrix::from_columns(&cols))
    }
}

/// Averages the outer products `y y^H` over all ranging bins and decomposes
/// the result.
pub fn sample_correlation(obs: &ObservationSet) -> Result<CorrelationEstimate> {
    let m = obs.symbols();
    assert!(!obs.bins.is_empty(), "observation set has no ranging bins");
    let mut r = CMatrix::zeros(m, m);
    for bin in &obs.bins {
        for a in 0..m {
            for b in a..m {
                r[(a, b)] += bin[a] * bin[b].conj();
            }
        }
    }
    let scale = 1.0 / obs.bins.len() as f64;
    for a in 0..m {
        for b in a..m {
            let v = r[(a, b)] * scale;
            r[(a, b)] = v;
            r[(b, a)] = v.conj();
        }
    }
    let (eigenvalues, eigenvectors) = hermitian_evd(&r)?;
    Ok(CorrelationEstimate {
        matrix: r,
        eigenvalues,
        eigenvectors,
    })
}

/// Noise power estimate from the null subcarriers at the band edges: the mean
/// of `|Y|^2` over all guard bins and symbols.
pub fn estimate_noise_power(obs: &ObservationSet) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for bin in &obs.guard_bins {
        for z in bin {
            sum += z.norm_sqr();
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    sum / count as f64
}

/// MDL objective for every candidate order `0..M-1`, after substituting the
/// external noise power estimate for the smallest eigenvalue.
pub fn mdl_scores(eigenvalues: &[f64], noise_power: f64, samples: usize) -> Vec<f64> {
    let m = eigenvalues.len();
    let mut lambda = eigenvalues.to_vec();
    // Eigensolver dust (relative magnitude ~1e-16) must act like the exact
    // zeros it stands for, or the log-spread of the tail swamps the noiseless
    // likelihood ratio.
    let dust = lambda.first().copied().unwrap_or(0.0).max(0.0) * 1e-14;
    for v in lambda.iter_mut() {
        if *v < dust {
            *v = 0.0;
        }
    }
    if let Some(last) = lambda.last_mut() {
        *last = noise_power;
    }
    // Re-sorting keeps the likelihood ratio well defined if the substitute
    // exceeds the next-smallest eigenvalue.
    lambda.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for v in lambda.iter_mut() {
        *v = v.max(EIGENVALUE_FLOOR);
    }
    let qv = samples as f64;
    (0..m)
        .map(|k| {
            let tail = &lambda[k..];
            let len = tail.len() as f64;
            let log_geo = tail.iter().map(|v| v.ln()).sum::<f64>() / len;
            let arith = tail.iter().sum::<f64>() / len;
            let log_rho = log_geo - arith.ln();
            0.5 * (k * (2 * m - k)) as f64 * qv.ln() - qv * len * log_rho
        })
        .collect()
}

/// Estimated number of active codes: the minimizer of the MDL objective over
/// `0..M-1` (ties go to the smaller order).
pub fn mdl_order(eigenvalues: &[f64], noise_power: f64, samples: usize) -> usize {
    let scores = mdl_scores(eigenvalues, noise_power, samples);
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = k;
        }
    }
    best
}

/// MUSIC metric for one code at one trial CFO: inverse squared projection of
/// the rotated code onto the noise subspace (floored before inversion).
pub fn music_metric(
    noise_basis: &CMatrix,
    cfg: &ScenarioConfig,
    codebook: &Codebook,
    code: usize,
    eps: f64,
) -> Result<f64> {
    if noise_basis.cols() == 0 {
        return Err(RangingError::NoNoiseSubspace);
    }
    let candidate = rotated_code(cfg, codebook, code, eps);
    let projection = noise_basis.adjoint_matvec(&candidate);
    Ok(1.0 / norm_sqr(&projection).max(EIGENVALUE_FLOOR))
}

/// Trial CFO grid: `n_eps_grid` uniform points spanning
/// `[-eps_scan, +eps_scan]` with
/// `eps_scan = min(eps_max, acquisition_range - nominal step)`, which keeps
/// the search strictly inside the identifiability region.
pub fn cfo_grid(cfg: &ScenarioConfig) -> Vec<f64> {
    let bound = cfg.acquisition_range();
    let nominal_step = 2.0 * bound / cfg.cfo_grid_size as f64;
    let scan = cfg.max_cfo.min(bound - nominal_step);
    let n = cfg.cfo_grid_size;
    (0..n)
        .map(|i| -scan + 2.0 * scan * i as f64 / (n - 1) as f64)
        .collect()
}

/// Per-code grid-search result: best CFO and the metric peak there.
#[derive(Debug, Clone)]
pub struct MfeScan {
    /// Grid maximizer per code (1-based position `k-1`).
    pub cfo: Vec<f64>,
    /// Metric value at the maximizer per code.
    pub peaks: Vec<f64>,
}

/// Runs the MUSIC grid search for the complete code set.
///
/// This is the dominant per-subchannel cost: grid size x code count x
/// noise-subspace dimension metric evaluations, each a handful of length-`M`
/// inner products.
pub fn mfe_scan(
    noise_basis: &CMatrix,
    cfg: &ScenarioConfig,
    codebook: &Codebook,
) -> Result<MfeScan> {
    if noise_basis.cols() == 0 {
        return Err(RangingError::NoNoiseSubspace);
    }
    let grid = cfo_grid(cfg);
    let m = codebook.size();
    let mut cfo = vec![0.0; m];
    let mut peaks = vec![0.0; m];
    for k in 1..=m {
        let mut best_eps = grid[0];
        let mut best_val = f64::NEG_INFINITY;
        for &eps in &grid {
            let val = music_metric(noise_basis, cfg, codebook, k, eps)?;
            if val > best_val {
                best_val = val;
                best_eps = eps;
            }
        }
        cfo[k - 1] = best_eps;
        peaks[k - 1] = best_val;
    }
    Ok(MfeScan { cfo, peaks })
}

/// Output of the code detector.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    /// Estimated number of active codes.
    pub num_codes: usize,
    /// Detected code indices (1-based), ascending.
    pub codes: Vec<usize>,
    /// CFO estimate per detected code, aligned with `codes`.
    pub cfo: Vec<f64>,
    /// Metric peak for every code in the set (index `k-1`).
    pub peaks: Vec<f64>,
    /// Grid maximizer for every code in the set (index `k-1`).
    pub peak_cfo: Vec<f64>,
    /// Noise power estimate used downstream.
    pub noise_power: f64,
}

/// Declares the `num_codes` codes with the largest peak metrics active; ties
/// break toward the lowest code index.
pub fn mcd_select(scan: &MfeScan, num_codes: usize, noise_power: f64) -> DetectionResult {
    let m = scan.peaks.len();
    assert!(num_codes < m, "detector needs a nonempty noise subspace");
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        scan.peaks[b]
            .partial_cmp(&scan.peaks[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order[..num_codes].iter().map(|&i| i + 1).collect();
    selected.sort_unstable();
    let cfo = selected.iter().map(|&k| scan.cfo[k - 1]).collect();
    DetectionResult {
        num_codes,
        codes: selected,
        cfo,
        peaks: scan.peaks.clone(),
        peak_cfo: scan.cfo.clone(),
        noise_power,
    }
}

/// Predicted CFO error variance for one active code under the asymptotic
/// analysis of the MUSIC estimator:
/// `sigma^2 N^2 / (8 pi^2 QV N_T^2 P_k d_k^H C_perp d_k)` with
/// `d_k(m) = m c_k(m) e^(j 2 pi m eps_k N_T / N)` and `C_perp` the projector
/// onto the complement of the rotated-code span.
///
/// This is a reporting utility for theory curves; the estimator path never
/// calls it.
pub fn mfe_error_variance(
    cfg: &ScenarioConfig,
    codebook: &Codebook,
    active: &[(usize, f64)],
    target: usize,
    power: f64,
    noise_variance: f64,
) -> Result<f64> {
    let m = cfg.symbols_per_slot;
    assert!(target < active.len());
    if active.len() >= m {
        return Err(RangingError::NoNoiseSubspace);
    }
    let columns: Vec<Vec<Complex64>> = active
        .iter()
        .map(|&(code, eps)| rotated_code(cfg, codebook, code, eps))
        .collect();
    let code_matrix = CMatrix::from_columns(&columns);
    let gram = code_matrix.gram();
    let chol = crate::linalg::cholesky_lower(&gram)?;

    let (code, eps) = active[target];
    let d: Vec<Complex64> = rotated_code(cfg, codebook, code, eps)
        .into_iter()
        .enumerate()
        .map(|(sym, g)| g * sym as f64)
        .collect();
    // d^H C_perp d = ||d||^2 - b^H (C^H C)^{-1} b with b = C^H d.
    let b = code_matrix.adjoint_matvec(&d);
    let x = crate::linalg::cholesky_solve(&chol, &b);
    let quad = norm_sqr(&d) - inner(&b, &x).re;
    if quad <= 0.0 {
        return Err(RangingError::SingularGram);
    }
    let qv = cfg.bins_per_subchannel() as f64;
    let n = cfg.dft_size as f64;
    let nt = cfg.extended_symbol_len() as f64;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    Ok(noise_variance * n * n / (8.0 * pi2 * qv * nt * nt * power * quad))
}
