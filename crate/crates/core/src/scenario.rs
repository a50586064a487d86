//! System configuration, ranging subcarrier layout, and code sets.
//!
//! One ranging subchannel consists of `Q` tiles of `V` adjacent subcarriers,
//! uniformly spaced across the used band. Every ranging opportunity transmits
//! one length-`M` unit-modulus code in parallel over the subchannel, repeated
//! across the `M` symbols of the slot.

use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt;

use crate::error::{RangingError, Result};

/// Orthogonal code set the ranging codes are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeFamily {
    Fourier,
    WalshHadamard,
}

impl fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodeFamily::Fourier => write!(f, "fourier"),
            CodeFamily::WalshHadamard => write!(f, "walsh_hadamard"),
        }
    }
}

/// Full simulation and receiver configuration.
///
/// Config files are flat `key = value` text with the keys listed in
/// [`ScenarioConfig::KEYS`]; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// DFT size (key `N`).
    pub dft_size: usize,
    /// Null subcarriers per spectrum edge (key `N_0`).
    pub guard_subcarriers: usize,
    /// Tiles per ranging subchannel (key `Q`).
    pub tiles_per_subchannel: usize,
    /// Adjacent subcarriers per tile (key `V`).
    pub tile_width: usize,
    /// Number of ranging subchannels (key `R`).
    pub num_subchannels: usize,
    /// OFDMA symbols per ranging slot, i.e. code length (key `M`).
    pub symbols_per_slot: usize,
    /// Cyclic prefix length during ranging, samples (key `N_G`).
    pub ranging_cp: usize,
    /// Cyclic prefix length during data sections, samples (key `N_GD`).
    pub data_cp: usize,
    /// Design channel length in taps (key `L`).
    pub channel_len: usize,
    /// Maximum timing offset in samples (key `theta_max`).
    pub max_timing_offset: usize,
    /// SNR defined as `1/sigma^2`, in dB; `inf` disables noise (key `snr_db`).
    pub snr_db: f64,
    /// Maximum normalized CFO in subcarrier spacings (key `eps_max`).
    pub max_cfo: f64,
    /// Number of CFO trial values in the MUSIC grid search (key `n_eps_grid`).
    pub cfo_grid_size: usize,
    /// Collision detection threshold (key `eta`).
    pub collision_threshold: f64,
    /// Master PRNG seed (key `seed`).
    pub seed: u64,
    /// Code family (key `code_family`).
    pub code_family: CodeFamily,
    /// Index of the simulated subchannel (key `subchannel`).
    pub subchannel: usize,
}

impl Default for ScenarioConfig {
    /// IEEE 802.16e-style reference configuration.
    fn default() -> Self {
        Self {
            dft_size: 1024,
            guard_subcarriers: 80,
            tiles_per_subchannel: 4,
            tile_width: 2,
            num_subchannels: 18,
            symbols_per_slot: 4,
            ranging_cp: 128,
            data_cp: 48,
            channel_len: 14,
            max_timing_offset: 114,
            snr_db: 16.0,
            max_cfo: 0.05,
            cfo_grid_size: 400,
            collision_threshold: 0.05,
            seed: 42,
            code_family: CodeFamily::Fourier,
            subchannel: 0,
        }
    }
}

impl ScenarioConfig {
    /// Config file keys, in serialization order.
    pub const KEYS: [&'static str; 17] = [
        "N",
        "N_0",
        "Q",
        "V",
        "R",
        "M",
        "N_G",
        "N_GD",
        "L",
        "theta_max",
        "snr_db",
        "eps_max",
        "n_eps_grid",
        "eta",
        "seed",
        "code_family",
        "subchannel",
    ];

    /// Number of modulated subcarriers `N - 2 N_0`.
    pub fn used_subcarriers(&self) -> usize {
        self.dft_size.saturating_sub(2 * self.guard_subcarriers)
    }

    /// Cyclically extended symbol length `N + N_G`.
    pub fn extended_symbol_len(&self) -> usize {
        self.dft_size + self.ranging_cp
    }

    /// Linear noise variance `10^(-snr_db/10)`; zero when noise is disabled.
    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    /// Ranging subcarriers per subchannel (`Q V`).
    pub fn bins_per_subchannel(&self) -> usize {
        self.tiles_per_subchannel * self.tile_width
    }

    /// Largest CFO magnitude for which rotated codes stay distinguishable:
    /// `N / (2 M (N + N_G))`.
    pub fn acquisition_range(&self) -> f64 {
        self.dft_size as f64
            / (2.0 * self.symbols_per_slot as f64 * self.extended_symbol_len() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let n_u = self.dft_size as i64 - 2 * self.guard_subcarriers as i64;
        if n_u <= 0 {
            return Err(RangingError::Config(format!(
                "N - 2*N_0 must be positive (N={}, N_0={})",
                self.dft_size, self.guard_subcarriers
            )));
        }
        let n_u = n_u as usize;
        if self.guard_subcarriers == 0 {
            return Err(RangingError::Config(
                "N_0 must be at least 1 (guard bins feed the noise power estimate)".into(),
            ));
        }
        if self.tiles_per_subchannel == 0 || self.tile_width == 0 || self.num_subchannels == 0 {
            return Err(RangingError::Config("Q, V and R must be positive".into()));
        }
        if !n_u.is_multiple_of(self.tiles_per_subchannel) {
            return Err(RangingError::Config(format!(
                "N_U = {n_u} must be divisible by Q = {}",
                self.tiles_per_subchannel
            )));
        }
        if !(n_u / self.tiles_per_subchannel).is_multiple_of(self.num_subchannels) {
            return Err(RangingError::Config(format!(
                "N_U/Q = {} must be divisible by R = {}",
                n_u / self.tiles_per_subchannel,
                self.num_subchannels
            )));
        }
        if self.tile_width > n_u / (self.tiles_per_subchannel * self.num_subchannels) {
            return Err(RangingError::Config(format!(
                "V = {} exceeds the subchannel spacing N_U/(Q R) = {}; tiles would overlap",
                self.tile_width,
                n_u / (self.tiles_per_subchannel * self.num_subchannels)
            )));
        }
        if self.symbols_per_slot < 2 || !self.symbols_per_slot.is_power_of_two() {
            return Err(RangingError::Config(format!(
                "M = {} must be a power of two (and at least 2)",
                self.symbols_per_slot
            )));
        }
        if self.ranging_cp < self.max_timing_offset + self.channel_len {
            return Err(RangingError::Config(format!(
                "N_G = {} violates the quasi-synchronous condition N_G >= theta_max + L = {}",
                self.ranging_cp,
                self.max_timing_offset + self.channel_len
            )));
        }
        if self.channel_len == 0 {
            return Err(RangingError::Config("L must be at least 1".into()));
        }
        if self.max_cfo.is_nan() || self.max_cfo < 0.0 {
            return Err(RangingError::Config("eps_max must be non-negative".into()));
        }
        let bound = self.acquisition_range();
        if self.max_cfo >= bound {
            return Err(RangingError::Config(format!(
                "eps_max = {} is outside the acquisition range: |eps| < N/(2 M (N+N_G)) = {:.6}",
                self.max_cfo, bound
            )));
        }
        if self.cfo_grid_size < 2 {
            return Err(RangingError::Config("n_eps_grid must be at least 2".into()));
        }
        if self.subchannel >= self.num_subchannels {
            return Err(RangingError::Config(format!(
                "subchannel = {} must be < R = {}",
                self.subchannel, self.num_subchannels
            )));
        }
        if self.collision_threshold.is_nan() || self.collision_threshold < 0.0 {
            return Err(RangingError::Config("eta must be non-negative".into()));
        }
        if self.snr_db.is_nan() {
            return Err(RangingError::Config("snr_db must not be NaN".into()));
        }
        Ok(())
    }

    /// Subcarrier indices of tile `q` in subchannel `r`:
    /// `q N_U/Q + r N_U/(Q R) + N_0 + v` for `v = 0..V-1`.
    pub fn tile_indices(&self, r: usize, q: usize) -> Result<Vec<usize>> {
        if r >= self.num_subchannels {
            return Err(RangingError::Range(format!(
                "subchannel index {r} out of range (R = {})",
                self.num_subchannels
            )));
        }
        if q >= self.tiles_per_subchannel {
            return Err(RangingError::Range(format!(
                "tile index {q} out of range (Q = {})",
                self.tiles_per_subchannel
            )));
        }
        let n_u = self.used_subcarriers();
        let base = q * n_u / self.tiles_per_subchannel
            + r * n_u / (self.tiles_per_subchannel * self.num_subchannels)
            + self.guard_subcarriers;
        Ok((0..self.tile_width).map(|v| base + v).collect())
    }

    /// All ranging subcarriers of the configured subchannel, tile by tile.
    pub fn ranging_subcarriers(&self) -> Vec<usize> {
        (0..self.tiles_per_subchannel)
            .flat_map(|q| self.tile_indices(self.subchannel, q).expect("validated"))
            .collect()
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| {
                RangingError::Config(format!("cannot parse value `{value}` for key `{key}`"))
            })
        }
        match key {
            "N" => self.dft_size = parse(key, value)?,
            "N_0" => self.guard_subcarriers = parse(key, value)?,
            "Q" => self.tiles_per_subchannel = parse(key, value)?,
            "V" => self.tile_width = parse(key, value)?,
            "R" => self.num_subchannels = parse(key, value)?,
            "M" => self.symbols_per_slot = parse(key, value)?,
            "N_G" => self.ranging_cp = parse(key, value)?,
            "N_GD" => self.data_cp = parse(key, value)?,
            "L" => self.channel_len = parse(key, value)?,
            "theta_max" => self.max_timing_offset = parse(key, value)?,
            "snr_db" => self.snr_db = parse(key, value)?,
            "eps_max" => self.max_cfo = parse(key, value)?,
            "n_eps_grid" => self.cfo_grid_size = parse(key, value)?,
            "eta" => self.collision_threshold = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "code_family" => {
                self.code_family = match value.trim().to_ascii_lowercase().as_str() {
                    "fourier" => CodeFamily::Fourier,
                    "walsh_hadamard" | "walsh-hadamard" => CodeFamily::WalshHadamard,
                    other => {
                        return Err(RangingError::Config(format!(
                            "unknown code_family `{other}` (expected fourier or walsh_hadamard)"
                        )))
                    }
                }
            }
            "subchannel" => self.subchannel = parse(key, value)?,
            other => {
                return Err(RangingError::Config(format!(
                    "unknown config key `{other}`"
                )));
            }
        }
        Ok(())
    }

    /// Parses a flat `key = value` config file. Lines starting with `#` and
    /// blank lines are ignored; unknown keys are an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                RangingError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Serializes in the config file format (round-trips through
    /// [`ScenarioConfig::from_text`]).
    pub fn to_text(&self) -> String {
        format!(
            "N = {}\nN_0 = {}\nQ = {}\nV = {}\nR = {}\nM = {}\nN_G = {}\nN_GD = {}\nL = {}\n\
             theta_max = {}\nsnr_db = {}\neps_max = {}\nn_eps_grid = {}\neta = {}\nseed = {}\n\
             code_family = {}\nsubchannel = {}\n",
            self.dft_size,
            self.guard_subcarriers,
            self.tiles_per_subchannel,
            self.tile_width,
            self.num_subchannels,
            self.symbols_per_slot,
            self.ranging_cp,
            self.data_cp,
            self.channel_len,
            self.max_timing_offset,
            self.snr_db,
            self.max_cfo,
            self.cfo_grid_size,
            self.collision_threshold,
            self.seed,
            self.code_family,
            self.subchannel,
        )
    }

    /// One-line rendering used in CSV audit comments.
    pub fn summary(&self) -> String {
        self.to_text()
            .trim_end()
            .replace('\n', " ")
            .replace(" = ", "=")
    }
}

/// An orthogonal set of `M` unit-modulus codes of length `M` (one per row).
#[derive(Debug, Clone)]
pub struct Codebook {
    codes: Vec<Vec<Complex64>>,
}

impl Codebook {
    /// Builds the family requested by the configuration.
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        match cfg.code_family {
            CodeFamily::Fourier => Ok(Self::fourier(cfg.symbols_per_slot)),
            CodeFamily::WalshHadamard => Self::walsh_hadamard(cfg.symbols_per_slot),
        }
    }

    /// Fourier basis of order `m`: code `k` has entries `exp(j 2 pi n (k-1)/m)`.
    pub fn fourier(m: usize) -> Self {
        let codes = (1..=m)
            .map(|k| {
                (0..m)
                    .map(|n| {
                        let phase = 2.0 * PI * (n as f64) * ((k - 1) as f64) / m as f64;
                        Complex64::new(phase.cos(), phase.sin())
                    })
                    .collect()
            })
            .collect();
        Self { codes }
    }

    /// Sylvester-construction Walsh-Hadamard set; `m` must be a power of two.
    pub fn walsh_hadamard(m: usize) -> Result<Self> {
        if m == 0 || !m.is_power_of_two() {
            return Err(RangingError::Config(format!(
                "Walsh-Hadamard codes need a power-of-two length, got {m}"
            )));
        }
        let mut rows: Vec<Vec<f64>> = vec![vec![1.0]];
        while rows.len() < m {
            let half = rows;
            let mut next = Vec::with_capacity(half.len() * 2);
            for row in &half {
                let mut r: Vec<f64> = row.clone();
                r.extend(row.iter().copied());
                next.push(r);
            }
            for row in &half {
                let mut r: Vec<f64> = row.clone();
                r.extend(row.iter().map(|x| -x));
                next.push(r);
            }
            rows = next;
        }
        let codes = rows
            .into_iter()
            .map(|row| row.into_iter().map(|x| Complex64::new(x, 0.0)).collect())
            .collect();
        Ok(Self { codes })
    }

    pub fn size(&self) -> usize {
        self.codes.len()
    }

    /// Code `k` with 1-based index, matching the indices carried in reports.
    pub fn code(&self, k: usize) -> &[Complex64] {
        &self.codes[k - 1]
    }
}

/// Diagonal of the CFO rotation: `exp(j 2 pi m eps (N+N_G)/N)` for
/// `m = 0..M-1`.
pub fn cfo_rotation(cfg: &ScenarioConfig, eps: f64) -> Vec<Complex64> {
    let ratio = cfg.extended_symbol_len() as f64 / cfg.dft_size as f64;
    (0..cfg.symbols_per_slot)
        .map(|m| {
            let phase = 2.0 * PI * m as f64 * eps * ratio;
            Complex64::new(phase.cos(), phase.sin())
        })
        .collect()
}

/// A code as seen through a CFO: elementwise product of the rotation diagonal
/// with code `k`.
pub fn rotated_code(
    cfg: &ScenarioConfig,
    codebook: &Codebook,
    k: usize,
    eps: f64,
) -> Vec<Complex64> {
    cfo_rotation(cfg, eps)
        .into_iter()
        .zip(codebook.code(k))
        .map(|(r, &c)| r * c)
        .collect()
}
