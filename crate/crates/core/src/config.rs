//! System model parameters and their validation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TpeError};
use crate::linalg::CMat;
use num_complex::Complex64;

/// Largest TPE order accepted by default.
pub const MAX_ORDER: usize = 8;

/// Bound on `p_k · K`; only meant to catch gross misconfiguration.
pub const POWER_SCALING_GUARD: f64 = 100.0;

/// Dimensions, power budget, noise level, CSI quality and TPE order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Base-station antennas.
    #[serde(rename = "M")]
    pub m: usize,
    /// Single-antenna users.
    #[serde(rename = "K")]
    pub k: usize,
    /// Total transmit power (linear).
    #[serde(rename = "P")]
    pub p: f64,
    pub sigma2: f64,
    /// Gauss-Markov CSI error parameter.
    pub tau: f64,
    /// TPE order (number of polynomial terms).
    #[serde(rename = "J")]
    pub j: usize,
}

impl SystemConfig {
    /// Configuration with `σ² = 1` and `P = 10^(snr_db/10)`.
    pub fn from_snr_db(m: usize, k: usize, snr_db: f64, tau: f64, j: usize) -> Self {
        SystemConfig { m, k, p: db_to_linear(snr_db), sigma2: 1.0, tau, j }
    }

    /// Transmit power to noise ratio `P/σ²`.
    pub fn rho(&self) -> f64 {
        self.p / self.sigma2
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.p = db_to_linear(snr_db) * self.sigma2;
        self
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Per-user power weights, the diagonal of the allocation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    p: Vec<f64>,
    /// Number of equal-size contiguous user classes (1 for uniform).
    classes: usize,
}

impl PowerAllocation {
    /// Allocation from explicit weights, treated as a single class.
    pub fn from_weights(p: Vec<f64>) -> Self {
        PowerAllocation { p, classes: 1 }
    }

    pub fn weights(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `tr(P)`.
    pub fn trace(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn sqrt_weights(&self) -> Vec<f64> {
        self.p.iter().map(|v| v.sqrt()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    /// Class index of user `k` (contiguous equal-size blocks).
    pub fn class_of(&self, k: usize) -> usize {
        k / (self.p.len() / self.classes)
    }
}

/// `p_k = P/K` for every user.
pub fn uniform_power(p: f64, k: usize) -> Result<PowerAllocation> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(TpeError::InvalidConfig(format!("total power must be positive, got {p}")));
    }
    if k == 0 {
        return Err(TpeError::InvalidConfig("K must be at least 1".into()));
    }
    Ok(PowerAllocation { p: vec![p / k as f64; k], classes: 1 })
}

/// Users split into equal contiguous classes with `p_k = c_class(k) / K`.
pub fn class_power(class_weights: &[f64], k: usize) -> Result<PowerAllocation> {
    let n = class_weights.len();
    if n == 0 {
        return Err(TpeError::InvalidConfig("at least one class weight is required".into()));
    }
    if k == 0 || !k.is_multiple_of(n) {
        return Err(TpeError::InvalidConfig(format!("K={k} is not divisible by the number of classes ({n})")));
    }
    if let Some((i, &c)) = class_weights.iter().enumerate().find(|(_, &c)| !(c > 0.0) || !c.is_finite()) {
        return Err(TpeError::NonpositivePower { index: i, value: c });
    }
    let per = k / n;
    let p = (0..k).map(|u| class_weights[u / per] / k as f64).collect();
    Ok(PowerAllocation { p, classes: n })
}

/// Checks every model invariant and returns the pair unchanged.
pub fn validate_config(cfg: SystemConfig, alloc: PowerAllocation) -> Result<(SystemConfig, PowerAllocation)> {
    if cfg.m == 0 || cfg.k == 0 {
        return Err(TpeError::InvalidConfig("M and K must be at least 1".into()));
    }
    if cfg.k > cfg.m {
        return Err(TpeError::InvalidConfig(format!("K={} exceeds M={} (K ≤ M policy)", cfg.k, cfg.m)));
    }
    if !(0.0..=1.0).contains(&cfg.tau) {
        return Err(TpeError::InvalidTau(cfg.tau));
    }
    if !(cfg.p > 0.0) || !cfg.p.is_finite() {
        return Err(TpeError::InvalidConfig(format!("P must be positive, got {}", cfg.p)));
    }
    if !(cfg.sigma2 > 0.0) || !cfg.sigma2.is_finite() {
        return Err(TpeError::InvalidConfig(format!("sigma2 must be positive, got {}", cfg.sigma2)));
    }
    if cfg.j == 0 || cfg.j > MAX_ORDER {
        return Err(TpeError::InvalidConfig(format!("J must lie in 1..={MAX_ORDER}, got {}", cfg.j)));
    }
    if alloc.len() != cfg.k {
        return Err(TpeError::Dimension(format!("power allocation has {} entries, K={}", alloc.len(), cfg.k)));
    }
    for (i, &v) in alloc.weights().iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(TpeError::NonpositivePower { index: i, value: v });
        }
        if v * cfg.k as f64 > POWER_SCALING_GUARD {
            return Err(TpeError::InvalidConfig(format!(
                "p[{i}]·K = {} exceeds the O(1/K) scaling guard {POWER_SCALING_GUARD}",
                v * cfg.k as f64
            )));
        }
    }
    Ok((cfg, alloc))
}

/// Channel covariance model.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceKind {
    /// `[Φ]_{ij} = a^{j-i}` for `i ≤ j`, Hermitian below the diagonal.
    Exponential {
        a: f64,
    },
    Identity,
    Explicit(CMat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub m: usize,
}

impl CovarianceSpec {
    pub fn exponential(a: f64, m: usize) -> Self {
        CovarianceSpec { kind: CovarianceKind::Exponential { a }, m }
    }

    pub fn identity(m: usize) -> Self {
        CovarianceSpec { kind: CovarianceKind::Identity, m }
    }

    pub fn explicit(phi: CMat) -> Self {
        let m = phi.nrows();
        CovarianceSpec { kind: CovarianceKind::Explicit(phi), m }
    }
}

/// Covariance section of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovarianceEntry {
    Exponential {
        a: f64,
    },
    Identity,
    /// Rows of `[re, im]` pairs.
    Explicit {
        rows: Vec<Vec<[f64; 2]>>,
    },
}

impl CovarianceEntry {
    pub fn to_spec(&self, m: usize) -> Result<CovarianceSpec> {
        Ok(match self {
            CovarianceEntry::Exponential { a } => CovarianceSpec::exponential(*a, m),
            CovarianceEntry::Identity => CovarianceSpec::identity(m),
            CovarianceEntry::Explicit { rows } => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(TpeError::Dimension(format!("explicit covariance must be {m}×{m}")));
                }
                let phi = CMat::from_fn(m, m, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1]));
                CovarianceSpec::explicit(phi)
            }
        })
    }
}

/// Power section of a config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PowerEntry {
    /// `p_k = P/K`.
    #[default]
    Uniform,
    /// `p_k = c_class(k)/K`.
    Classes { weights: Vec<f64> },
}

impl PowerEntry {
    pub fn resolve(&self, p: f64, k: usize) -> Result<PowerAllocation> {
        match self {
            PowerEntry::Uniform => uniform_power(p, k),
            PowerEntry::Classes { weights } => class_power(weights, k),
        }
    }
}

fn default_sigma2() -> f64 {
    1.0
}

fn default_covariance() -> CovarianceEntry {
    CovarianceEntry::Exponential { a: 0.1 }
}

/// JSON config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    pub tau: f64,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(default = "default_covariance")]
    pub covariance: CovarianceEntry,
    #[serde(default)]
    pub power: PowerEntry,
}

/// A validated configuration together with its covariance and allocation.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub system: SystemConfig,
    pub alloc: PowerAllocation,
    pub covariance: CovarianceSpec,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Total power implied by `snr_db` (with the given `sigma2`) or `P`.
    pub fn total_power(&self) -> Result<f64> {
        match (self.snr_db, self.p) {
            (Some(db), None) => Ok(db_to_linear(db) * self.sigma2),
            (None, Some(p)) => Ok(p),
            (Some(_), Some(_)) => Err(TpeError::InvalidConfig("give either snr_db or P, not both".into())),
            (None, None) => Err(TpeError::InvalidConfig("one of snr_db or P is required".into())),
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let p = self.total_power()?;
        let system = SystemConfig { m: self.m, k: self.k, p, sigma2: self.sigma2, tau: self.tau, j: self.j };
        if self.k == 0 {
            return Err(TpeError::InvalidConfig("K must be at least 1".into()));
        }
        let alloc = self.power.resolve(p, self.k)?;
        let (system, alloc) = validate_config(system, alloc)?;
        let covariance = self.covariance.to_spec(self.m)?;
        Ok(ResolvedConfig { system, alloc, covariance })
    }
}
