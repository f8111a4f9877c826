//! Channel covariance, Rayleigh block-fading draws and imperfect CSI.

use std::io::{BufRead, Write};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{CovarianceKind, CovarianceSpec};
use crate::error::{Result, TpeError};
use crate::linalg::{self, CMat};

/// Tolerance on the Hermitian defect of a user-supplied covariance.
const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues down to `-NEG_EIG_TOL · max(1, ‖Φ‖₂)` are clamped to zero.
const NEG_EIG_TOL: f64 = 1e-12;

/// `Φ` together with its principal square root and spectrum.
#[derive(Debug, Clone)]
pub struct CovarianceOperator {
    phi: CMat,
    sqrt: CMat,
    eigenvalues: DVector<f64>,
    eigenvectors: CMat,
    spectral_norm: f64,
}

impl CovarianceOperator {
    pub fn phi(&self) -> &CMat {
        &self.phi
    }

    /// Principal square root `Φ^{1/2}`.
    pub fn sqrt(&self) -> &CMat {
        &self.sqrt
    }

    /// Eigenvalues of `Φ` (clamped at zero), paired with [`Self::eigenvectors`].
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMat {
        &self.eigenvectors
    }

    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.phi.diagonal().iter().map(|z| z.re).sum()
    }

    /// `V diag(d) Vᴴ` in the eigenbasis of `Φ`.
    pub fn spectral_matrix(&self, d: &[f64]) -> CMat {
        linalg::reconstruct(&self.eigenvectors, d)
    }
}

fn exponential_matrix(a: f64, m: usize) -> CMat {
    CMat::from_fn(m, m, |i, j| {
        let d = i.abs_diff(j) as i32;
        Complex64::new(a.powi(d), 0.0)
    })
}

/// Builds `Φ` and its square root via a Hermitian eigendecomposition.
pub fn build_covariance(spec: &CovarianceSpec) -> Result<CovarianceOperator> {
    let phi = match &spec.kind {
        CovarianceKind::Exponential { a } => {
            if !(a.abs() < 1.0) {
                return Err(TpeError::InvalidCovariance(format!("exponential correlation requires |a| < 1, got {a}")));
            }
            exponential_matrix(*a, spec.m)
        }
        CovarianceKind::Identity => CMat::identity(spec.m, spec.m),
        CovarianceKind::Explicit(phi) => {
            if phi.nrows() != phi.ncols() || phi.nrows() != spec.m {
                return Err(TpeError::InvalidCovariance(format!(
                    "explicit covariance is {}×{}, expected {}×{}",
                    phi.nrows(),
                    phi.ncols(),
                    spec.m,
                    spec.m
                )));
            }
            if phi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(TpeError::InvalidCovariance("non-finite entry".into()));
            }
            let defect = linalg::hermitian_defect(phi);
            if defect > HERMITIAN_TOL {
                return Err(TpeError::InvalidCovariance(format!(
                    "matrix is not Hermitian (relative defect {defect:e})"
                )));
            }
            phi.clone()
        }
    };
    if spec.m == 0 {
        return Err(TpeError::InvalidCovariance("dimension must be positive".into()));
    }
    from_hermitian(phi)
}

fn from_hermitian(phi: CMat) -> Result<CovarianceOperator> {
    let m = phi.nrows();
    let (vals, vecs) = if phi.iter().all(|z| z.im == 0.0) {
        // real symmetric input: the real solver is much faster
        let (v, q) = linalg::symmetric_eigen(&phi.map(|z| z.re));
        (v, q.map(|x| Complex64::new(x, 0.0)))
    } else {
        linalg::hermitian_eigen(&phi)
    };
    let max_abs = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = vals.min();
    if min < -NEG_EIG_TOL * max_abs.max(1.0) {
        return Err(TpeError::InvalidCovariance(format!("matrix is not positive semi-definite (eigenvalue {min:e})")));
    }
    let clamped = vals.map(|v| v.max(0.0));
    let roots: Vec<f64> = clamped.iter().map(|v| v.sqrt()).collect();
    let sqrt = linalg::reconstruct(&vecs, &roots);
    let spectral_norm = clamped.max();
    debug_assert_eq!(sqrt.nrows(), m);
    Ok(CovarianceOperator { phi, sqrt, eigenvalues: clamped, eigenvectors: vecs, spectral_norm })
}

/// `rows × cols` matrix of i.i.d. `CN(0, 1)` entries (variance 1/2 per part).
pub fn standard_complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // column-major fill order is part of the determinism contract
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    })
}

/// Draws `H = Φ^{1/2} Z` with `K` i.i.d. columns.
pub fn sample_channel<R: Rng + ?Sized>(cov: &CovarianceOperator, k: usize, rng: &mut R) -> CMat {
    let z = standard_complex_gaussian(cov.dim(), k, rng);
    linalg::matmul(cov.sqrt(), &z)
}

/// `Ĥ = √(1−τ²) H + τ Φ^{1/2} V` with fresh `V`.
pub fn corrupt_csi<R: Rng + ?Sized>(h: &CMat, cov: &CovarianceOperator, tau: f64, rng: &mut R) -> Result<CMat> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(TpeError::InvalidTau(tau));
    }
    if h.nrows() != cov.dim() {
        return Err(TpeError::Dimension(format!(
            "channel has {} rows, covariance is {}×{}",
            h.nrows(),
            cov.dim(),
            cov.dim()
        )));
    }
    if tau == 0.0 {
        return Ok(h.clone());
    }
    let noise = sample_channel(cov, h.ncols(), rng);
    let a = Complex64::new((1.0 - tau * tau).sqrt(), 0.0);
    let b = Complex64::new(tau, 0.0);
    Ok(h * a + noise * b)
}

/// True channel and transmitter-side estimate for one coherence period.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h: CMat,
    pub hhat: CMat,
    pub tau: f64,
}

/// Independent random streams of one Monte Carlo trial: channel draws and
/// estimation-error draws never share a stream, so sweeping `τ` reuses the
/// same `H` realizations.
pub fn trial_streams(seed: u64, trial: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut channel = ChaCha8Rng::seed_from_u64(seed);
    channel.set_stream(2 * trial);
    let mut csi = ChaCha8Rng::seed_from_u64(seed);
    csi.set_stream(2 * trial + 1);
    (channel, csi)
}

impl ChannelSample {
    /// Draws `(H, Ĥ)` for `trial` from the master `seed`.
    pub fn draw(cov: &CovarianceOperator, k: usize, tau: f64, seed: u64, trial: u64) -> Result<Self> {
        let (mut ch, mut csi) = trial_streams(seed, trial);
        let h = sample_channel(cov, k, &mut ch);
        let hhat = corrupt_csi(&h, cov, tau, &mut csi)?;
        Ok(ChannelSample { h, hhat, tau })
    }

    /// Writes the text dump: a `M K tau seed` header line followed by the
    /// `H` and `HHAT` blocks, one row per line as `re im` pairs.
    pub fn write_dump<W: Write>(&self, mut out: W, seed: u64) -> Result<()> {
        writeln!(out, "{} {} {:.17e} {}", self.h.nrows(), self.h.ncols(), self.tau, seed)?;
        for (name, m) in [("H", &self.h), ("HHAT", &self.hhat)] {
            writeln!(out, "{name}")?;
            for i in 0..m.nrows() {
                let row: Vec<String> =
                    (0..m.ncols()).map(|j| format!("{:.17e} {:.17e}", m[(i, j)].re, m[(i, j)].im)).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }

    /// Parses a dump written by [`Self::write_dump`]; returns the sample and seed.
    pub fn read_dump<R: BufRead>(input: R) -> Result<(Self, u64)> {
        let bad = |msg: &str| TpeError::InvalidConfig(format!("malformed channel dump: {msg}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad("header"));
        }
        let m: usize = fields[0].parse().map_err(|_| bad("M"))?;
        let k: usize = fields[1].parse().map_err(|_| bad("K"))?;
        let tau: f64 = fields[2].parse().map_err(|_| bad("tau"))?;
        let seed: u64 = fields[3].parse().map_err(|_| bad("seed"))?;
        let mut read_block = |name: &str| -> Result<CMat> {
            let tag = lines.next().ok_or_else(|| bad(name))??;
            if tag.trim() != name {
                return Err(bad(name));
            }
            let mut out = CMat::zeros(m, k);
            for i in 0..m {
                let line = lines.next().ok_or_else(|| bad("row"))??;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|s| s.parse::<f64>().map_err(|_| bad("value")))
                    .collect::<Result<_>>()?;
                if vals.len() != 2 * k {
                    return Err(bad("row length"));
                }
                for j in 0..k {
                    out[(i, j)] = Complex64::new(vals[2 * j], vals[2 * j + 1]);
                }
            }
            Ok(out)
        };
        let h = read_block("H")?;
        let hhat = read_block("HHAT")?;
        Ok((ChannelSample { h, hhat, tau }, seed))
    }
}

/// Sample covariance `(1/N) Σ x xᴴ` over the columns of `x`.
pub fn sample_covariance(x: &CMat) -> CMat {
    linalg::matmul(x, &x.adjoint()) / Complex64::new(x.ncols() as f64, 0.0)
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖`.
pub fn relative_frobenius(a: &CMat, b: &CMat) -> f64 {
    linalg::frob2(&(a - b)).sqrt() / linalg::frob2(b).sqrt()
}
