//! Optimal TPE coefficients.
//!
//! Maximizing `wᵀAw / (wᵀBw + σ²/P·wᵀCw)` over real `w` is a generalized
//! Rayleigh quotient. With `S = B + σ²/P·C` the optimum is
//! `w ∝ S^{-1/2} a` where `a` is the leading eigenvector of
//! `S^{-1/2} A S^{-1/2}`, scaled to meet the power constraint.

use crate::config::PowerAllocation;
use crate::error::{Result, TpeError};
use crate::linalg::{self, CMat, RMat};
use crate::precoders::{Provenance, TpeWeights};
use crate::rmt::AsymptoticMatrices;

/// Relative floor for the eigenvalues of `S` before inversion.
pub const CLAMP_FLOOR: f64 = 1e-12;
/// Negative eigenvalues of `S` beyond this fraction of `λ_max` are an error.
pub const INDEFINITE_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub weights: TpeWeights,
    /// Largest eigenvalue of `S^{-1/2} A S^{-1/2}`.
    pub lambda_max: f64,
    /// `vᵀCv` for the unscaled direction `v = S^{-1/2} a`.
    pub alpha: f64,
    /// Per-user SINR predicted by the optimum.
    pub gamma_k: Vec<f64>,
}

struct Rayleigh {
    w: Vec<f64>,
    lambda_max: f64,
    alpha: f64,
}

fn check_square(name: &str, m: &RMat, j: usize) -> Result<()> {
    if m.nrows() != j || m.ncols() != j {
        return Err(TpeError::Dimension(format!("{name} is {}×{}, expected {j}×{j}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(TpeError::Numeric(format!("{name} has non-finite entries")));
    }
    Ok(())
}

/// Solves the quotient and scales the result so that `scale·wᵀCw = P`.
fn solve(a: &RMat, b: &RMat, c: &RMat, p: f64, sigma2: f64, scale: f64) -> Result<Rayleigh> {
    let j = a.nrows();
    check_square("A", a, j)?;
    check_square("B", b, j)?;
    check_square("C", c, j)?;
    if !(p > 0.0) || !(sigma2 >= 0.0) {
        return Err(TpeError::InvalidConfig(format!("need P > 0 and σ² ≥ 0, got P={p}, σ²={sigma2}")));
    }
    let s = b + c * (sigma2 / p);
    let s_inv_half = linalg::clamped_inv_sqrt(&s, CLAMP_FLOOR, INDEFINITE_TOL)?;
    let whitened = &s_inv_half * a * &s_inv_half;
    let (vals, vecs) = linalg::symmetric_eigen(&whitened);
    let top = vals.imax();
    let lambda_max = vals[top].max(0.0);
    let mut v = &s_inv_half * vecs.column(top);
    if v[0] < 0.0 {
        v.neg_mut();
    }
    let alpha = v.dot(&(c * &v));
    if !(alpha > 0.0) {
        return Err(TpeError::Numeric(format!("power form vᵀCv = {alpha:e} is not positive")));
    }
    let norm = (p / (alpha * scale)).sqrt();
    Ok(Rayleigh { w: v.iter().map(|x| x * norm).collect(), lambda_max, alpha })
}

/// Asymptotically optimal weights for the given deterministic matrices.
///
/// The weights meet `tr(P)·wᵀC̃w = P`; `γ_k = K p_k λ_max / tr(P)`.
pub fn optimal_weights(
    mats: &AsymptoticMatrices,
    p: f64,
    sigma2: f64,
    alloc: &PowerAllocation,
) -> Result<OptimizationResult> {
    let tr_p = alloc.trace();
    let r = solve(&mats.a, &mats.b, &mats.c, p, sigma2, tr_p)?;
    let k = alloc.len() as f64;
    let gamma_k = alloc.weights().iter().map(|pk| k * pk * r.lambda_max / tr_p).collect();
    Ok(OptimizationResult {
        weights: TpeWeights::new(r.w, Provenance::AsymptoticOptimal)?,
        lambda_max: r.lambda_max,
        alpha: r.alpha,
        gamma_k,
    })
}

/// Per-realization optimum from user-averaged `A_k`, `B_k` and the power
/// matrix `C` (real parts; the weights are real).
///
/// The weights meet `wᵀCw = P` and `gamma_k` holds the single predicted
/// SINR of the averaged user.
pub fn empirical_optimal_weights(a: &CMat, b: &CMat, c: &CMat, p: f64, sigma2: f64) -> Result<OptimizationResult> {
    for (name, m) in [("A", a), ("B", b), ("C", c)] {
        if linalg::hermitian_defect(m) > 1e-8 {
            return Err(TpeError::Numeric(format!("{name} is not Hermitian")));
        }
    }
    let re = |m: &CMat| m.map(|z| z.re);
    let r = solve(&re(a), &re(b), &re(c), p, sigma2, 1.0)?;
    Ok(OptimizationResult {
        weights: TpeWeights::new(r.w, Provenance::EmpiricalOptimal)?,
        lambda_max: r.lambda_max,
        alpha: r.alpha,
        gamma_k: vec![r.lambda_max],
    })
}

/// `wᵀAw / (wᵀBw + σ²/P·wᵀCw)`.
pub fn rayleigh_objective(a: &RMat, b: &RMat, c: &RMat, p: f64, sigma2: f64, w: &[f64]) -> f64 {
    let v = nalgebra::DVector::from_column_slice(w);
    let q = |m: &RMat| v.dot(&(m * &v));
    q(a) / (q(b) + sigma2 / p * q(c))
}
