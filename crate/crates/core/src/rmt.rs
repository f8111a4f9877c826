//! Deterministic equivalents for RZF and TPE precoding.
//!
//! Everything here is a function of the channel covariance `Φ` only through
//! its spectrum: `T(t) = (I + tΦ/(1+tδ(t)))^{-1}` and all of its
//! derivatives are functions of `Φ`, hence diagonal in `Φ`'s eigenbasis.
//! Matrices are therefore kept as eigenvalue sequences and expanded on
//! demand with [`CovarianceOperator::spectral_matrix`].
//!
//! The derivative tables are Taylor data at `t = 0`. With
//! `𝒯(t) = T(t)/(1+tδ(t))` and `f(t) = −1/(1+tδ(t))` the bivariate
//! functionals behind the tables are
//!
//! ```text
//! β(t,u) = g(t,u) / (1 − tu·g(t,u)),   g(t,u) = tr(Φ𝒯(t)Φ𝒯(u))/K
//! c(t,u) = h(t,u) · (1 + tu·β(t,u)),   h(t,u) = tr(Φ𝒯(t)𝒯(u))/K
//! X̄(t,u) = (1−τ²) δ(t)f(t) δ(u)f(u)
//! b̄(t,u) = β(t,u) (τ² + (1−τ²) f(t)f(u))
//! ```

use std::collections::BTreeMap;

use serde_json::Value;

use crate::channel::CovarianceOperator;
use crate::error::{Result, TpeError};
use crate::linalg::{CMat, RMat};

pub const DELTA_TOL: f64 = 1e-12;
pub const DELTA_MAX_ITER: usize = 10_000;
const XI_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub t: f64,
    pub delta: f64,
    /// Eigenvalues of `T(t)` in the covariance eigenbasis.
    pub t_spectrum: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl FixedPointResult {
    /// Dense `T(t)`.
    pub fn t_matrix(&self, cov: &CovarianceOperator) -> CMat {
        cov.spectral_matrix(&self.t_spectrum)
    }
}

fn delta_map(lam: &[f64], k: f64, t: f64, d: f64) -> f64 {
    let s = t / (1.0 + t * d);
    lam.iter().map(|&l| l / (1.0 + s * l)).sum::<f64>() / k
}

fn solve_delta_spectral(lam: &[f64], k: usize, t: f64, tol: f64, max_iter: usize) -> Result<FixedPointResult> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(TpeError::InvalidConfig(format!("fixed point needs t ≥ 0, got {t}")));
    }
    let kf = k as f64;
    let mut d = lam.iter().sum::<f64>() / kf;
    let mut damping = 1.0;
    let mut last_step = 0.0f64;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    if t > 0.0 {
        while iterations < max_iter {
            iterations += 1;
            let step = delta_map(lam, kf, t, d) - d;
            if step * last_step < 0.0 {
                damping = 0.5;
            }
            residual = step.abs();
            d += damping * step;
            last_step = step;
            if residual < tol {
                break;
            }
        }
        if residual >= tol {
            return Err(TpeError::NonConvergence { iterations, residual });
        }
    } else {
        residual = 0.0;
    }
    let s = t / (1.0 + t * d);
    let t_spectrum = lam.iter().map(|&l| 1.0 / (1.0 + s * l)).collect();
    Ok(FixedPointResult { t, delta: d, t_spectrum, iterations, residual })
}

/// Solves `δ = tr(Φ (I + tΦ/(1+tδ))^{-1})/K` by fixed-point iteration from
/// `δ₀ = tr(Φ)/K`; damping 0.5 switches on if the iterates oscillate.
pub fn solve_delta(cov: &CovarianceOperator, k: usize, t: f64, tol: f64, max_iter: usize) -> Result<FixedPointResult> {
    solve_delta_spectral(cov.eigenvalues().as_slice(), k, t, tol, max_iter)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Derivatives at `t = 0` of `δ`, `f = −1/(1+tδ)`, `T` and `𝒯 = −fT`.
#[derive(Debug, Clone)]
pub struct Cascade {
    pub order: usize,
    pub k: usize,
    pub lambda: Vec<f64>,
    pub delta_q: Vec<f64>,
    pub f_q: Vec<f64>,
    /// Spectra of `T^(q)`.
    pub t_q: Vec<Vec<f64>>,
    /// Spectra of `𝒯^(q)`.
    pub tau_q: Vec<Vec<f64>>,
}

impl Cascade {
    pub fn t_matrix(&self, cov: &CovarianceOperator, q: usize) -> CMat {
        cov.spectral_matrix(&self.t_q[q])
    }

    pub fn script_t_matrix(&self, cov: &CovarianceOperator, q: usize) -> CMat {
        cov.spectral_matrix(&self.tau_q[q])
    }
}

/// Leibniz-rule cascade through order `j`.
///
/// With `g = 1 + tδ`, `R = tΦ·f` and `T = (I − R)^{-1}`:
/// `g^(i) = iδ^(i−1)`, `f^(i) = −Σ_{j<i} C(i,j) f^(j) g^(i−j)`,
/// `R^(n) = n f^(n−1) Φ`, `T^(i) = Σ_{n=1}^{i} C(i,n) T^(i−n) R^(n)` and
/// `δ^(i) = tr(Φ T^(i))/K`.
pub fn derivative_cascade(cov: &CovarianceOperator, k: usize, j: usize) -> Result<Cascade> {
    cascade_spectral(cov.eigenvalues().as_slice().to_vec(), k, j)
}

fn cascade_spectral(lambda: Vec<f64>, k: usize, j: usize) -> Result<Cascade> {
    if j == 0 {
        return Err(TpeError::InvalidConfig("derivative order must be at least 1".into()));
    }
    if k == 0 {
        return Err(TpeError::InvalidConfig("K must be positive".into()));
    }
    let kf = k as f64;
    let m = lambda.len();
    let trace_weighted = |spec: &[f64]| lambda.iter().zip(spec).map(|(l, s)| l * s).sum::<f64>() / kf;

    let mut delta_q = vec![lambda.iter().sum::<f64>() / kf];
    let mut f_q = vec![-1.0];
    let mut g_q = vec![0.0];
    let mut t_q = vec![vec![1.0; m]];
    for i in 1..=j {
        g_q.push(i as f64 * delta_q[i - 1]);
        let fi = -(0..i).map(|jj| binomial(i, jj) * f_q[jj] * g_q[i - jj]).sum::<f64>();
        f_q.push(fi);
        let mut ti = vec![0.0; m];
        for n in 1..=i {
            let r = binomial(i, n) * n as f64 * f_q[n - 1];
            for (v, (prev, l)) in ti.iter_mut().zip(t_q[i - n].iter().zip(&lambda)) {
                *v += r * prev * l;
            }
        }
        delta_q.push(trace_weighted(&ti));
        t_q.push(ti);
    }
    let tau_q = (0..=j)
        .map(|l| {
            let mut out = vec![0.0; m];
            for n in 0..=l {
                let c = -binomial(l, n) * f_q[l - n];
                for (o, t) in out.iter_mut().zip(&t_q[n]) {
                    *o += c * t;
                }
            }
            out
        })
        .collect();
    let cascade = Cascade { order: j, k, lambda, delta_q, f_q, t_q, tau_q };
    if cascade.delta_q.iter().chain(&cascade.f_q).any(|v| !v.is_finite()) {
        return Err(TpeError::Numeric("derivative cascade overflowed".into()));
    }
    Ok(cascade)
}

fn symmetric_table(n: usize, mut entry: impl FnMut(&RMat, usize, usize) -> f64) -> RMat {
    let mut out = RMat::zeros(n, n);
    for l in 0..n {
        for m in l..n {
            let v = entry(&out, l, m);
            out[(l, m)] = v;
            out[(m, l)] = v;
        }
    }
    out
}

/// `(1/K) Σ_i w_i 𝒯_a,i 𝒯_b,i` for every `(a, b)`.
fn weighted_products(c: &Cascade, weight: impl Fn(f64) -> f64) -> RMat {
    let w: Vec<f64> = c.lambda.iter().map(|&l| weight(l)).collect();
    let kf = c.k as f64;
    symmetric_table(c.order + 1, |_, a, b| {
        let ta = &c.tau_q[a];
        let tb = &c.tau_q[b];
        (0..w.len()).map(|i| w[i] * (ta[i] * tb[i])).sum::<f64>() / kf
    })
}

/// `β^(ℓ,m) = g(ℓ,m) + Σ_{k=1}^{ℓ} Σ_{n=1}^{m} kn C(ℓ,k) C(m,n) β^(k−1,n−1) g(ℓ−k,m−n)`
/// with `g(a,b) = tr(Φ𝒯^(a)Φ𝒯^(b))/K`.
pub fn beta_table(c: &Cascade) -> RMat {
    let g = weighted_products(c, |l| l * l);
    convolve_with_beta(&g, None)
}

/// Same recursion as [`beta_table`] with `h(a,b) = tr(Φ𝒯^(a)𝒯^(b))/K` in place
/// of `g` and the already computed `β` inside the sum.
pub fn c_table(c: &Cascade, beta: &RMat) -> RMat {
    let h = weighted_products(c, |l| l);
    convolve_with_beta(&h, Some(beta))
}

fn convolve_with_beta(base: &RMat, beta: Option<&RMat>) -> RMat {
    let n = base.nrows();
    let mut out = RMat::zeros(n, n);
    // Fill by total order so every β^(k−1,n−1) is ready when needed.
    for total in 0..(2 * n - 1) {
        for l in 0..n {
            if total < l || total - l >= n || total - l < l {
                continue;
            }
            let m = total - l;
            let b = beta.unwrap_or(&out);
            let mut s = base[(l, m)];
            for k in 1..=l {
                for q in 1..=m {
                    s += (k * q) as f64 * binomial(l, k) * binomial(m, q) * b[(k - 1, q - 1)] * base[(l - k, m - q)];
                }
            }
            out[(l, m)] = s;
            out[(m, l)] = s;
        }
    }
    out
}

/// Cascade plus the τ-independent bivariate tables.
#[derive(Debug, Clone)]
pub struct DerivativeTables {
    pub cascade: Cascade,
    pub beta: RMat,
    pub c: RMat,
}

impl DerivativeTables {
    pub fn compute(cov: &CovarianceOperator, k: usize, j: usize) -> Result<Self> {
        let cascade = derivative_cascade(cov, k, j)?;
        Ok(Self::from_cascade(cascade))
    }

    pub fn from_cascade(cascade: Cascade) -> Self {
        let beta = beta_table(&cascade);
        let c = c_table(&cascade, &beta);
        DerivativeTables { cascade, beta, c }
    }

    pub fn order(&self) -> usize {
        self.cascade.order
    }

    /// `X̄^(ℓ,m) = (1−τ²) ΣΣ C(ℓ,k)C(m,n) δ^(k)δ^(n) f^(ℓ−k)f^(m−n)`.
    pub fn xbar(&self, tau: f64) -> RMat {
        let c = &self.cascade;
        let q: Vec<f64> =
            (0..=c.order).map(|l| (0..=l).map(|k| binomial(l, k) * c.delta_q[k] * c.f_q[l - k]).sum()).collect();
        let scale = 1.0 - tau * tau;
        symmetric_table(c.order + 1, |_, l, m| scale * (q[l] * q[m]))
    }

    /// `b̄^(ℓ,m) = τ²β^(ℓ,m) + (1−τ²) ΣΣ C(ℓ,k)C(m,n) β^(ℓ−k,m−n) f^(k)f^(n)`.
    pub fn bbar(&self, tau: f64) -> RMat {
        let f = &self.cascade.f_q;
        let t2 = tau * tau;
        symmetric_table(self.order() + 1, |_, l, m| {
            let mut s = 0.0;
            for k in 0..=l {
                for n in 0..=m {
                    s += binomial(l, k) * binomial(m, n) * self.beta[(l - k, m - n)] * f[k] * f[n];
                }
            }
            t2 * self.beta[(l, m)] + (1.0 - t2) * s
        })
    }

    /// Flat JSON snapshot keyed like `"delta_q/2"` or `"beta/1,2"`.
    pub fn to_json(&self, tau: f64) -> Value {
        let mut map = BTreeMap::new();
        let c = &self.cascade;
        for (q, v) in c.delta_q.iter().enumerate() {
            map.insert(format!("delta_q/{q}"), Value::from(*v));
        }
        for (q, v) in c.f_q.iter().enumerate() {
            map.insert(format!("f_q/{q}"), Value::from(*v));
        }
        let xbar = self.xbar(tau);
        let bbar = self.bbar(tau);
        for (name, table) in [("beta", &self.beta), ("c", &self.c), ("xbar", &xbar), ("bbar", &bbar)] {
            for l in 0..table.nrows() {
                for m in 0..table.ncols() {
                    map.insert(format!("{name}/{l},{m}"), Value::from(table[(l, m)]));
                }
            }
        }
        map.insert("tau".into(), Value::from(tau));
        serde_json::to_value(map).expect("string-keyed map")
    }
}

/// `Ã`, `B̃`, `C̃` of the TPE SINR deterministic equivalent.
#[derive(Debug, Clone)]
pub struct AsymptoticMatrices {
    pub a: RMat,
    pub b: RMat,
    pub c: RMat,
    pub tau: f64,
}

/// Entries `(−1)^{ℓ+m} X^(ℓ,m)/(ℓ!m!)` for `ℓ, m < j`.
pub fn assemble_matrices(tables: &DerivativeTables, tau: f64, j: usize) -> Result<AsymptoticMatrices> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(TpeError::InvalidTau(tau));
    }
    if j == 0 || j > tables.order() + 1 {
        return Err(TpeError::InvalidConfig(format!("cannot assemble J={j} from tables of order {}", tables.order())));
    }
    let scale = |x: &RMat| {
        RMat::from_fn(j, j, |l, m| {
            let sign = if (l + m) % 2 == 0 { 1.0 } else { -1.0 };
            sign * x[(l, m)] / (factorial(l) * factorial(m))
        })
    };
    Ok(AsymptoticMatrices { a: scale(&tables.xbar(tau)), b: scale(&tables.bbar(tau)), c: scale(&tables.c), tau })
}

/// Tables and matrices for one `(Φ, K, J, τ)`.
pub fn tpe_asymptotics(cov: &CovarianceOperator, k: usize, j: usize, tau: f64) -> Result<AsymptoticMatrices> {
    let tables = DerivativeTables::compute(cov, k, j)?;
    assemble_matrices(&tables, tau, j)
}

/// Spectral sums at `t = 1/ξ` used by the RZF formulas.
struct RzfMoments {
    delta: f64,
    /// `tr(TΦTΦ)/K`
    gamma: f64,
    /// `tr(ΦT²)/K`
    phi_t2: f64,
    /// `tr(ΦT³)/K`
    phi_t3: f64,
    /// `tr(Φ²T³)/K`
    phi2_t3: f64,
    /// `tr(TΦ²)/K`
    t_phi2: f64,
}

fn rzf_moments(lam: &[f64], k: usize, xi: f64) -> Result<RzfMoments> {
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(TpeError::InvalidConfig(format!("regularization must be positive, got {xi}")));
    }
    let fp = solve_delta_spectral(lam, k, 1.0 / xi, DELTA_TOL, DELTA_MAX_ITER)?;
    let kf = k as f64;
    let mut m = RzfMoments { delta: fp.delta, gamma: 0.0, phi_t2: 0.0, phi_t3: 0.0, phi2_t3: 0.0, t_phi2: 0.0 };
    for (&l, &t) in lam.iter().zip(&fp.t_spectrum) {
        m.gamma += t * l * t * l;
        m.phi_t2 += l * t * t;
        m.phi_t3 += l * t * t * t;
        m.phi2_t3 += l * l * t * t * t;
        m.t_phi2 += t * l * l;
    }
    for v in [&mut m.gamma, &mut m.phi_t2, &mut m.phi_t3, &mut m.phi2_t3, &mut m.t_phi2] {
        *v /= kf;
    }
    Ok(m)
}

/// Limiting RZF SINR `θ` of user `k` with power `p_k` out of `tr(P)`.
pub fn rzf_asymptotic_sinr(
    cov: &CovarianceOperator,
    k: usize,
    xi: f64,
    tau: f64,
    rho: f64,
    p_k: f64,
    tr_p: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(TpeError::InvalidTau(tau));
    }
    let lam = cov.eigenvalues().as_slice();
    let mm = rzf_moments(lam, k, xi)?;
    let ratio = p_k / (tr_p / k as f64);
    let (d, g, t2) = (mm.delta, mm.gamma, tau * tau);
    let num = (1.0 - t2) * ratio * d * d * ((d + xi).powi(2) - g);
    let den = g * (xi * xi - t2 * (xi * xi - (xi + d).powi(2))) + mm.phi_t2 * (xi + d).powi(2) / rho;
    Ok(num / den)
}

/// SINR-maximizing RZF regularization for uniform power, by damped
/// fixed-point iteration started at `1/ρ`.
pub fn rzf_optimal_regularization(cov: &CovarianceOperator, k: usize, tau: f64, rho: f64, tol: f64) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(TpeError::InvalidConfig(format!("SNR must be positive, got {rho}")));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(TpeError::InvalidTau(tau));
    }
    let lam = cov.eigenvalues().as_slice();
    let t2 = tau * tau;
    let mut xi = 1.0 / rho;
    let mut trace = Vec::new();
    for _ in 0..XI_MAX_ITER {
        let m = rzf_moments(lam, k, xi)?;
        let nu = xi * m.phi_t3 / (m.gamma * m.phi_t2) * (m.gamma / m.phi_t2 - m.phi2_t3 / m.phi_t3);
        let num = 1.0 + nu + t2 * rho * m.gamma / m.t_phi2;
        let den = (1.0 - t2) * (1.0 + nu) + t2 * nu * (xi + m.delta).powi(2) / (xi * xi);
        let next = num / (rho * den);
        if !(next > 0.0) || !next.is_finite() {
            trace.push(next);
            return Err(TpeError::RegularizationNonConvergence { trace });
        }
        if (next - xi).abs() <= tol * xi {
            return Ok(next);
        }
        trace.push(next);
        if trace.len() > 16 {
            trace.remove(0);
        }
        xi = 0.5 * xi + 0.5 * next;
    }
    Err(TpeError::RegularizationNonConvergence { trace })
}
