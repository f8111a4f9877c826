//! RZF and TPE precoding.
//!
//! TPE precoding replaces the regularized inverse of RZF by a matrix
//! polynomial in `ĤĤᴴ/K` of degree `J−1`:
//!
//! ```text
//! G_TPE = Σ_ℓ w_ℓ (ĤĤᴴ/K)^ℓ (Ĥ/√K) P^{1/2}
//! ```
//!
//! Applied to a symbol vector it only needs `2J−1` matrix-vector products,
//! see [`tpe_apply`].

use nalgebra::Cholesky;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::PowerAllocation;
use crate::error::{Result, TpeError};
use crate::linalg::{self, CMat, CVec};

/// Where a set of TPE coefficients came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AsymptoticOptimal,
    EmpiricalOptimal,
    TruncationDerived,
    Manual,
}

/// Polynomial coefficients `w_0 … w_{J−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeWeights {
    #[serde(rename = "weights")]
    w: Vec<f64>,
    provenance: Provenance,
}

impl TpeWeights {
    pub fn new(w: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if w.is_empty() {
            return Err(TpeError::InvalidConfig("TPE order must be at least 1".into()));
        }
        if let Some(v) = w.iter().find(|v| !v.is_finite()) {
            return Err(TpeError::Numeric(format!("non-finite TPE coefficient {v}")));
        }
        Ok(TpeWeights { w, provenance })
    }

    /// `w_0 = 1`, the MRT direction.
    pub fn mrt() -> Self {
        TpeWeights { w: vec![1.0], provenance: Provenance::Manual }
    }

    pub fn order(&self) -> usize {
        self.w.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn scaled(&self, c: f64) -> Self {
        TpeWeights { w: self.w.iter().map(|v| v * c).collect(), provenance: self.provenance }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: TpeWeights = serde_json::from_str(text)?;
        TpeWeights::new(raw.w, raw.provenance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rzf,
    Tpe,
    Mrt,
}

#[derive(Debug, Clone)]
pub struct PrecodingMatrix {
    pub g: CMat,
    pub scheme: Scheme,
    /// `tr(G Gᴴ)`.
    pub power_used: f64,
}

impl PrecodingMatrix {
    fn new(g: CMat, scheme: Scheme) -> Self {
        let power_used = linalg::frob2(&g);
        PrecodingMatrix { g, scheme, power_used }
    }

    pub fn apply(&self, s: &CVec) -> CVec {
        &self.g * s
    }
}

fn check_alloc(hhat: &CMat, alloc: &PowerAllocation) -> Result<()> {
    if alloc.len() != hhat.ncols() {
        return Err(TpeError::Dimension(format!(
            "Ĥ has {} columns but the allocation has {} users",
            hhat.ncols(),
            alloc.len()
        )));
    }
    Ok(())
}

fn real(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// Cholesky factorization of `ĤᴴĤ/K + ξI` plus the RZF power normalization.
///
/// Supports both evaluation orders: the precomputed matrix `G_RZF` and the
/// per-symbol route that solves against the factor for every symbol vector.
pub struct RzfFactorization {
    scaled_h: CMat,
    chol: Cholesky<Complex64, nalgebra::Dyn>,
    sqrt_p: Vec<f64>,
    beta: f64,
}

impl RzfFactorization {
    pub fn new(hhat: &CMat, xi: f64, alloc: &PowerAllocation, p: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(TpeError::InvalidConfig(format!("RZF regularization must be positive, got {xi}")));
        }
        check_alloc(hhat, alloc)?;
        let k = hhat.ncols();
        let scaled_h = hhat / real((k as f64).sqrt());
        let mut gram = linalg::adjoint_mul(&scaled_h, &scaled_h);
        for i in 0..k {
            gram[(i, i)] += real(xi);
        }
        let chol =
            gram.cholesky().ok_or_else(|| TpeError::Numeric("RZF Gram matrix is not positive definite".into()))?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..k {
            let d = l[(i, i)].re;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if (hi / lo).powi(2) > 1e12 {
            log::warn!("RZF system is ill-conditioned (condition estimate {:e})", (hi / lo).powi(2));
        }
        let sqrt_p = alloc.sqrt_weights();
        let mut this = RzfFactorization { scaled_h, chol, sqrt_p, beta: 1.0 };
        let unnormalized = this.unnormalized();
        let used = linalg::frob2(&unnormalized);
        if !(used > 0.0) {
            return Err(TpeError::Numeric("RZF precoder has zero power".into()));
        }
        this.beta = (p / used).sqrt();
        Ok(this)
    }

    fn unnormalized(&self) -> CMat {
        let mut rhs = CMat::identity(self.sqrt_p.len(), self.sqrt_p.len());
        linalg::scale_columns(&mut rhs, &self.sqrt_p);
        let x = self.chol.solve(&rhs);
        linalg::matmul(&self.scaled_h, &x)
    }

    /// Power normalization factor `β`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `G_RZF = β (Ĥ/√K)(ĤᴴĤ/K + ξI)^{-1} P^{1/2}`.
    pub fn matrix(&self) -> PrecodingMatrix {
        let g = self.unnormalized() * real(self.beta);
        PrecodingMatrix::new(g, Scheme::Rzf)
    }

    /// Transmit vector for one symbol vector without forming `G_RZF`.
    pub fn apply(&self, s: &CVec) -> CVec {
        let rhs = CVec::from_iterator(s.len(), s.iter().zip(&self.sqrt_p).map(|(v, q)| v * q * self.beta));
        let y = self.chol.solve(&rhs);
        &self.scaled_h * y
    }
}

/// RZF precoder normalized to `tr(GGᴴ) = P`.
pub fn rzf_matrix(hhat: &CMat, xi: f64, alloc: &PowerAllocation, p: f64) -> Result<PrecodingMatrix> {
    Ok(RzfFactorization::new(hhat, xi, alloc, p)?.matrix())
}

/// `Σ_ℓ w_ℓ x̃_ℓ` computed with matrix-vector products only.
pub fn tpe_apply(hhat: &CMat, weights: &TpeWeights, alloc: &PowerAllocation, s: &CVec) -> Result<CVec> {
    check_alloc(hhat, alloc)?;
    if s.len() != hhat.ncols() {
        return Err(TpeError::Dimension(format!("symbol vector has length {}, expected K={}", s.len(), hhat.ncols())));
    }
    let inv_sqrt_k = real(1.0 / (hhat.ncols() as f64).sqrt());
    let ps = CVec::from_iterator(s.len(), s.iter().zip(alloc.weights()).map(|(v, p)| v * p.sqrt()));
    let mut term = (hhat * ps) * inv_sqrt_k;
    let mut out = &term * real(weights.as_slice()[0]);
    for &w in &weights.as_slice()[1..] {
        let back = hhat.ad_mul(&term) * inv_sqrt_k;
        term = (hhat * back) * inv_sqrt_k;
        out += &term * real(w);
    }
    Ok(out)
}

/// The terms `(ĤĤᴴ/K)^ℓ (Ĥ/√K) P^{1/2}` for `ℓ < count`, by repeated
/// right-multiplication.
pub fn tpe_terms(hhat: &CMat, alloc: &PowerAllocation, count: usize) -> Result<Vec<CMat>> {
    check_alloc(hhat, alloc)?;
    let k = hhat.ncols() as f64;
    let mut first = hhat / real(k.sqrt());
    linalg::scale_columns(&mut first, &alloc.sqrt_weights());
    let mut terms = Vec::with_capacity(count);
    terms.push(first);
    for _ in 1..count {
        let prev = terms.last().unwrap();
        let inner = linalg::adjoint_mul(hhat, prev);
        terms.push(linalg::matmul(hhat, &inner) / real(k));
    }
    Ok(terms)
}

/// Explicit (unnormalized) TPE precoding matrix.
pub fn tpe_matrix(hhat: &CMat, weights: &TpeWeights, alloc: &PowerAllocation) -> Result<PrecodingMatrix> {
    let terms = tpe_terms(hhat, alloc, weights.order())?;
    let mut g = CMat::zeros(hhat.nrows(), hhat.ncols());
    for (t, &w) in terms.iter().zip(weights.as_slice()) {
        g += t * real(w);
    }
    let scheme = if weights.order() == 1 { Scheme::Mrt } else { Scheme::Tpe };
    Ok(PrecodingMatrix::new(g, scheme))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficients of the `J`-term truncated Neumann series of the RZF inverse:
/// `w_ℓ = βκ Σ_{n=ℓ}^{J−1} C(n,ℓ) (1−κξ)^{n−ℓ} (−κ)^ℓ`.
pub fn truncation_coefficients(xi: f64, kappa: f64, beta: f64, j: usize) -> Result<TpeWeights> {
    if j == 0 {
        return Err(TpeError::InvalidConfig("TPE order must be at least 1".into()));
    }
    let w = (0..j)
        .map(|l| {
            let tail: f64 = (l..j).map(|n| binomial(n, l) * (1.0 - kappa * xi).powi((n - l) as i32)).sum();
            beta * kappa * tail * (-kappa).powi(l as i32)
        })
        .collect();
    TpeWeights::new(w, Provenance::TruncationDerived)
}

/// Coefficients of the degree-`K−1` polynomial that reproduces the RZF
/// inverse exactly on the column space of `Ĥ` (Cayley-Hamilton).
///
/// Interpolates `1/(μ+ξ)` at the eigenvalues `μ` of `ĤᴴĤ/K`, so it needs
/// distinct eigenvalues and is only well conditioned for small `K`.
pub fn exact_inverse_coefficients(hhat: &CMat, xi: f64) -> Result<TpeWeights> {
    let k = hhat.ncols();
    let gram = linalg::adjoint_mul(hhat, hhat) / real(k as f64);
    let (mu, _) = linalg::hermitian_eigen(&gram);
    let vander = nalgebra::DMatrix::<f64>::from_fn(k, k, |i, l| mu[i].powi(l as i32));
    let rhs = nalgebra::DVector::<f64>::from_iterator(k, mu.iter().map(|m| 1.0 / (m + xi)));
    let c = vander.lu().solve(&rhs).ok_or_else(|| TpeError::Numeric("repeated Gram eigenvalues".into()))?;
    TpeWeights::new(c.iter().copied().collect(), Provenance::Manual)
}

/// Scales `G` so that `tr(GGᴴ) = P`.
pub fn normalize_power(g: &CMat, scheme: Scheme, p: f64) -> Result<PrecodingMatrix> {
    let used = linalg::frob2(g);
    if !(used > 0.0) {
        return Err(TpeError::Numeric("cannot normalize a zero precoder".into()));
    }
    let scaled = g * real((p / used).sqrt());
    Ok(PrecodingMatrix::new(scaled, scheme))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_covariance, ChannelSample};
    use crate::config::{uniform_power, CovarianceSpec};
    use rand::SeedableRng;

    fn instance(m: usize, k: usize, seed: u64) -> CMat {
        let cov = build_covariance(&CovarianceSpec::exponential(0.1, m)).unwrap();
        ChannelSample::draw(&cov, k, 0.2, seed, 0).unwrap().hhat
    }

    fn random_symbols(k: usize, seed: u64) -> CVec {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let z = crate::channel::standard_complex_gaussian(k, 1, &mut rng);
        z.column(0).into_owned()
    }

    fn rel(a: &CMat, b: &CMat) -> f64 {
        linalg::frob2(&(a - b)).sqrt() / linalg::frob2(b).sqrt()
    }

    #[test]
    fn rzf_single_user_is_matched_filter() {
        let h = instance(6, 1, 3);
        let alloc = uniform_power(1.0, 1).unwrap();
        let g = rzf_matrix(&h, 0.5, &alloc, 1.0).unwrap().g;
        let ratio = g[(0, 0)] / h[(0, 0)];
        for i in 0..6 {
            assert!((g[(i, 0)] - h[(i, 0)] * ratio).norm() < 1e-12);
        }
    }

    #[test]
    fn rzf_two_by_two_hand_example() {
        let h = CMat::identity(2, 2) * real(2f64.sqrt());
        let alloc = uniform_power(1.0, 2).unwrap();
        let g = rzf_matrix(&h, 1.0, &alloc, 1.0).unwrap();
        let want = CMat::identity(2, 2) * real(1.0 / 2f64.sqrt());
        assert!((g.g - want).norm() < 1e-14);
    }

    #[test]
    fn rzf_power_contract_and_per_symbol_route() {
        let h = instance(16, 6, 8);
        let alloc = uniform_power(3.0, 6).unwrap();
        let fac = RzfFactorization::new(&h, 0.3, &alloc, 3.0).unwrap();
        let g = fac.matrix();
        assert!((g.power_used - 3.0).abs() / 3.0 < 1e-10);
        let s = random_symbols(6, 2);
        let direct = g.apply(&s);
        let routed = fac.apply(&s);
        assert!((&direct - &routed).norm() / direct.norm() < 1e-12);
        assert!(rzf_matrix(&h, 0.0, &alloc, 3.0).is_err());
    }

    #[test]
    fn tpe_order_one_is_mrt() {
        let h = instance(8, 3, 4);
        let alloc = uniform_power(1.0, 3).unwrap();
        let s = random_symbols(3, 5);
        let x = tpe_apply(&h, &TpeWeights::mrt(), &alloc, &s).unwrap();
        let ps = CVec::from_iterator(3, s.iter().map(|v| v * (1.0f64 / 3.0).sqrt()));
        let want = (&h * ps) / real(3f64.sqrt());
        assert!((x - want).norm() < 1e-14);
        let g = tpe_matrix(&h, &TpeWeights::mrt(), &alloc).unwrap();
        assert_eq!(g.scheme, Scheme::Mrt);
    }

    #[test]
    fn tpe_apply_matches_matrix() {
        let alloc = uniform_power(1.0, 4).unwrap();
        for seed in 0..5 {
            let h = instance(12, 4, seed);
            let w = TpeWeights::new(vec![0.7, -0.3, 0.05, 0.01], Provenance::Manual).unwrap();
            let s = random_symbols(4, seed + 100);
            let a = tpe_apply(&h, &w, &alloc, &s).unwrap();
            let b = tpe_matrix(&h, &w, &alloc).unwrap().apply(&s);
            assert!((&a - &b).norm() / b.norm() < 1e-12);
            let zero = tpe_apply(&h, &w, &alloc, &CVec::zeros(4)).unwrap();
            assert_eq!(zero.norm(), 0.0);
        }
    }

    #[test]
    fn tpe_is_linear_in_weights() {
        let h = instance(10, 4, 9);
        let alloc = uniform_power(1.0, 4).unwrap();
        let w = TpeWeights::new(vec![1.0, -0.4, 0.1], Provenance::Manual).unwrap();
        let g1 = tpe_matrix(&h, &w, &alloc).unwrap().g;
        let g2 = tpe_matrix(&h, &w.scaled(2.0), &alloc).unwrap().g;
        assert!((g2 - g1 * real(2.0)).norm() < 1e-13);
    }

    #[test]
    fn weight_scaling_is_projective() {
        let h = instance(10, 4, 19);
        let alloc = uniform_power(1.0, 4).unwrap();
        let w = TpeWeights::new(vec![1.0, -0.4, 0.1], Provenance::Manual).unwrap();
        let a = tpe_matrix(&h, &w, &alloc).unwrap();
        let b = tpe_matrix(&h, &w.scaled(3.7), &alloc).unwrap();
        let na = normalize_power(&a.g, a.scheme, 2.0).unwrap();
        let nb = normalize_power(&b.g, b.scheme, 2.0).unwrap();
        assert!(rel(&na.g, &nb.g) < 1e-13);
    }

    #[test]
    fn truncation_examples() {
        let w = truncation_coefficients(0.3, 0.5, 2.0, 1).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        assert_eq!(w.provenance(), Provenance::TruncationDerived);
        // κξ = 1
        let (kappa, beta) = (0.25, 3.0);
        let w = truncation_coefficients(4.0, kappa, beta, 2).unwrap();
        assert!((w.as_slice()[0] - beta * kappa).abs() < 1e-15);
        assert!((w.as_slice()[1] + beta * kappa * kappa).abs() < 1e-15);
    }

    #[test]
    fn truncation_converges_to_rzf() {
        for seed in 0..4 {
            let h = instance(8, 4, seed);
            let alloc = uniform_power(1.0, 4).unwrap();
            let xi = 0.5;
            let fac = RzfFactorization::new(&h, xi, &alloc, 1.0).unwrap();
            let rzf = fac.matrix().g / real(fac.beta());
            let gram = linalg::adjoint_mul(&h, &h) / real(4.0);
            let (mu, _) = linalg::hermitian_eigen(&gram);
            let kappa = 1.0 / (mu.max() + xi);
            let mut last = f64::INFINITY;
            for j in 1..=10 {
                let w = truncation_coefficients(xi, kappa, 1.0, j).unwrap();
                let err = rel(&tpe_matrix(&h, &w, &alloc).unwrap().g, &rzf);
                assert!(err < last, "J={j}: {err} !< {last}");
                last = err;
            }
        }
    }

    #[test]
    fn cayley_hamilton_order_reproduces_rzf() {
        for seed in 0..3 {
            let h = instance(4, 4, seed);
            let alloc = uniform_power(1.0, 4).unwrap();
            let w = exact_inverse_coefficients(&h, 0.7).unwrap();
            assert_eq!(w.order(), 4);
            let tpe = tpe_matrix(&h, &w, &alloc).unwrap();
            let tpe = normalize_power(&tpe.g, Scheme::Tpe, 1.0).unwrap();
            let rzf = rzf_matrix(&h, 0.7, &alloc, 1.0).unwrap();
            assert!(rel(&tpe.g, &rzf.g) < 1e-6);
        }
    }

    #[test]
    fn normalization() {
        let g = CMat::identity(2, 2) * real(2f64.sqrt());
        let n = normalize_power(&g, Scheme::Tpe, 1.0).unwrap();
        assert!((n.g[(0, 0)].re - 2f64.sqrt() / 2.0).abs() < 1e-15);
        let again = normalize_power(&n.g, Scheme::Tpe, 1.0).unwrap();
        assert!((again.g - &n.g).norm() < 1e-15);
        assert!(normalize_power(&CMat::zeros(3, 2), Scheme::Tpe, 1.0).is_err());
        let r = instance(9, 3, 1);
        let n = normalize_power(&r, Scheme::Tpe, 5.0).unwrap();
        assert!((linalg::frob2(&n.g) - 5.0).abs() < 5e-12);
    }

    #[test]
    fn weights_json() {
        let w = TpeWeights::new(vec![1.5, -0.25], Provenance::AsymptoticOptimal).unwrap();
        let text = w.to_json().unwrap();
        assert!(text.contains("\"asymptotic_optimal\""));
        assert_eq!(TpeWeights::from_json(&text).unwrap(), w);
        assert!(TpeWeights::from_json(r#"{"weights":[],"provenance":"manual"}"#).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn tpe_apply_is_linear_in_symbols(seed in 0u64..1000, a in -3.0f64..3.0) {
            let h = instance(6, 3, seed);
            let alloc = uniform_power(1.0, 3).unwrap();
            let w = TpeWeights::new(vec![1.0, -0.2, 0.03], Provenance::Manual).unwrap();
            let s1 = random_symbols(3, seed);
            let s2 = random_symbols(3, seed + 1);
            let combo = &s1 * real(a) + &s2;
            let lhs = tpe_apply(&h, &w, &alloc, &combo).unwrap();
            let rhs = tpe_apply(&h, &w, &alloc, &s1).unwrap() * real(a) + tpe_apply(&h, &w, &alloc, &s2).unwrap();
            proptest::prop_assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        }
    }
}
