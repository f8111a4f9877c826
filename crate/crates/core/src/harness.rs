//! Empirical SINR evaluation and seeded Monte Carlo sweeps.
//!
//! Two routes compute the same SINR: [`empirical_sinr_direct`] from an
//! explicit precoder and [`sinr_from_quadratics`] from the per-user
//! quadratic forms `A_k`, `B_k`, `C` of the TPE weights.
//!
//! The sweep engine works on `K×K` matrices only. With `W = ĤᴴĤ/K` and
//! `F = HᴴĤ/√K`, the received-signal matrix of TPE is
//! `Σ_ℓ w_ℓ F W^ℓ P^{1/2}` and its power is `Σ w_ℓ w_m tr(P W^{ℓ+m+1})`;
//! RZF uses `F (W+ξI)^{-1} P^{1/2}`. Channel draws depend only on the seed
//! and trial index, so every scheme, SNR and CSI quality sees the same
//! channels.

use std::fmt;
use std::str::FromStr;

use nalgebra::Cholesky;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSample, CovarianceOperator};
use crate::config::{db_to_linear, PowerAllocation, SystemConfig};
use crate::error::{Result, TpeError};
use crate::linalg::{self, CMat, CVec, RMat};
use crate::optimizer::{empirical_optimal_weights, optimal_weights};
use crate::precoders::TpeWeights;
use crate::rmt::{self, AsymptoticMatrices, DerivativeTables};

/// Default Monte Carlo trials per sweep point.
pub const DEFAULT_TRIALS: usize = 500;
/// Relative tolerance of the regularization fixed point.
const XI_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalScheme {
    Rzf,
    Tpe,
    Tpeopt,
    Mrt,
}

impl EvalScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalScheme::Rzf => "rzf",
            EvalScheme::Tpe => "tpe",
            EvalScheme::Tpeopt => "tpeopt",
            EvalScheme::Mrt => "mrt",
        }
    }
}

impl fmt::Display for EvalScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalScheme {
    type Err = TpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rzf" => Ok(EvalScheme::Rzf),
            "tpe" => Ok(EvalScheme::Tpe),
            "tpeopt" => Ok(EvalScheme::Tpeopt),
            "mrt" => Ok(EvalScheme::Mrt),
            other => Err(TpeError::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }
}

fn rate_bits(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinrReport {
    pub per_user_sinr: Vec<f64>,
    pub per_user_rate_bits: Vec<f64>,
    pub mean_rate_bits: f64,
    pub scheme: Option<EvalScheme>,
    pub seed: Option<u64>,
    pub snr_db: Option<f64>,
}

impl SinrReport {
    pub fn from_sinr(per_user_sinr: Vec<f64>) -> Self {
        let per_user_rate_bits: Vec<f64> = per_user_sinr.iter().map(|&s| rate_bits(s)).collect();
        let mean_rate_bits = per_user_rate_bits.iter().sum::<f64>() / per_user_rate_bits.len().max(1) as f64;
        SinrReport { per_user_sinr, per_user_rate_bits, mean_rate_bits, scheme: None, seed: None, snr_db: None }
    }

    pub fn with_meta(mut self, scheme: EvalScheme, seed: u64, snr_db: f64) -> Self {
        self.scheme = Some(scheme);
        self.seed = Some(seed);
        self.snr_db = Some(snr_db);
        self
    }
}

/// SINR of every user from the true channel `H` and precoder `G`.
pub fn empirical_sinr_direct(h: &CMat, g: &CMat, sigma2: f64) -> Result<SinrReport> {
    if h.nrows() != g.nrows() || h.ncols() != g.ncols() {
        return Err(TpeError::Dimension(format!(
            "H is {}×{} but G is {}×{}",
            h.nrows(),
            h.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    let r = linalg::adjoint_mul(h, g);
    Ok(SinrReport::from_sinr(sinr_from_received(&r, 1.0, sigma2)))
}

/// SINRs from `r[k,n] = h_kᴴ g_n` with every column scaled by `√scale`.
fn sinr_from_received(r: &CMat, scale: f64, sigma2: f64) -> Vec<f64> {
    (0..r.nrows())
        .map(|k| {
            let signal = scale * r[(k, k)].norm_sqr();
            let interference: f64 = (0..r.ncols()).filter(|&n| n != k).map(|n| r[(k, n)].norm_sqr()).sum();
            signal / (scale * interference + sigma2)
        })
        .collect()
}

/// Quadratic forms of user `k`: `SINR_k = wᵀA_kw / (wᵀB_kw + σ²)` for the
/// unnormalized TPE precoder, and `tr(GGᴴ) = wᵀCw`.
#[derive(Debug, Clone)]
pub struct QuadraticForms {
    pub a: CMat,
    pub b: CMat,
    pub c: CMat,
    pub k: usize,
}

/// Builds the forms of user `k` from iterated matrix-vector products.
pub fn quadratic_forms(h: &CMat, hhat: &CMat, alloc: &PowerAllocation, j: usize, k: usize) -> Result<QuadraticForms> {
    let kk = hhat.ncols();
    if k >= kk || h.shape() != hhat.shape() || alloc.len() != kk || j == 0 {
        return Err(TpeError::Dimension(format!("invalid forms request: user {k}, J={j}, K={kk}")));
    }
    let kf = kk as f64;
    let gram_step = |x: &CVec| (hhat * hhat.ad_mul(x)) / Complex64::new(kf, 0.0);
    let p = alloc.weights();
    let hk = h.column(k).into_owned();

    let mut x = hhat.column(k).into_owned();
    let mut u = Vec::with_capacity(j);
    let mut v = hk.clone();
    let mut y = Vec::with_capacity(j);
    for l in 0..j {
        if l > 0 {
            x = gram_step(&x);
            v = gram_step(&v);
        }
        u.push(hk.dotc(&x));
        y.push(hhat.ad_mul(&v));
    }
    let a = CMat::from_fn(j, j, |l, m| u[l] * u[m].conj() * (p[k] / kf));
    let ab = CMat::from_fn(j, j, |l, m| (0..kk).map(|n| y[l][n].conj() * y[m][n] * p[n]).sum::<Complex64>() / kf);
    let b = ab - &a;

    // Y_ℓ = (ĤĤᴴ/K)^ℓ Ĥ P^{1/2}/√K, C[ℓ,m] = tr(Y_ℓᴴ Y_m)
    let mut first = hhat / Complex64::new(kf.sqrt(), 0.0);
    linalg::scale_columns(&mut first, &alloc.sqrt_weights());
    let mut ys = vec![first];
    for _ in 1..j {
        let prev = ys.last().unwrap();
        let next = linalg::matmul(hhat, &linalg::adjoint_mul(hhat, prev)) / Complex64::new(kf, 0.0);
        ys.push(next);
    }
    let c = CMat::from_fn(j, j, |l, m| ys[l].iter().zip(ys[m].iter()).map(|(x, y)| x.conj() * y).sum());
    Ok(QuadraticForms { a, b, c, k })
}

/// `wᵀA_kw / (wᵀB_kw + σ²)`.
pub fn sinr_from_quadratics(w: &TpeWeights, qf: &QuadraticForms, sigma2: f64) -> Result<f64> {
    let j = w.order();
    if qf.a.nrows() != j {
        return Err(TpeError::Dimension(format!("weights of order {j} vs forms of order {}", qf.a.nrows())));
    }
    let wv = CVec::from_iterator(j, w.as_slice().iter().map(|&x| Complex64::new(x, 0.0)));
    let quad = |m: &CMat| wv.dotc(&(m * &wv)).re;
    Ok(quad(&qf.a) / (quad(&qf.b) + sigma2))
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr }
    }
}

/// Monte Carlo statistics of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStats {
    /// Per-trial user-averaged rate.
    pub rate_bits: Estimate,
    /// Per-trial user-averaged SINR.
    pub sinr: Estimate,
    /// Per-class user-averaged rate; a single entry for one class.
    pub per_class_bits: Vec<Estimate>,
    pub trials: usize,
    pub seed: u64,
    /// User-averaged rate of every trial, in trial order.
    #[serde(skip)]
    pub rate_samples: Vec<f64>,
}

/// Large-system prediction for one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeRates {
    pub mean_rate_bits: f64,
    pub per_class_bits: Vec<f64>,
    pub per_user_sinr: Vec<f64>,
}

impl DeRates {
    fn from_sinr(per_user_sinr: Vec<f64>, alloc: &PowerAllocation) -> Self {
        let rates: Vec<f64> = per_user_sinr.iter().map(|&s| rate_bits(s)).collect();
        let mean_rate_bits = rates.iter().sum::<f64>() / rates.len() as f64;
        DeRates { mean_rate_bits, per_class_bits: class_means(&rates, alloc), per_user_sinr }
    }
}

fn class_means(values: &[f64], alloc: &PowerAllocation) -> Vec<f64> {
    let n = alloc.num_classes();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (k, v) in values.iter().enumerate() {
        let c = alloc.class_of(k);
        sums[c] += v;
        counts[c] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub scheme: EvalScheme,
    pub snr_db: f64,
    pub tau: f64,
    #[serde(rename = "J")]
    pub j: usize,
    pub stats: RateStats,
    pub de: Option<DeRates>,
}

/// Everything a sweep needs besides the covariance.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// `P` is ignored; each grid point sets `P = σ²·10^(snr/10)`.
    pub system: SystemConfig,
    /// Relative per-user powers; only their ratios matter.
    pub alloc: PowerAllocation,
    pub snr_db: Vec<f64>,
    pub schemes: Vec<EvalScheme>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Serial,
    /// Rayon's global pool.
    Pool,
    Threads(usize),
}

/// Per-SNR quantities shared by all trials.
struct PointPlan {
    p: f64,
    xi: Option<f64>,
    tpe: Option<TpeWeights>,
}

/// Per-trial `K×K` matrices.
struct TrialMats {
    f: CMat,
    w: CMat,
    /// `E_ℓ = F W^ℓ`.
    e: Vec<CMat>,
    /// `tr(P W^n)` for `n < 2J`.
    power_traces: Vec<f64>,
}

impl TrialMats {
    fn new(sample: &ChannelSample, alloc: &PowerAllocation, j: usize) -> Self {
        let k = sample.hhat.ncols() as f64;
        let w = linalg::adjoint_mul(&sample.hhat, &sample.hhat) / Complex64::new(k, 0.0);
        let f = linalg::adjoint_mul(&sample.h, &sample.hhat) / Complex64::new(k.sqrt(), 0.0);
        let mut pows = vec![CMat::identity(w.nrows(), w.ncols())];
        for n in 1..=j {
            pows.push(linalg::matmul(&pows[n - 1], &w));
        }
        let p = alloc.weights();
        let power_traces = (0..2 * j)
            .map(|n| {
                let a = n / 2;
                let b = n - a;
                let (x, y) = (&pows[a], &pows[b]);
                (0..p.len()).map(|i| p[i] * (0..p.len()).map(|jj| x[(i, jj)] * y[(jj, i)]).sum::<Complex64>().re).sum()
            })
            .collect();
        let mut e = vec![f.clone()];
        for l in 1..j {
            e.push(linalg::matmul(&e[l - 1], &w));
        }
        TrialMats { f, w, e, power_traces }
    }

    fn power_form(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for (l, wl) in w.iter().enumerate() {
            for (m, wm) in w.iter().enumerate() {
                s += wl * wm * self.power_traces[l + m + 1];
            }
        }
        s
    }

    fn tpe_sinr(&self, w: &[f64], alloc: &PowerAllocation, p: f64, sigma2: f64) -> Result<Vec<f64>> {
        let mut r = &self.e[0] * Complex64::new(w[0], 0.0);
        for (l, &wl) in w.iter().enumerate().skip(1) {
            r += &self.e[l] * Complex64::new(wl, 0.0);
        }
        linalg::scale_columns(&mut r, &alloc.sqrt_weights());
        let used = self.power_form(w);
        if !(used > 0.0) {
            return Err(TpeError::Numeric("TPE precoder has zero power".into()));
        }
        Ok(sinr_from_received(&r, p / used, sigma2))
    }

    fn rzf_sinr(&self, xi: f64, alloc: &PowerAllocation, p: f64, sigma2: f64) -> Result<Vec<f64>> {
        let k = self.w.nrows();
        let mut reg = self.w.clone();
        for i in 0..k {
            reg[(i, i)] += Complex64::new(xi, 0.0);
        }
        let chol: Cholesky<Complex64, nalgebra::Dyn> =
            reg.cholesky().ok_or_else(|| TpeError::Numeric("RZF Gram matrix is not positive definite".into()))?;
        let mut x = CMat::identity(k, k);
        linalg::scale_columns(&mut x, &alloc.sqrt_weights());
        chol.solve_mut(&mut x);
        let r = linalg::matmul(&self.f, &x);
        let wx = linalg::matmul(&self.w, &x);
        let used: f64 = x.iter().zip(wx.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        Ok(sinr_from_received(&r, p / used, sigma2))
    }

    /// User-averaged `A_k`, `B_k` and the power form `C`.
    fn empirical_forms(&self, alloc: &PowerAllocation) -> (CMat, CMat, CMat) {
        let j = self.e.len();
        let p = alloc.weights();
        let k = p.len();
        let kf = k as f64;
        let a = CMat::from_fn(j, j, |l, m| {
            (0..k).map(|u| self.e[l][(u, u)] * self.e[m][(u, u)].conj() * p[u]).sum::<Complex64>() / kf
        });
        let ab = CMat::from_fn(j, j, |l, m| {
            let (x, y) = (&self.e[l], &self.e[m]);
            let mut s = Complex64::new(0.0, 0.0);
            for n in 0..k {
                let col: Complex64 = (0..k).map(|u| x[(u, n)] * y[(u, n)].conj()).sum();
                s += col * p[n];
            }
            s / kf
        });
        let c = CMat::from_fn(j, j, |l, m| Complex64::new(self.power_traces[l + m + 1], 0.0));
        (a.clone(), ab - a, c)
    }
}

/// Per-trial, per-point reductions.
#[derive(Debug, Clone)]
struct PointOutcome {
    rate: f64,
    sinr: f64,
    class_rates: Vec<f64>,
}

fn summarize(sinr: &[f64], alloc: &PowerAllocation) -> PointOutcome {
    let rates: Vec<f64> = sinr.iter().map(|&s| rate_bits(s)).collect();
    let n = sinr.len() as f64;
    PointOutcome {
        rate: rates.iter().sum::<f64>() / n,
        sinr: sinr.iter().sum::<f64>() / n,
        class_rates: class_means(&rates, alloc),
    }
}

/// Large-system SINR of user `k` for fixed weights:
/// `K p_k/tr(P) · wᵀÃw / (wᵀB̃w + σ²/P·wᵀC̃w)`.
pub fn de_sinr_for_weights(
    mats: &AsymptoticMatrices,
    w: &[f64],
    p: f64,
    sigma2: f64,
    alloc: &PowerAllocation,
) -> Vec<f64> {
    let j = w.len();
    let sub = |m: &RMat| m.view((0, 0), (j, j)).into_owned();
    let q = crate::optimizer::rayleigh_objective(&sub(&mats.a), &sub(&mats.b), &sub(&mats.c), p, sigma2, w);
    let k = alloc.len() as f64;
    let tr = alloc.trace();
    alloc.weights().iter().map(|pk| k * pk / tr * q).collect()
}

fn validate_spec(spec: &SweepSpec, cov: &CovarianceOperator) -> Result<()> {
    let s = &spec.system;
    crate::config::validate_config(s.with_snr_db(0.0), spec.alloc.clone())?;
    if cov.dim() != s.m {
        return Err(TpeError::Dimension(format!("covariance is {0}×{0}, M={1}", cov.dim(), s.m)));
    }
    if spec.trials == 0 {
        return Err(TpeError::InvalidConfig("trials must be at least 1".into()));
    }
    if spec.schemes.is_empty() || spec.snr_db.is_empty() {
        return Err(TpeError::InvalidConfig("need at least one scheme and one SNR".into()));
    }
    if let Some(bad) = spec.snr_db.iter().find(|v| !v.is_finite()) {
        return Err(TpeError::InvalidConfig(format!("invalid SNR {bad}")));
    }
    Ok(())
}

/// Runs every `(scheme, SNR)` point of the sweep over the same channel draws.
///
/// Results are ordered by SNR, then by scheme as listed. Trial outcomes are
/// reduced in trial order, so all parallelism settings agree bit for bit.
pub fn run_sweep(spec: &SweepSpec, cov: &CovarianceOperator, parallelism: Parallelism) -> Result<Vec<SweepPoint>> {
    validate_spec(spec, cov)?;
    let sys = spec.system;
    let alloc = &spec.alloc;
    let needs = |s: EvalScheme| spec.schemes.contains(&s);
    let order = if needs(EvalScheme::Tpe) || needs(EvalScheme::Tpeopt) { sys.j } else { 1 };

    let tables = DerivativeTables::compute(cov, sys.k, order.max(1))?;
    let mats = rmt::assemble_matrices(&tables, sys.tau, order)?;
    let mrt_mats = rmt::assemble_matrices(&tables, sys.tau, 1)?;

    let mut plans = Vec::with_capacity(spec.snr_db.len());
    for &snr in &spec.snr_db {
        let p = db_to_linear(snr) * sys.sigma2;
        let rho = p / sys.sigma2;
        let xi = if needs(EvalScheme::Rzf) {
            Some(rmt::rzf_optimal_regularization(cov, sys.k, sys.tau, rho, XI_TOL)?)
        } else {
            None
        };
        let tpe =
            if needs(EvalScheme::Tpe) { Some(optimal_weights(&mats, p, sys.sigma2, alloc)?.weights) } else { None };
        plans.push(PointPlan { p, xi, tpe });
    }

    let trial = |t: usize| -> Result<Vec<PointOutcome>> {
        let sample = ChannelSample::draw(cov, sys.k, sys.tau, spec.seed, t as u64)?;
        let tm = TrialMats::new(&sample, alloc, order);
        let forms = if needs(EvalScheme::Tpeopt) { Some(tm.empirical_forms(alloc)) } else { None };
        let mut out = Vec::with_capacity(plans.len() * spec.schemes.len());
        for plan in &plans {
            for &scheme in &spec.schemes {
                let sinr = match scheme {
                    EvalScheme::Rzf => tm.rzf_sinr(plan.xi.unwrap(), alloc, plan.p, sys.sigma2)?,
                    EvalScheme::Tpe => tm.tpe_sinr(plan.tpe.as_ref().unwrap().as_slice(), alloc, plan.p, sys.sigma2)?,
                    EvalScheme::Mrt => tm.tpe_sinr(&[1.0], alloc, plan.p, sys.sigma2)?,
                    EvalScheme::Tpeopt => {
                        let (a, b, c) = forms.as_ref().unwrap();
                        let opt = empirical_optimal_weights(a, b, c, plan.p, sys.sigma2)?;
                        tm.tpe_sinr(opt.weights.as_slice(), alloc, plan.p, sys.sigma2)?
                    }
                };
                out.push(summarize(&sinr, alloc));
            }
        }
        Ok(out)
    };
    let wrap = |t: usize| trial(t).map_err(|e| TpeError::Trial { trial: t, source: Box::new(e) });

    let outcomes: Vec<Vec<PointOutcome>> = match parallelism {
        Parallelism::Serial => (0..spec.trials).map(wrap).collect::<Result<_>>()?,
        Parallelism::Pool => (0..spec.trials).into_par_iter().map(wrap).collect::<Result<_>>()?,
        Parallelism::Threads(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| TpeError::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| (0..spec.trials).into_par_iter().map(wrap).collect::<Result<_>>())?
        }
    };

    let mut points = Vec::with_capacity(plans.len() * spec.schemes.len());
    for (pi, plan) in plans.iter().enumerate() {
        let snr = spec.snr_db[pi];
        for (si, &scheme) in spec.schemes.iter().enumerate() {
            let idx = pi * spec.schemes.len() + si;
            let column = |f: &dyn Fn(&PointOutcome) -> f64| outcomes.iter().map(|o| f(&o[idx])).collect::<Vec<_>>();
            let per_class_bits =
                (0..alloc.num_classes()).map(|c| Estimate::from_samples(&column(&|o| o.class_rates[c]))).collect();
            let rate_samples = column(&|o| o.rate);
            let stats = RateStats {
                rate_bits: Estimate::from_samples(&rate_samples),
                sinr: Estimate::from_samples(&column(&|o| o.sinr)),
                per_class_bits,
                trials: spec.trials,
                seed: spec.seed,
                rate_samples,
            };
            let de = match scheme {
                EvalScheme::Tpe => {
                    let w = plan.tpe.as_ref().unwrap();
                    Some(DeRates::from_sinr(de_sinr_for_weights(&mats, w.as_slice(), plan.p, sys.sigma2, alloc), alloc))
                }
                EvalScheme::Mrt => {
                    Some(DeRates::from_sinr(de_sinr_for_weights(&mrt_mats, &[1.0], plan.p, sys.sigma2, alloc), alloc))
                }
                EvalScheme::Rzf => {
                    let xi = plan.xi.unwrap();
                    let rho = plan.p / sys.sigma2;
                    let sinr = alloc
                        .weights()
                        .iter()
                        .map(|&pk| rmt::rzf_asymptotic_sinr(cov, sys.k, xi, sys.tau, rho, pk, alloc.trace()))
                        .collect::<Result<Vec<_>>>()?;
                    Some(DeRates::from_sinr(sinr, alloc))
                }
                EvalScheme::Tpeopt => None,
            };
            points.push(SweepPoint { scheme, snr_db: snr, tau: sys.tau, j: sys.j, stats, de });
        }
    }
    Ok(points)
}

/// Monte Carlo rate of one scheme at the SNR implied by `cfg.p / cfg.sigma2`.
pub fn monte_carlo_rate(
    cfg: &SystemConfig,
    alloc: &PowerAllocation,
    cov: &CovarianceOperator,
    scheme: EvalScheme,
    trials: usize,
    seed: u64,
) -> Result<SweepPoint> {
    let spec = SweepSpec {
        system: *cfg,
        alloc: alloc.clone(),
        snr_db: vec![10.0 * cfg.rho().log10()],
        schemes: vec![scheme],
        trials,
        seed,
    };
    Ok(run_sweep(&spec, cov, Parallelism::Pool)?.remove(0))
}

/// One row of a large-system versus Monte Carlo comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scheme: EvalScheme,
    pub snr_db: f64,
    /// `None` for the all-user average.
    pub class: Option<usize>,
    pub de_rate_bits: f64,
    pub mc: Estimate,
    pub gap_abs: f64,
    pub gap_rel: f64,
}

/// Large-system versus Monte Carlo rates of TPE and RZF, overall and per class.
pub fn asymptotic_vs_empirical(
    cfg: &SystemConfig,
    alloc: &PowerAllocation,
    cov: &CovarianceOperator,
    trials: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    let spec = SweepSpec {
        system: *cfg,
        alloc: alloc.clone(),
        snr_db: vec![10.0 * cfg.rho().log10()],
        schemes: vec![EvalScheme::Tpe, EvalScheme::Rzf],
        trials,
        seed,
    };
    let points = run_sweep(&spec, cov, Parallelism::Pool)?;
    Ok(points.iter().flat_map(comparison_rows).collect())
}

/// Overall and per-class comparison rows of a point with a prediction.
pub fn comparison_rows(pt: &SweepPoint) -> Vec<ComparisonRow> {
    let Some(de) = &pt.de else { return Vec::new() };
    let row = |class, de_rate: f64, mc: Estimate| ComparisonRow {
        scheme: pt.scheme,
        snr_db: pt.snr_db,
        class,
        de_rate_bits: de_rate,
        mc,
        gap_abs: mc.mean - de_rate,
        gap_rel: (mc.mean - de_rate) / de_rate,
    };
    let mut rows = vec![row(None, de.mean_rate_bits, pt.stats.rate_bits)];
    if de.per_class_bits.len() > 1 {
        for (c, (&d, &m)) in de.per_class_bits.iter().zip(&pt.stats.per_class_bits).enumerate() {
            rows.push(row(Some(c), d, m));
        }
    }
    rows
}

pub const CSV_HEADER: &str = "scheme,snr_db,tau,J,class,mean_rate_bits,stderr,de_rate_bits,gap_rel,trials,seed";

/// CSV rows: one for the user average (`class = all`) and one per class
/// when there are several.
pub fn csv_rows(pt: &SweepPoint) -> Vec<String> {
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let row = |class: String, mc: Estimate, de: Option<f64>| {
        let gap = de.map(|d| (mc.mean - d) / d);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            pt.scheme,
            pt.snr_db,
            pt.tau,
            pt.j,
            class,
            mc.mean,
            mc.stderr,
            fmt_opt(de),
            fmt_opt(gap),
            pt.stats.trials,
            pt.stats.seed
        )
    };
    let mut rows = vec![row("all".into(), pt.stats.rate_bits, pt.de.as_ref().map(|d| d.mean_rate_bits))];
    if pt.stats.per_class_bits.len() > 1 {
        for (c, &mc) in pt.stats.per_class_bits.iter().enumerate() {
            rows.push(row((c + 1).to_string(), mc, pt.de.as_ref().map(|d| d.per_class_bits[c])));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::build_covariance;
    use crate::config::{class_power, uniform_power, CovarianceSpec};
    use crate::precoders::{rzf_matrix, tpe_matrix, Provenance};

    fn sample(m: usize, k: usize, tau: f64, seed: u64) -> ChannelSample {
        let cov = build_covariance(&CovarianceSpec::exponential(0.1, m)).unwrap();
        ChannelSample::draw(&cov, k, tau, seed, 0).unwrap()
    }

    #[test]
    fn direct_sinr_basics() {
        let s = sample(6, 1, 0.0, 1);
        let g = s.h.clone() * Complex64::new(0.3, 0.0);
        let r = empirical_sinr_direct(&s.h, &g, 0.5).unwrap();
        let want = s.h.column(0).dotc(&g.column(0)).norm_sqr() / 0.5;
        assert!((r.per_user_sinr[0] - want).abs() < 1e-12 * want);
        assert_eq!(r.per_user_rate_bits[0], (1.0 + r.per_user_sinr[0]).log2());

        let h = CMat::from_fn(3, 2, |i, j| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0));
        let g = CMat::from_fn(3, 2, |i, _| Complex64::new(if i == 2 { 1.0 } else { 0.0 }, 0.0));
        let r = empirical_sinr_direct(&h, &g, 1.0).unwrap();
        assert_eq!(r.per_user_sinr, vec![0.0, 0.0]);
    }

    #[test]
    fn route_equivalence() {
        for seed in 0..10 {
            let s = sample(16, 4, 0.3, seed);
            let alloc = class_power(&[1.0, 2.0], 4).unwrap();
            let w = TpeWeights::new(vec![1.0, -0.3, 0.05], Provenance::Manual).unwrap();
            let g = tpe_matrix(&s.hhat, &w, &alloc).unwrap();
            let direct = empirical_sinr_direct(&s.h, &g.g, 0.7).unwrap();
            for k in 0..4 {
                let qf = quadratic_forms(&s.h, &s.hhat, &alloc, 3, k).unwrap();
                let via = sinr_from_quadratics(&w, &qf, 0.7).unwrap();
                let d = direct.per_user_sinr[k];
                assert!((via - d).abs() / d < 1e-9, "{via} vs {d}");
                let wv = nalgebra::DVector::from_column_slice(w.as_slice()).map(|x| Complex64::new(x, 0.0));
                let power = wv.dotc(&(&qf.c * &wv)).re;
                assert!((power - g.power_used).abs() / g.power_used < 1e-10);
            }
        }
    }

    #[test]
    fn forms_structure() {
        let s = sample(16, 4, 0.2, 3);
        let alloc = uniform_power(1.0, 4).unwrap();
        let qf = quadratic_forms(&s.h, &s.hhat, &alloc, 3, 1).unwrap();
        let (vals, _) = linalg::hermitian_eigen(&qf.a);
        let top = vals.amax();
        assert!(vals.iter().filter(|v| v.abs() > 1e-10 * top).count() <= 1);
        let scale = qf.c.norm();
        assert!((qf.c[(0, 1)] - qf.c[(1, 0)]).norm() < 1e-12 * scale);
        assert!((qf.c[(0, 2)] - qf.c[(1, 1)]).norm() < 1e-10 * scale);
        assert!((qf.c[(1, 2)] - qf.c[(2, 1)]).norm() < 1e-10 * scale);
        let (ab, _) = linalg::hermitian_eigen(&(&qf.a + &qf.b));
        assert!(ab.min() > -1e-10 * ab.amax());
    }

    #[test]
    fn forms_single_order_perfect_csi() {
        let s = sample(12, 3, 0.0, 4);
        let alloc = class_power(&[1.0, 2.0, 3.0], 3).unwrap();
        let qf = quadratic_forms(&s.h, &s.hhat, &alloc, 1, 2).unwrap();
        let n2 = s.h.column(2).norm_squared();
        // u₀ = h_kᴴĥ_k = ‖h_k‖² at τ = 0, A_k = (p_k/K)|u₀|²
        let want = alloc.weights()[2] / 3.0 * n2 * n2;
        assert!((qf.a[(0, 0)].re - want).abs() < 1e-12 * want);
    }

    #[test]
    fn quadratic_sinr_edge_cases() {
        let s = sample(8, 2, 0.1, 5);
        let alloc = uniform_power(1.0, 2).unwrap();
        let qf = quadratic_forms(&s.h, &s.hhat, &alloc, 2, 0).unwrap();
        let zero = TpeWeights::new(vec![0.0, 0.0], Provenance::Manual).unwrap();
        assert_eq!(sinr_from_quadratics(&zero, &qf, 1.0).unwrap(), 0.0);
        let w = TpeWeights::new(vec![1.0, -0.2], Provenance::Manual).unwrap();
        let mut last = 0.0;
        for c in [0.5, 1.0, 2.0, 4.0] {
            let v = sinr_from_quadratics(&w.scaled(c), &qf, 1.0).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn fast_path_matches_explicit_precoders() {
        let cov = build_covariance(&CovarianceSpec::exponential(0.1, 16)).unwrap();
        let s = ChannelSample::draw(&cov, 4, 0.2, 9, 0).unwrap();
        let alloc = class_power(&[1.0, 3.0], 4).unwrap();
        let tm = TrialMats::new(&s, &alloc, 3);
        let (p, sigma2) = (5.0, 1.0);

        let w = TpeWeights::new(vec![0.8, -0.2, 0.02], Provenance::Manual).unwrap();
        let g = tpe_matrix(&s.hhat, &w, &alloc).unwrap();
        let g = crate::precoders::normalize_power(&g.g, g.scheme, p).unwrap();
        let want = empirical_sinr_direct(&s.h, &g.g, sigma2).unwrap().per_user_sinr;
        let got = tm.tpe_sinr(w.as_slice(), &alloc, p, sigma2).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10 * b);
        }

        let g = rzf_matrix(&s.hhat, 0.3, &alloc, p).unwrap();
        let want = empirical_sinr_direct(&s.h, &g.g, sigma2).unwrap().per_user_sinr;
        let got = tm.rzf_sinr(0.3, &alloc, p, sigma2).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10 * b);
        }

        // user-averaged forms agree with the per-user reference route
        let (a, b, c) = tm.empirical_forms(&alloc);
        let mut a_ref = CMat::zeros(3, 3);
        let mut b_ref = CMat::zeros(3, 3);
        for k in 0..4 {
            let qf = quadratic_forms(&s.h, &s.hhat, &alloc, 3, k).unwrap();
            a_ref += qf.a / Complex64::new(4.0, 0.0);
            b_ref += qf.b / Complex64::new(4.0, 0.0);
            if k == 0 {
                assert!((&c - &qf.c).norm() < 1e-10 * c.norm());
            }
        }
        let scale = b_ref.norm();
        assert!((a - a_ref).norm() < 1e-10 * scale);
        assert!((b - b_ref).norm() < 1e-10 * scale);
    }

    fn small_spec(schemes: Vec<EvalScheme>, trials: usize) -> (SweepSpec, CovarianceOperator) {
        let cov = build_covariance(&CovarianceSpec::exponential(0.1, 32)).unwrap();
        let spec = SweepSpec {
            system: SystemConfig::from_snr_db(32, 8, 0.0, 0.2, 3),
            alloc: class_power(&[1.0, 2.0], 8).unwrap(),
            snr_db: vec![0.0, 10.0],
            schemes,
            trials,
            seed: 5,
        };
        (spec, cov)
    }

    #[test]
    fn sweep_is_deterministic_across_parallelism() {
        let all = vec![EvalScheme::Rzf, EvalScheme::Tpe, EvalScheme::Tpeopt, EvalScheme::Mrt];
        let (spec, cov) = small_spec(all, 12);
        let serial = run_sweep(&spec, &cov, Parallelism::Serial).unwrap();
        let pooled = run_sweep(&spec, &cov, Parallelism::Threads(3)).unwrap();
        assert_eq!(serial, pooled);
        let rows: Vec<String> = serial.iter().flat_map(csv_rows).collect();
        assert_eq!(rows.len(), 2 * 4 * 3);
        assert!(rows[0].starts_with("rzf,0,0.2,3,all,"));
    }

    #[test]
    fn sweep_rejects_bad_input() {
        let (mut spec, cov) = small_spec(vec![EvalScheme::Tpe], 0);
        assert!(run_sweep(&spec, &cov, Parallelism::Serial).is_err());
        spec.trials = 2;
        spec.system.tau = 1.5;
        assert!(matches!(run_sweep(&spec, &cov, Parallelism::Serial), Err(TpeError::InvalidTau(_))));
        assert!("zf".parse::<EvalScheme>().is_err());
        assert_eq!("TPEopt".parse::<EvalScheme>().unwrap(), EvalScheme::Tpeopt);
    }

    #[test]
    fn statistics_only_csi_gives_no_tpe_rate() {
        let (mut spec, cov) = small_spec(vec![EvalScheme::Tpe], 4);
        spec.system.tau = 1.0;
        let pts = run_sweep(&spec, &cov, Parallelism::Serial).unwrap();
        assert_eq!(pts[0].de.as_ref().unwrap().mean_rate_bits, 0.0);
    }

    #[test]
    fn estimate() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Estimate::from_samples(&[4.0]).stderr, 0.0);
    }
}

#[cfg(test)]
mod regression;
