//! Operation counts of RZF and TPE precoding per coherence period.
//!
//! Counts are abstract complex-operation tallies. RZF precomputes its
//! precoder once per coherence period and then spends a matrix-vector
//! product per symbol; the alternative RZF2 ordering solves per symbol; TPE
//! never forms a matrix and pays `2J−1` matrix-vector products per symbol.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Result, TpeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplexityScheme {
    Rzf,
    Rzf2,
    Tpe,
}

impl fmt::Display for ComplexityScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComplexityScheme::Rzf => "rzf",
            ComplexityScheme::Rzf2 => "rzf2",
            ComplexityScheme::Tpe => "tpe",
        })
    }
}

/// `T_data = η·T_coherence − μK`; fails when negative.
pub fn data_symbols(t_coherence: f64, eta_dl: f64, mu: f64, k: usize) -> Result<f64> {
    if !(eta_dl > 0.0 && eta_dl <= 1.0) {
        return Err(TpeError::InvalidConfig(format!("downlink fraction must lie in (0, 1], got {eta_dl}")));
    }
    if !(mu >= 1.0) || !(t_coherence >= 0.0) {
        return Err(TpeError::InvalidConfig(format!(
            "need mu ≥ 1 and T_coherence ≥ 0, got mu={mu}, T_coherence={t_coherence}"
        )));
    }
    let t = eta_dl * t_coherence - mu * k as f64;
    if t < 0.0 {
        return Err(TpeError::NegativeDataSymbols(t));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityInputs {
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "J")]
    pub j: u64,
    /// Data channel uses; a fractional `η·T_coherence − μK` is floored.
    pub t_data: u64,
}

impl ComplexityInputs {
    pub fn new(m: usize, k: usize, j: usize, t_data: u64) -> Result<Self> {
        if m == 0 || k == 0 || j == 0 {
            return Err(TpeError::InvalidConfig("M, K and J must be positive".into()));
        }
        Ok(ComplexityInputs { m: m as u64, k: k as u64, j: j as u64, t_data })
    }

    /// Inputs for a coherence period split into pilots and downlink data.
    pub fn from_coherence(m: usize, k: usize, j: usize, t_coherence: f64, eta_dl: f64, mu: f64) -> Result<Self> {
        let t = data_symbols(t_coherence, eta_dl, mu, k)?;
        Self::new(m, k, j, t.floor() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub scheme: ComplexityScheme,
    pub per_coherence_ops: u64,
    pub first_symbol_ops: u64,
    /// Formula terms; they sum to `per_coherence_ops`.
    pub breakdown: BTreeMap<&'static str, i64>,
    /// False when a `K³/3` term had to be rounded.
    pub exact: bool,
}

/// `num·K³/3` rounded to the nearest integer, and whether it was exact.
fn cube_third(k: i64, num: i64) -> (i64, bool) {
    let v = num * k * k * k;
    let q = v / 3;
    match v % 3 {
        0 => (q, true),
        1 => (q, false),
        _ => (q + 1, false),
    }
}

pub fn ops_per_coherence(scheme: ComplexityScheme, inputs: &ComplexityInputs) -> ComplexityReport {
    let (m, k, j, t) = (inputs.m as i64, inputs.k as i64, inputs.j as i64, inputs.t_data as i64);
    let mut terms: Vec<(&'static str, i64)> = Vec::new();
    let mut exact = true;
    match scheme {
        ComplexityScheme::Rzf => {
            let (cube, ok) = cube_third(k, 1);
            exact = ok;
            terms.push(("4K^2M", 4 * k * k * m));
            terms.push(("K^3/3", cube));
            terms.push(("K(M+2)", k * (m + 2)));
            terms.push(("-K^2", -k * k));
            terms.push(("T_data(2MK-M)", t * (2 * m * k - m)));
        }
        ComplexityScheme::Rzf2 => {
            let (cube, ok) = cube_third(k, 4);
            exact = ok;
            terms.push(("2K^2M", 2 * k * k * m));
            terms.push(("4K^3/3", cube));
            terms.push(("-K^2", -k * k));
            terms.push(("2K", 2 * k));
            terms.push(("T_data(4MK-2M+K)", t * (4 * m * k - 2 * m + k)));
        }
        ComplexityScheme::Tpe => {
            terms.push(("T_data((4J-2)MK)", t * (4 * j - 2) * m * k));
            terms.push(("T_data((J-1)M)", t * (j - 1) * m));
            terms.push(("T_data(K(2-J))", t * k * (2 - j)));
        }
    }
    let total: i64 = terms.iter().map(|(_, v)| v).sum();
    ComplexityReport {
        scheme,
        per_coherence_ops: total.max(0) as u64,
        first_symbol_ops: first_symbol_delay(scheme, inputs.m, inputs.k, inputs.j),
        breakdown: terms.into_iter().collect(),
        exact,
    }
}

/// Extra `2K²M` carried by the RZF series of the published complexity
/// figure relative to the RZF count above.
pub fn figure_rzf_offset(inputs: &ComplexityInputs) -> u64 {
    2 * inputs.k * inputs.k * inputs.m
}

/// RZF count as plotted in the published complexity figure.
pub fn figure_rzf_ops(inputs: &ComplexityInputs) -> u64 {
    ops_per_coherence(ComplexityScheme::Rzf, inputs).per_coherence_ops + figure_rzf_offset(inputs)
}

/// Leading-order operations before the first symbol can be sent.
pub fn first_symbol_delay(scheme: ComplexityScheme, m: u64, k: u64, j: u64) -> u64 {
    match scheme {
        ComplexityScheme::Rzf => 4 * m * k * k,
        ComplexityScheme::Rzf2 => 2 * m * k * k,
        ComplexityScheme::Tpe => 4 * j * m * k,
    }
}

/// First-symbol delay ratios `(RZF/TPE, RZF2/TPE) = (K/J, K/(2J))`.
pub fn first_symbol_speedup(m: u64, k: u64, j: u64) -> (f64, f64) {
    let tpe = first_symbol_delay(ComplexityScheme::Tpe, m, k, j) as f64;
    (
        first_symbol_delay(ComplexityScheme::Rzf, m, k, j) as f64 / tpe,
        first_symbol_delay(ComplexityScheme::Rzf2, m, k, j) as f64 / tpe,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakEven {
    /// `T_data` at which RZF and TPE cost the same; TPE is cheaper below it.
    pub exact: f64,
    /// `K/(J−1)`; `None` for `J = 1`.
    pub approximation: Option<f64>,
}

/// Solves `C_RZF(T) = C_TPE(T)` for `T`.
pub fn break_even(m: usize, k: usize, j: usize) -> Result<BreakEven> {
    if m == 0 || k == 0 || j == 0 {
        return Err(TpeError::InvalidConfig("M, K and J must be positive".into()));
    }
    let (mf, kf, jf) = (m as f64, k as f64, j as f64);
    let intercept = 4.0 * kf * kf * mf + kf.powi(3) / 3.0 + kf * (mf + 2.0) - kf * kf;
    let slope_gap = 4.0 * (jf - 1.0) * mf * kf + jf * mf + (2.0 - jf) * kf;
    let approximation = if j >= 2 { Some(kf / (jf - 1.0)) } else { None };
    Ok(BreakEven { exact: intercept / slope_gap, approximation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(j: usize, t: u64) -> ComplexityInputs {
        ComplexityInputs::new(500, 100, j, t).unwrap()
    }

    #[test]
    fn published_points() {
        assert_eq!(ops_per_coherence(ComplexityScheme::Tpe, &inputs(3, 1)).per_coherence_ops, 500_900);
        assert_eq!(ops_per_coherence(ComplexityScheme::Tpe, &inputs(1, 1)).per_coherence_ops, 100_100);
        let rzf2 = ops_per_coherence(ComplexityScheme::Rzf2, &inputs(3, 1));
        assert_eq!(rzf2.per_coherence_ops, 11_522_633);
        assert!(!rzf2.exact);
        assert_eq!(figure_rzf_ops(&inputs(3, 1)), 30_473_033);
    }

    #[test]
    fn breakdown_sums() {
        for scheme in [ComplexityScheme::Rzf, ComplexityScheme::Rzf2, ComplexityScheme::Tpe] {
            let r = ops_per_coherence(scheme, &inputs(4, 37));
            assert_eq!(r.breakdown.values().sum::<i64>(), r.per_coherence_ops as i64);
        }
        let r = ops_per_coherence(ComplexityScheme::Rzf, &ComplexityInputs::new(10, 3, 2, 0).unwrap());
        assert!(r.exact);
    }

    #[test]
    fn first_symbol() {
        assert_eq!(first_symbol_delay(ComplexityScheme::Tpe, 128, 32, 2), 32_768);
        assert_eq!(first_symbol_delay(ComplexityScheme::Rzf, 128, 32, 2), 524_288);
        let (rzf, rzf2) = first_symbol_speedup(500, 100, 4);
        assert_eq!(rzf2, 12.5);
        assert_eq!(rzf, 25.0);
    }

    #[test]
    fn break_even_examples() {
        let b = break_even(500, 100, 2).unwrap();
        assert_eq!(b.approximation, Some(100.0));
        assert!((b.exact - 100.0).abs() / 100.0 < 0.15);
        let b = break_even(500, 100, 1).unwrap();
        assert_eq!(b.approximation, None);
        assert!(b.exact > 0.0);
        // TPE is cheaper just below the threshold and dearer above it
        let b = break_even(500, 100, 3).unwrap();
        let cost = |s, t| ops_per_coherence(s, &inputs(3, t)).per_coherence_ops;
        let below = b.exact.floor() as u64;
        assert!(cost(ComplexityScheme::Tpe, below) < cost(ComplexityScheme::Rzf, below));
        assert!(cost(ComplexityScheme::Tpe, below + 1) > cost(ComplexityScheme::Rzf, below + 1));
    }

    #[test]
    fn data_symbol_examples() {
        assert_eq!(data_symbols(402.0, 0.5, 2.0, 100).unwrap(), 1.0);
        assert_eq!(data_symbols(1000.0, 0.5, 2.0, 100).unwrap(), 300.0);
        assert_eq!(data_symbols(400.0, 0.5, 2.0, 100).unwrap(), 0.0);
        assert!(matches!(data_symbols(398.0, 0.5, 2.0, 100), Err(TpeError::NegativeDataSymbols(_))));
        let zero = ComplexityInputs::from_coherence(500, 100, 3, 400.0, 0.5, 2.0).unwrap();
        assert_eq!(ops_per_coherence(ComplexityScheme::Tpe, &zero).per_coherence_ops, 0);
        assert_eq!(ops_per_coherence(ComplexityScheme::Rzf, &zero).per_coherence_ops, 20_373_533);
        assert_eq!(ComplexityInputs::from_coherence(500, 100, 3, 403.0, 0.5, 2.0).unwrap().t_data, 1);
    }

    proptest::proptest! {
        #[test]
        fn tpe_is_linear_without_intercept(m in 1usize..2000, k in 1usize..400, j in 1usize..9, t in 0u64..5000) {
            let at = |t| ops_per_coherence(ComplexityScheme::Tpe, &ComplexityInputs::new(m, k, j, t).unwrap()).per_coherence_ops;
            proptest::prop_assert_eq!(at(0), 0);
            proptest::prop_assert_eq!(at(t), t * at(1));
            let rzf = ops_per_coherence(ComplexityScheme::Rzf, &ComplexityInputs::new(m, k, j, 0).unwrap());
            proptest::prop_assert!(rzf.per_coherence_ops > 0);
        }

        #[test]
        fn tpe_starts_first(m in 1u64..2000, k in 2u64..400, j in 1u64..9) {
            if 2 * j < k {
                proptest::prop_assert!(
                    first_symbol_delay(ComplexityScheme::Tpe, m, k, j) < first_symbol_delay(ComplexityScheme::Rzf2, m, k, j)
                );
            }
        }
    }
}
