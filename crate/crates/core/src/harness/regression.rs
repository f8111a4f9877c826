//! Monte Carlo rate regressions against plotted values and large-system trends.

use super::{asymptotic_vs_empirical, monte_carlo_rate, run_sweep, EvalScheme, Parallelism, SweepSpec};
use crate::channel::build_covariance;
use crate::config::{class_power, uniform_power, CovarianceSpec, SystemConfig};

fn sweep(m: usize, k: usize, tau: f64, j: usize, snr_db: f64, schemes: Vec<EvalScheme>, trials: usize) -> SweepSpec {
    SweepSpec {
        system: SystemConfig::from_snr_db(m, k, snr_db, tau, j),
        alloc: uniform_power(1.0, k).unwrap(),
        snr_db: vec![snr_db],
        schemes,
        trials,
        seed: 7,
    }
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want
}

#[test]
fn small_array_rates_at_20_db() {
    let cov = build_covariance(&CovarianceSpec::exponential(0.1, 128)).unwrap();
    let pts =
        run_sweep(&sweep(128, 32, 0.1, 3, 20.0, vec![EvalScheme::Tpe, EvalScheme::Rzf], 500), &cov, Parallelism::Pool)
            .unwrap();
    let tpe = pts[0].stats.rate_bits.mean;
    let rzf = pts[1].stats.rate_bits.mean;
    assert!(within(tpe, 5.84, 0.05), "TPE {tpe}");
    assert!(within(rzf, 7.25, 0.05), "RZF {rzf}");
}

#[test]
fn large_array_fourth_order_rate() {
    let cov = build_covariance(&CovarianceSpec::exponential(0.1, 512)).unwrap();
    let cfg = SystemConfig::from_snr_db(512, 128, 20.0, 0.1, 4);
    let pt = monte_carlo_rate(&cfg, &uniform_power(1.0, 128).unwrap(), &cov, EvalScheme::Tpe, 100, 7).unwrap();
    assert!(within(pt.stats.rate_bits.mean, 6.70, 0.05), "{}", pt.stats.rate_bits.mean);
}

#[test]
fn class_comparison_table() {
    let cov = build_covariance(&CovarianceSpec::exponential(0.1, 256)).unwrap();
    let cfg = SystemConfig::from_snr_db(256, 64, 20.0, 0.1, 3);
    let alloc = class_power(&[1.0, 2.0, 3.0, 4.0], 64).unwrap();
    let rows = asymptotic_vs_empirical(&cfg, &alloc, &cov, 100, 7).unwrap();
    let tpe_rows: Vec<_> = rows.iter().filter(|r| r.scheme == EvalScheme::Tpe && r.class.is_some()).collect();
    assert_eq!(tpe_rows.len(), 4);
    for r in &tpe_rows {
        assert!(r.gap_rel.abs() < 0.015, "{r:?}");
    }
    // class 4 gets the largest share of power
    assert!(tpe_rows.windows(2).all(|w| w[0].de_rate_bits < w[1].de_rate_bits));
}

#[test]
fn equal_classes_are_exchangeable() {
    let cov = build_covariance(&CovarianceSpec::exponential(0.1, 64)).unwrap();
    let cfg = SystemConfig::from_snr_db(64, 16, 10.0, 0.2, 3);
    let alloc = class_power(&[1.0, 1.0, 1.0, 1.0], 16).unwrap();
    let pt = monte_carlo_rate(&cfg, &alloc, &cov, EvalScheme::Tpe, 400, 3).unwrap();
    let classes = &pt.stats.per_class_bits;
    let mean = classes.iter().map(|c| c.mean).sum::<f64>() / classes.len() as f64;
    for c in classes {
        assert!((c.mean - mean).abs() < 3.0 * c.stderr, "{classes:?}");
    }
}

#[test]
fn statistics_only_csi_sinr_vanishes_with_m() {
    let mut last = f64::INFINITY;
    for m in [32, 128, 512] {
        let cov = build_covariance(&CovarianceSpec::exponential(0.1, m)).unwrap();
        let spec = sweep(m, m / 4, 1.0, 2, 10.0, vec![EvalScheme::Mrt], 50);
        let pt = run_sweep(&spec, &cov, Parallelism::Pool).unwrap().remove(0);
        assert!(pt.de.unwrap().per_user_sinr.iter().all(|&s| s == 0.0));
        let sinr = pt.stats.sinr.mean;
        assert!(sinr < last, "M={m}: {sinr} vs {last}");
        last = sinr;
    }
    assert!(last < 0.05);
}

#[test]
fn de_gap_shrinks_with_m() {
    // M/K = 4, τ = 0.1: |MC mean SINR − DE SINR| shrinks as M grows.
    let mut gaps = Vec::new();
    for m in [32usize, 64, 128, 256] {
        let k = m / 4;
        let cov = build_covariance(&CovarianceSpec::exponential(0.1, m)).unwrap();
        let trials = 400 * 64 / k;
        let pt = run_sweep(&sweep(m, k, 0.1, 3, 10.0, vec![EvalScheme::Tpe], trials), &cov, Parallelism::Pool)
            .unwrap()
            .remove(0);
        let de = pt.de.unwrap().per_user_sinr.iter().sum::<f64>() / k as f64;
        let gap = (pt.stats.sinr.mean - de).abs();
        let half_width = 1.96 * pt.stats.sinr.stderr;
        println!("M={m}: gap {gap:.5} ± {half_width:.5}");
        gaps.push((gap, half_width));
    }
    for w in gaps.windows(2) {
        let ((g0, h0), (g1, h1)) = (w[0], w[1]);
        assert!(g1 - h1 <= g0 + h0, "gap grew beyond confidence: {gaps:?}");
    }
    let (first, last) = (gaps[0], gaps[gaps.len() - 1]);
    assert!(last.0 + last.1 < first.0 - first.1, "{gaps:?}");
}
