//! Named experiment presets and their runner.
//!
//! A preset is a fully resolved, serializable description of a sweep. Runs
//! write one data file plus `manifest.json`; the manifest embeds the preset
//! so a run can be repeated from it alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::build_covariance;
use crate::complexity::{figure_rzf_ops, ops_per_coherence, ComplexityInputs, ComplexityScheme};
use crate::config::{ConfigFile, CovarianceEntry, PowerEntry, SystemConfig};
use crate::error::{Result, TpeError};
use crate::harness::{self, Estimate, EvalScheme, Parallelism, SweepPoint, SweepSpec, DEFAULT_TRIALS};

pub const PRESET_NAMES: [&str; 7] = ["fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "custom"];
pub const DEFAULT_SEED: u64 = 7;
const NATS_PER_BIT: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = TpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(TpeError::InvalidConfig(format!("unknown output format '{other}'"))),
        }
    }
}

/// One TPE order and SNR of a rate-loss sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCase {
    #[serde(rename = "J")]
    pub j: usize,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepKind {
    /// Operation counts over coherence periods.
    Complexity {
        #[serde(rename = "M")]
        m: usize,
        #[serde(rename = "K")]
        k: usize,
        orders: Vec<usize>,
        t_coherence: Vec<f64>,
        eta_dl: f64,
        mu: f64,
    },
    /// Rates over an SNR grid for every `(τ, J)` combination.
    Snr {
        #[serde(rename = "M")]
        m: usize,
        #[serde(rename = "K")]
        k: usize,
        orders: Vec<usize>,
        taus: Vec<f64>,
        snr_db: Vec<f64>,
        schemes: Vec<EvalScheme>,
        sigma2: f64,
        covariance: CovarianceEntry,
        power: PowerEntry,
    },
    /// RZF minus TPE rate over a grid of user counts at fixed `M/K`.
    Users {
        k_values: Vec<usize>,
        antennas_per_user: usize,
        cases: Vec<LossCase>,
        tau: f64,
        sigma2: f64,
        covariance: CovarianceEntry,
        /// Trials at the largest K; smaller K get proportionally more.
        scale_trials_with_k: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub name: String,
    pub title: String,
    pub sweep: SweepKind,
    pub trials: usize,
    pub seed: u64,
}

fn grid(start: f64, step: f64, stop: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

#[allow(clippy::too_many_arguments)]
fn snr_preset(
    name: &str,
    title: &str,
    (m, k): (usize, usize),
    orders: Vec<usize>,
    taus: Vec<f64>,
    snr_db: Vec<f64>,
    schemes: Vec<EvalScheme>,
    power: PowerEntry,
) -> ExperimentPreset {
    ExperimentPreset {
        name: name.into(),
        title: title.into(),
        sweep: SweepKind::Snr {
            m,
            k,
            orders,
            taus,
            snr_db,
            schemes,
            sigma2: 1.0,
            covariance: CovarianceEntry::Exponential { a: 0.1 },
            power,
        },
        trials: DEFAULT_TRIALS,
        seed: DEFAULT_SEED,
    }
}

/// Built-in preset by name; `custom` needs a config file.
pub fn preset(name: &str, config: Option<&ConfigFile>) -> Result<ExperimentPreset> {
    use EvalScheme::*;
    let p = match name {
        "fig2" => ExperimentPreset {
            name: name.into(),
            title: "Operations per coherence period of RZF, RZF2 and TPE".into(),
            sweep: SweepKind::Complexity {
                m: 500,
                k: 100,
                orders: (1..=5).collect(),
                t_coherence: std::iter::once(402.0).chain(grid(410.0, 20.0, 910.0)).collect(),
                eta_dl: 0.5,
                mu: 2.0,
            },
            trials: 0,
            seed: 0,
        },
        "fig3" => snr_preset(
            name,
            "Per-user rate versus SNR for several CSI qualities",
            (128, 32),
            vec![3],
            vec![0.1, 0.4, 0.7],
            grid(0.0, 4.0, 20.0),
            vec![Rzf, Tpe],
            PowerEntry::Uniform,
        ),
        "fig4" => snr_preset(
            name,
            "Per-user rate versus SNR for several TPE orders",
            (512, 128),
            vec![2, 3, 4],
            vec![0.1],
            grid(0.0, 4.0, 20.0),
            vec![Rzf, Tpe],
            PowerEntry::Uniform,
        ),
        "fig5" => ExperimentPreset {
            name: name.into(),
            title: "Per-user rate loss of TPE against RZF versus K at M/K = 4".into(),
            sweep: SweepKind::Users {
                k_values: (1..=8).map(|i| 8 * i).collect(),
                antennas_per_user: 4,
                cases: vec![
                    LossCase { j: 3, snr_db: 10.0 },
                    LossCase { j: 4, snr_db: 10.0 },
                    LossCase { j: 5, snr_db: 10.0 },
                    LossCase { j: 4, snr_db: 12.0 },
                ],
                tau: 0.1,
                sigma2: 1.0,
                covariance: CovarianceEntry::Exponential { a: 0.1 },
                scale_trials_with_k: true,
            },
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
        },
        "fig6" => snr_preset(
            name,
            "Per-user rate of RZF, TPE and per-realization optimized TPE",
            (128, 32),
            vec![3],
            vec![0.4],
            grid(0.0, 4.0, 20.0),
            vec![Rzf, Tpe, Tpeopt],
            PowerEntry::Uniform,
        ),
        "fig7" => snr_preset(
            name,
            "Per-class rate with four power classes, large-system and Monte Carlo",
            (256, 64),
            vec![3],
            vec![0.1],
            grid(0.0, 2.0, 20.0),
            vec![Tpe],
            PowerEntry::Classes { weights: vec![1.0, 2.0, 3.0, 4.0] },
        ),
        "custom" => {
            let cfg = config.ok_or_else(|| TpeError::InvalidConfig("preset 'custom' needs --config".into()))?;
            cfg.resolve()?;
            let snr_db = match cfg.snr_db {
                Some(s) => vec![s],
                None => vec![10.0 * (cfg.total_power()? / cfg.sigma2).log10()],
            };
            ExperimentPreset {
                name: name.into(),
                title: "User-supplied configuration".into(),
                sweep: SweepKind::Snr {
                    m: cfg.m,
                    k: cfg.k,
                    orders: vec![cfg.j],
                    taus: vec![cfg.tau],
                    snr_db,
                    schemes: vec![Rzf, Tpe],
                    sigma2: cfg.sigma2,
                    covariance: cfg.covariance.clone(),
                    power: cfg.power.clone(),
                },
                trials: DEFAULT_TRIALS,
                seed: DEFAULT_SEED,
            }
        }
        other => {
            return Err(TpeError::InvalidConfig(format!(
                "unknown preset '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(p)
}

fn list<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn grid_text(xs: &[f64]) -> String {
    if xs.len() > 2 {
        let step = xs[1] - xs[0];
        if xs.windows(2).all(|w| ((w[1] - w[0]) - step).abs() < 1e-9) {
            return format!("{}:{}:{}", xs[0], step, xs[xs.len() - 1]);
        }
    }
    list(xs)
}

fn covariance_text(c: &CovarianceEntry) -> String {
    match c {
        CovarianceEntry::Exponential { a } => format!("exponential, a = {a}"),
        CovarianceEntry::Identity => "identity".into(),
        CovarianceEntry::Explicit { .. } => "explicit matrix".into(),
    }
}

fn power_text(p: &PowerEntry) -> String {
    match p {
        PowerEntry::Uniform => "uniform, p_k = P/K".into(),
        PowerEntry::Classes { weights } => format!("classes ({}), p_k = c/K", list(weights)),
    }
}

/// Human-readable parameter sheet.
pub fn describe(p: &ExperimentPreset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "preset: {}", p.name);
    let _ = writeln!(s, "title: {}", p.title);
    match &p.sweep {
        SweepKind::Complexity { m, k, orders, t_coherence, eta_dl, mu } => {
            let _ = writeln!(s, "M: {m}");
            let _ = writeln!(s, "K: {k}");
            let _ = writeln!(s, "J: {}", list(orders));
            let _ = writeln!(s, "T_coherence: {}", list(t_coherence));
            let _ = writeln!(s, "downlink fraction: {eta_dl}");
            let _ = writeln!(s, "pilot uses per user: {mu}");
            let _ = writeln!(s, "schemes: rzf, rzf2, tpe");
            let _ = writeln!(s, "note: rows tagged rzf_figure add 2K^2M to the rzf count");
        }
        SweepKind::Snr { m, k, orders, taus, snr_db, schemes, sigma2, covariance, power } => {
            let _ = writeln!(s, "M: {m}");
            let _ = writeln!(s, "K: {k}");
            let _ = writeln!(s, "J: {}", list(orders));
            let _ = writeln!(s, "tau: {}", list(taus));
            let _ = writeln!(s, "SNR [dB]: {}", grid_text(snr_db));
            let _ = writeln!(s, "sigma2: {sigma2}");
            let _ = writeln!(s, "covariance: {}", covariance_text(covariance));
            let _ = writeln!(s, "power: {}", power_text(power));
            let _ = writeln!(s, "schemes: {}", list(schemes));
            let _ = writeln!(s, "RZF regularization: large-system optimum per SNR and tau");
            let _ = writeln!(s, "TPE weights: large-system optimum per SNR, fixed across trials");
        }
        SweepKind::Users { k_values, antennas_per_user, cases, tau, sigma2, covariance, scale_trials_with_k } => {
            let _ = writeln!(s, "K: {}", list(k_values));
            let _ = writeln!(s, "M: {antennas_per_user}K");
            let cases: Vec<String> = cases.iter().map(|c| format!("J={} at {} dB", c.j, c.snr_db)).collect();
            let _ = writeln!(s, "cases: {}", cases.join("; "));
            let _ = writeln!(s, "tau: {tau}");
            let _ = writeln!(s, "sigma2: {sigma2}");
            let _ = writeln!(s, "covariance: {}", covariance_text(covariance));
            let _ = writeln!(s, "power: uniform, p_k = P/K");
            let _ = writeln!(s, "metric: RZF minus TPE per-user rate, bits and nats");
            if *scale_trials_with_k {
                let _ = writeln!(s, "trial scaling: trials x (largest K / K)");
            }
        }
    }
    if !matches!(p.sweep, SweepKind::Complexity { .. }) {
        let _ = writeln!(s, "trials: {}", p.trials);
        let _ = writeln!(s, "seed: {}", p.seed);
    }
    s
}

/// Short content hash of the preset.
pub fn config_hash(p: &ExperimentPreset) -> String {
    let canonical = serde_json::to_string(p).expect("preset serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// One row of a rate-loss sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossPoint {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub snr_db: f64,
    pub tau: f64,
    pub rzf_rate_bits: f64,
    pub tpe_rate_bits: f64,
    /// Paired RZF − TPE difference in bits.
    pub loss_bits: Estimate,
    pub trials: usize,
    pub seed: u64,
}

impl LossPoint {
    pub fn loss_nats(&self) -> f64 {
        self.loss_bits.mean * NATS_PER_BIT
    }
}

/// RZF − TPE rate loss at `M = antennas_per_user·K` for each case.
#[allow(clippy::too_many_arguments)]
pub fn rate_loss(
    k: usize,
    antennas_per_user: usize,
    cases: &[LossCase],
    tau: f64,
    sigma2: f64,
    covariance: &CovarianceEntry,
    trials: usize,
    seed: u64,
    parallelism: Parallelism,
) -> Result<Vec<LossPoint>> {
    let m = antennas_per_user * k;
    let cov = build_covariance(&covariance.to_spec(m)?)?;
    let alloc = PowerEntry::Uniform.resolve(1.0, k)?;
    let mut out = Vec::new();
    let mut snrs: Vec<f64> = Vec::new();
    for c in cases {
        if !snrs.contains(&c.snr_db) {
            snrs.push(c.snr_db);
        }
    }
    for snr in snrs {
        let mut system = SystemConfig::from_snr_db(m, k, snr, tau, 1);
        system.sigma2 = sigma2;
        let rzf_spec =
            SweepSpec { system, alloc: alloc.clone(), snr_db: vec![snr], schemes: vec![EvalScheme::Rzf], trials, seed };
        let rzf = harness::run_sweep(&rzf_spec, &cov, parallelism)?.remove(0);
        for c in cases.iter().filter(|c| c.snr_db == snr) {
            let spec = SweepSpec {
                system: SystemConfig { j: c.j, ..system },
                schemes: vec![EvalScheme::Tpe],
                ..rzf_spec.clone()
            };
            let tpe = harness::run_sweep(&spec, &cov, parallelism)?.remove(0);
            let diffs: Vec<f64> =
                rzf.stats.rate_samples.iter().zip(&tpe.stats.rate_samples).map(|(a, b)| a - b).collect();
            out.push(LossPoint {
                k,
                m,
                j: c.j,
                snr_db: snr,
                tau,
                rzf_rate_bits: rzf.stats.rate_bits.mean,
                tpe_rate_bits: tpe.stats.rate_bits.mean,
                loss_bits: Estimate::from_samples(&diffs),
                trials,
                seed,
            });
        }
    }
    Ok(out)
}

/// Trials used at user count `k` of a rate-loss sweep.
pub fn trials_for_k(base: usize, k: usize, k_max: usize, scale: bool) -> usize {
    if scale {
        (base * k_max).div_ceil(k)
    } else {
        base
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub scheme: String,
    #[serde(rename = "J")]
    pub j: Option<usize>,
    pub t_coherence: f64,
    pub t_data: u64,
    pub ops: u64,
}

pub fn complexity_rows(
    m: usize,
    k: usize,
    orders: &[usize],
    t_coherence: &[f64],
    eta_dl: f64,
    mu: f64,
) -> Result<Vec<ComplexityRow>> {
    let mut rows = Vec::new();
    let j_ref = orders.first().copied().unwrap_or(1);
    for &t in t_coherence {
        let base = ComplexityInputs::from_coherence(m, k, j_ref, t, eta_dl, mu)?;
        let row = |scheme: &str, j: Option<usize>, ops: u64| ComplexityRow {
            scheme: scheme.into(),
            j,
            t_coherence: t,
            t_data: base.t_data,
            ops,
        };
        rows.push(row("rzf", None, ops_per_coherence(ComplexityScheme::Rzf, &base).per_coherence_ops));
        rows.push(row("rzf_figure", None, figure_rzf_ops(&base)));
        rows.push(row("rzf2", None, ops_per_coherence(ComplexityScheme::Rzf2, &base).per_coherence_ops));
        for &j in orders {
            let inputs = ComplexityInputs { j: j as u64, ..base };
            rows.push(row("tpe", Some(j), ops_per_coherence(ComplexityScheme::Tpe, &inputs).per_coherence_ops));
        }
    }
    Ok(rows)
}

/// Results of one preset run, in output order.
#[derive(Debug, Clone, PartialEq)]
pub enum RunResult {
    Complexity(Vec<ComplexityRow>),
    Rates(Vec<SweepPoint>),
    Loss(Vec<LossPoint>),
}

/// Computes a preset without writing anything.
pub fn execute(p: &ExperimentPreset, parallelism: Parallelism) -> Result<RunResult> {
    match &p.sweep {
        SweepKind::Complexity { m, k, orders, t_coherence, eta_dl, mu } => {
            Ok(RunResult::Complexity(complexity_rows(*m, *k, orders, t_coherence, *eta_dl, *mu)?))
        }
        SweepKind::Snr { m, k, orders, taus, snr_db, schemes, sigma2, covariance, power } => {
            let cov = build_covariance(&covariance.to_spec(*m)?)?;
            let alloc = power.resolve(1.0, *k)?;
            let mut points = Vec::new();
            for &tau in taus {
                for (oi, &j) in orders.iter().enumerate() {
                    // RZF does not depend on J
                    let schemes: Vec<EvalScheme> =
                        schemes.iter().copied().filter(|&s| oi == 0 || s != EvalScheme::Rzf).collect();
                    if schemes.is_empty() {
                        continue;
                    }
                    let mut system = SystemConfig::from_snr_db(*m, *k, 0.0, tau, j);
                    system.sigma2 = *sigma2;
                    let spec = SweepSpec {
                        system,
                        alloc: alloc.clone(),
                        snr_db: snr_db.clone(),
                        schemes,
                        trials: p.trials,
                        seed: p.seed,
                    };
                    points.extend(harness::run_sweep(&spec, &cov, parallelism)?);
                }
            }
            Ok(RunResult::Rates(points))
        }
        SweepKind::Users { k_values, antennas_per_user, cases, tau, sigma2, covariance, scale_trials_with_k } => {
            let k_max = k_values.iter().copied().max().unwrap_or(1);
            let mut rows = Vec::new();
            for &k in k_values {
                let trials = trials_for_k(p.trials, k, k_max, *scale_trials_with_k);
                rows.extend(rate_loss(
                    k,
                    *antennas_per_user,
                    cases,
                    *tau,
                    *sigma2,
                    covariance,
                    trials,
                    p.seed,
                    parallelism,
                )?);
            }
            Ok(RunResult::Loss(rows))
        }
    }
}

fn csv_header_comment(p: &ExperimentPreset) -> String {
    format!(
        "# preset: {} seed: {} config_hash: {}\n# config: {}\n",
        p.name,
        p.seed,
        config_hash(p),
        serde_json::to_string(p).expect("preset serializes")
    )
}

/// Serializes a result in the requested format.
pub fn render(p: &ExperimentPreset, result: &RunResult, format: OutputFormat) -> Result<String> {
    if format == OutputFormat::Json {
        let data = match result {
            RunResult::Complexity(rows) => serde_json::to_value(rows)?,
            RunResult::Rates(points) => serde_json::to_value(points)?,
            RunResult::Loss(rows) => serde_json::to_value(
                rows.iter()
                    .map(|r| {
                        let mut v = serde_json::to_value(r).expect("row serializes");
                        v["loss_nats"] = serde_json::Value::from(r.loss_nats());
                        v
                    })
                    .collect::<Vec<_>>(),
            )?,
        };
        let doc = serde_json::json!({
            "preset": p,
            "config_hash": config_hash(p),
            "seed": p.seed,
            "results": data,
        });
        return Ok(serde_json::to_string_pretty(&doc)? + "\n");
    }
    let mut s = csv_header_comment(p);
    match result {
        RunResult::Complexity(rows) => {
            s.push_str("scheme,J,T_coherence,T_data,ops\n");
            for r in rows {
                let j = r.j.map(|j| j.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{},{}", r.scheme, j, r.t_coherence, r.t_data, r.ops);
            }
        }
        RunResult::Rates(points) => {
            s.push_str(harness::CSV_HEADER);
            s.push('\n');
            for pt in points {
                for row in harness::csv_rows(pt) {
                    s.push_str(&row);
                    s.push('\n');
                }
            }
        }
        RunResult::Loss(rows) => {
            s.push_str("K,M,J,snr_db,tau,rzf_rate_bits,tpe_rate_bits,loss_bits,loss_nats,stderr_bits,trials,seed\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.k,
                    r.m,
                    r.j,
                    r.snr_db,
                    r.tau,
                    r.rzf_rate_bits,
                    r.tpe_rate_bits,
                    r.loss_bits.mean,
                    r.loss_nats(),
                    r.loss_bits.stderr,
                    r.trials,
                    r.seed
                );
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: ExperimentPreset,
    pub config_hash: String,
    pub seed: u64,
    pub format: OutputFormat,
    pub tool_version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Runs a preset and writes `<name>.<csv|json>` and the manifest into `out_dir`.
pub fn run(p: &ExperimentPreset, out_dir: &Path, format: OutputFormat, parallelism: Parallelism) -> Result<Manifest> {
    let start = Instant::now();
    let result = execute(p, parallelism)?;
    let text = render(p, &result, format)?;
    fs::create_dir_all(out_dir)?;
    let ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let file = format!("{}.{ext}", p.name);
    fs::write(out_dir.join(&file), text)?;
    let manifest = Manifest {
        preset: p.clone(),
        config_hash: config_hash(p),
        seed: p.seed,
        format,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: vec![file],
    };
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Path of the main data file written by [`run`].
pub fn output_path(out_dir: &Path, manifest: &Manifest) -> PathBuf {
    out_dir.join(&manifest.outputs[0])
}
