#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tpe_core::config::ConfigFile;
use tpe_core::experiments::{self, ExperimentPreset, Manifest, OutputFormat, SweepKind};
use tpe_core::harness::{EvalScheme, Parallelism};
use tpe_core::{Result, TpeError};

#[derive(Parser)]
#[command(name = "tpe-mimo", version, about = "RZF and TPE precoding experiments for massive-MIMO downlink")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset and write its data file and manifest.
    Run(RunArgs),
    /// Print the resolved parameters of a preset.
    Describe(DescribeArgs),
    /// Run a rate sweep over a custom SNR grid from a config file.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Monte Carlo trials per point.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// csv or json; a rerun from a manifest keeps the manifest's format.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Worker threads; 1 runs serially, 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, required_unless_present = "manifest")]
    preset: Option<String>,
    /// JSON system configuration, used by the `custom` preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rerun exactly what a previous manifest describes.
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long)]
    preset: String,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// SNR grid as `start:step:stop` or a comma list, in dB.
    #[arg(long, default_value = "0:4:20")]
    snr_db: String,
    /// Comma list of rzf, tpe, tpeopt, mrt.
    #[arg(long, default_value = "rzf,tpe")]
    schemes: String,
    #[command(flatten)]
    common: Common,
}

fn parallelism(threads: usize) -> Parallelism {
    match threads {
        0 => Parallelism::Pool,
        1 => Parallelism::Serial,
        n => Parallelism::Threads(n),
    }
}

fn load_config(path: Option<&Path>) -> Result<Option<ConfigFile>> {
    path.map(ConfigFile::load).transpose()
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || TpeError::InvalidConfig(format!("bad SNR grid '{text}'"));
    let nums = |sep: char| -> Result<Vec<f64>> {
        text.split(sep).map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect()
    };
    if text.contains(':') {
        let parts = nums(':')?;
        let [start, step, stop] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| start + step * i as f64).collect())
    } else {
        nums(',')
    }
}

fn apply_overrides(p: &mut ExperimentPreset, common: &Common) {
    if let Some(t) = common.trials {
        p.trials = t;
    }
    if let Some(s) = common.seed {
        p.seed = s;
    }
}

fn execute(p: &ExperimentPreset, common: &Common, format: OutputFormat) -> Result<Manifest> {
    let manifest = experiments::run(p, &common.out, format, parallelism(common.threads))?;
    println!("{}", experiments::output_path(&common.out, &manifest).display());
    Ok(manifest)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (mut preset, format) = match &args.manifest {
                Some(path) => {
                    let m = Manifest::load(path)?;
                    (m.preset, m.format)
                }
                None => {
                    let name = args.preset.as_deref().unwrap_or_default();
                    let cfg = load_config(args.config.as_deref())?;
                    (experiments::preset(name, cfg.as_ref())?, args.common.format.parse()?)
                }
            };
            apply_overrides(&mut preset, &args.common);
            execute(&preset, &args.common, format)?;
        }
        Command::Describe(args) => {
            let cfg = load_config(args.config.as_deref())?;
            let preset = experiments::preset(&args.preset, cfg.as_ref())?;
            print!("{}", experiments::describe(&preset));
        }
        Command::Sweep(args) => {
            let cfg = ConfigFile::load(&args.config)?;
            let mut preset = experiments::preset("custom", Some(&cfg))?;
            let grid = parse_grid(&args.snr_db)?;
            let list: Vec<EvalScheme> = args.schemes.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
            if let SweepKind::Snr { snr_db, schemes, .. } = &mut preset.sweep {
                *snr_db = grid;
                *schemes = list;
            }
            preset.name = "sweep".into();
            apply_overrides(&mut preset, &args.common);
            execute(&preset, &args.common, args.common.format.parse()?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
