//! `phc`: batch front end for the phc-core toolkit.
//!
//! Every command writes into `--out` (default `phc-out`): its tables as CSV,
//! its report as TOML, grids as PHCGRID1, plus `job.toml` and
//! `manifest.toml`. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure, 4 budget or convergence flag.

mod commands;
mod context;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use phc_core::config::JobConfig;
use phc_core::{Error, ErrorClass};

use commands::Outcome;
use context::{Context, Units};

#[derive(Parser)]
#[command(name = "phc", version, about = "Photonic crystal cavity simulation and analysis")]
struct Cli {
    /// Job file (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for anything random; recorded in every manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps and optimizer batches.
    #[arg(long, global = true, env = "PHC_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Units::Normalized)]
    units: Units,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a design and run one FDTD ring-down.
    Simulate(SimulateArgs),
    /// Resonances of a cavity, or of a probe CSV given with --in.
    Resonances(ResonancesArgs),
    /// Mode volume of the dominant resonance, or of a saved intensity grid.
    Modevolume(ModeVolumeArgs),
    /// TE band structure of the design's lattice.
    Bands(BandsArgs),
    /// Purcell factor, indistinguishability, beta and strong-coupling threshold.
    Cqed(CqedArgs),
    /// Fit a Fano (or Lorentzian) lineshape to a spectrum CSV.
    FitFano(FitFanoArgs),
    /// Analyse several designs in parallel.
    Sweep(SweepArgs),
    /// Nelder-Mead over edge-hole shifts, radius reductions and r/a.
    Optimize(OptimizeArgs),
}

/// Simulation settings shared by the FDTD-backed commands.
#[derive(Args, Clone, Default)]
pub struct RunArgs {
    /// Cells per lattice constant.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// 2 (effective-index TE) or 3 (full slab).
    #[arg(long)]
    pub dimensionality: Option<usize>,
    /// Override the slab effective index used in 2D.
    #[arg(long)]
    pub n_eff: Option<f64>,
    /// Ring-down window length, in a/c.
    #[arg(long)]
    pub ringdown_time: Option<f64>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Design file or preset name (l3, l3_s1, l3_sr1, l3_sr3, l5, ...).
    #[arg(long)]
    pub design: Option<String>,
    #[command(flatten)]
    pub run: RunArgs,
    /// Source center frequency in a/lambda; midgap by default.
    #[arg(long)]
    pub frequency: Option<f64>,
    /// Source fractional bandwidth; the gap/midgap ratio by default.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Simulated time in a/c; pulse plus ring-down window by default.
    #[arg(long)]
    pub time: Option<f64>,
    /// Field snapshot interval in steps; only the final fields by default.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Args)]
pub struct ResonancesArgs {
    #[arg(long)]
    pub design: Option<String>,
    #[command(flatten)]
    pub run: RunArgs,
    /// Probe CSV with `time` and `value` columns, analysed instead of a simulation.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Search band for --in, as LO,HI in the probe's frequency units.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    /// Leading samples of --in to drop.
    #[arg(long)]
    pub skip: Option<usize>,
    #[arg(long)]
    pub max_modes: Option<usize>,
}

#[derive(Args)]
pub struct ModeVolumeArgs {
    #[arg(long)]
    pub design: Option<String>,
    #[command(flatten)]
    pub run: RunArgs,
    /// |E|^2 grid (PHCGRID1) analysed instead of a simulation.
    #[arg(long)]
    pub intensity: Option<PathBuf>,
    /// Permittivity grid (PHCGRID1) matching --intensity.
    #[arg(long)]
    pub permittivity: Option<PathBuf>,
    /// Resonance wavelength for --intensity, in a.
    #[arg(long)]
    pub wavelength: Option<f64>,
    /// Refractive index for the (lambda/n)^D normalization; index at the field maximum by default.
    #[arg(long)]
    pub index: Option<f64>,
}

#[derive(Args)]
pub struct BandsArgs {
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub n_eff: Option<f64>,
    /// Odd perfect square, at least 121.
    #[arg(long)]
    pub plane_waves: Option<usize>,
    #[arg(long)]
    pub points_per_segment: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub bands: usize,
}

#[derive(Args)]
pub struct CqedArgs {
    /// Cavity quality factor.
    #[arg(long = "Q")]
    pub q: f64,
    /// Mode volume in (lambda/n)^3.
    #[arg(long = "V")]
    pub v: f64,
    /// Dipole overlap, 0..1.
    #[arg(long, default_value_t = 1.0)]
    pub xi: f64,
    /// Emitter name; repeatable. All emitters in the database by default.
    #[arg(long)]
    pub emitter: Vec<String>,
    /// Emitter database (TOML) replacing the bundled one.
    #[arg(long)]
    pub emitters: Option<PathBuf>,
    /// Mode volumes for threshold.csv, comma separated and increasing.
    #[arg(long, value_delimiter = ',')]
    pub volumes: Option<Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FanoModel {
    Fano,
    Lorentzian,
}

#[derive(Args)]
pub struct FitFanoArgs {
    /// Spectrum CSV: wavelength (nm), intensity, optional uncertainty.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FanoModel::Fano)]
    pub model: FanoModel,
    /// Multiplicative Gaussian noise added before fitting (seeded).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Design files or preset names, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub designs: Vec<String>,
    /// Bare Lx cavities for x in MIN..MAX.
    #[arg(long, value_parser = parse_range)]
    pub lx: Option<(usize, usize)>,
    /// Hole radii r/a crossed with every design, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub radius: Vec<f64>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Q,
    QOverV,
}

#[derive(Args)]
pub struct OptimizeArgs {
    /// Starting design; its first --holes modifications and r/a seed the simplex.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub holes: usize,
    /// Objective evaluations, at least 10.
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    #[arg(long, value_enum, default_value_t = Objective::Q)]
    pub objective: Objective,
    /// Initial simplex edge as a fraction of each bound range.
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((lo, hi))
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or("expected MIN..MAX")?;
    let lo = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((lo, hi))
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Budget => 4,
    }
}

fn execute(cli: Cli) -> phc_core::Result<Outcome> {
    let job = match &cli.config {
        Some(p) => JobConfig::load(p)?,
        None => JobConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| job.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("phc-out"));
    let seed = cli.seed.unwrap_or(job.seed);
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::InvalidInput("--workers must be at least 1".into()));
    }
    let mut ctx = Context::new(job, cli.config.as_deref(), out, seed, workers, cli.units);
    ctx.prepare_out()?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&mut ctx, a),
        Command::Resonances(a) => commands::resonances(&mut ctx, a),
        Command::Modevolume(a) => commands::modevolume(&mut ctx, a),
        Command::Bands(a) => commands::bands(&mut ctx, a),
        Command::Cqed(a) => commands::cqed(&mut ctx, a),
        Command::FitFano(a) => commands::fit_fano_cmd(&mut ctx, a),
        Command::Sweep(a) => commands::sweep(&mut ctx, a),
        Command::Optimize(a) => commands::optimize(&mut ctx, a),
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    class: &'a str,
    message: String,
}

fn record_error(out: Option<&Path>, class: &str, message: &str) {
    if let Some(dir) = out.filter(|d| d.is_dir()) {
        let rec = ErrorRecord {
            class,
            message: message.to_string(),
        };
        if let Ok(text) = toml::to_string(&rec) {
            let _ = std::fs::write(dir.join("error.toml"), text);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out.clone();
    match execute(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::BudgetFlag) => ExitCode::from(exit_code(ErrorClass::Budget)),
        Err(e) => {
            let class = e.class().as_str();
            eprintln!("error[{class}]: {e}");
            record_error(out.as_deref(), class, &e.to_string());
            ExitCode::from(exit_code(e.class()))
        }
    }
}
