use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use phc_core::bands::{find_gap, k_path, pwe_te_bands, BandGap};
use phc_core::config::{resolve_design, DesignFile};
use phc_core::cqed::{emitter_report, threshold_curve, EmitterDatabase, EmitterReport, ThresholdModel};
use phc_core::fdtd::{run, Component, MonitorSpec, Waveform};
use phc_core::geometry::DielectricGrid;
use phc_core::gridio::ScalarGrid;
use phc_core::modal::{harmonic_inversion, mode_volume, ringdown_window_start, ModeVolumeResult, ResonanceEstimate};
use phc_core::optimize::{maximize, read_trace, Bounds, DesignVector, NelderMeadOptions};
use phc_core::pipeline::{
    analyze_cavity, base_config, cavity_grid, effective_index, lattice_gap, mode_profile, sweep_with, write_sweep_csv, CavityReport,
    CavityRunSettings, SweepPoint, SweepRow,
};
use phc_core::spectra::{fit_fano, fit_lorentzian, load_spectrum, Spectrum};
use phc_core::{Error, Result};

use crate::context::{io_err, physical, Context};
use crate::{
    BandsArgs, CqedArgs, FanoModel, FitFanoArgs, ModeVolumeArgs, Objective, OptimizeArgs, ResonancesArgs, RunArgs, SimulateArgs, SweepArgs,
};

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Finished, but an iteration budget ran out first.
    BudgetFlag,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

fn settings(ctx: &Context, run: &RunArgs) -> Result<CavityRunSettings> {
    let mut s = ctx.job.simulation.clone();
    if let Some(r) = run.resolution {
        s.resolution = r;
    }
    if let Some(d) = run.dimensionality {
        s.dimensionality = d;
    }
    if let Some(n) = run.n_eff {
        s.n_eff = Some(n);
    }
    if let Some(t) = run.ringdown_time {
        s.ringdown_time = t;
    }
    s.validate()?;
    Ok(s)
}

fn n_eff_for(design: &DesignFile, s: &CavityRunSettings) -> Result<f64> {
    match s.n_eff {
        Some(n) => Ok(n),
        None => effective_index(&design.lattice_spec(), s.n_eff_wavelength),
    }
}

fn gap_for(design: &DesignFile, s: &CavityRunSettings, n_eff: f64) -> Result<BandGap> {
    lattice_gap(&design.lattice_spec(), n_eff, s.plane_waves, s.band_points_per_segment)?
        .ok_or_else(|| Error::NoBandGap(format!("r/a = {} at n_eff = {n_eff:.5}", design.lattice.hole_radius_ratio)))
}

fn save_grid(ctx: &mut Context, name: &str, grid: &ScalarGrid) -> Result<()> {
    let path = ctx.path(name);
    grid.save(&path)?;
    ctx.add_output(path);
    Ok(())
}

fn intensity_grid(values: &[f64], like: &DielectricGrid) -> ScalarGrid {
    let mut g = ScalarGrid::from_dielectric(like);
    g.values = values.to_vec();
    g
}

#[derive(Serialize)]
struct PhysicalMode {
    frequency_thz: f64,
    wavelength_nm: f64,
    q: f64,
}

fn physical_modes(modes: &[ResonanceEstimate], a_nm: Option<f64>) -> Vec<PhysicalMode> {
    let Some(a) = a_nm else { return Vec::new() };
    modes
        .iter()
        .map(|m| {
            let (thz, nm) = physical(m.frequency, a);
            PhysicalMode {
                frequency_thz: thz,
                wavelength_nm: nm,
                q: m.q,
            }
        })
        .collect()
}

/// `frequency_a_over_lambda,[frequency_thz,wavelength_nm,]Q,amplitude,fit_error`.
fn write_resonances(ctx: &mut Context, modes: &[ResonanceEstimate], a_nm: Option<f64>) -> Result<()> {
    let path = ctx.path("resonances.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut header = vec!["frequency_a_over_lambda"];
    if a_nm.is_some() {
        header.extend(["frequency_thz", "wavelength_nm"]);
    }
    header.extend(["Q", "amplitude", "fit_error"]);
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for m in modes {
        let mut row = vec![format!("{:.12e}", m.frequency)];
        if let Some(a) = a_nm {
            let (thz, nm) = physical(m.frequency, a);
            row.extend([format!("{thz:.9e}"), format!("{nm:.9e}")]);
        }
        row.extend([
            format!("{:.6e}", m.q),
            format!("{:.6e}", m.amplitude_abs()),
            format!("{:.3e}", m.fit_error),
        ]);
        w.write_record(&row).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    ctx.add_output(path);
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport {
    design: String,
    resolution: usize,
    dimensionality: usize,
    grid_shape: [usize; 3],
    n_eff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<BandGap>,
    source_frequency: f64,
    source_bandwidth: f64,
    dt: f64,
    total_steps: usize,
    window_start_time: f64,
    source_off_time: Option<f64>,
    wall_seconds: f64,
    cell_updates_per_second: f64,
    max_field: f64,
    resonances: Vec<ResonanceEstimate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    physical: Vec<PhysicalMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode_volume: Option<ModeVolumeResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

pub fn simulate(ctx: &mut Context, args: &SimulateArgs) -> Result<Outcome> {
    let design = ctx.design(args.design.as_deref())?;
    let a_nm = ctx.lattice_nm(Some(&design))?;
    let s = settings(ctx, &args.run)?;
    let analysis = ctx.job.analysis;
    let lattice = design.lattice_spec();
    design.cavity.validate(&lattice)?;
    let n_eff = if s.dimensionality == 2 {
        n_eff_for(&design, &s)?
    } else {
        lattice.slab_index_n
    };
    let gap = match (args.frequency, args.bandwidth) {
        (Some(_), Some(_)) => None,
        _ => Some(gap_for(&design, &s, n_eff_for(&design, &s)?)?),
    };
    let f0 = args
        .frequency
        .or(gap.map(|g| g.midgap()))
        .expect("gap computed when a value is missing");
    let bw = args
        .bandwidth
        .or(gap.map(|g| g.gap_midgap_ratio))
        .expect("gap computed when a value is missing");
    let grid = cavity_grid(&lattice, &design.cavity, &s, n_eff)?;
    save_grid(ctx, "permittivity.phcgrid", &ScalarGrid::from_dielectric(&grid))?;

    let waveform = Waveform::gaussian(f0, bw);
    waveform.validate()?;
    let window = ringdown_window_start(waveform.end_time().unwrap_or(0.0), waveform.width().unwrap_or(0.0));
    let mut cfg = base_config(grid.clone(), &s, waveform);
    let dt = cfg.dt();
    let time = args.time.unwrap_or(window + s.ringdown_time);
    if time.is_nan() || time <= 0.0 {
        return Err(Error::InvalidInput("--time must be positive".into()));
    }
    cfg.total_steps = (time / dt).ceil() as usize;
    let centre = cfg.center_node(Component::Ey);
    cfg.monitors.push(MonitorSpec::probe("centre-ey", Component::Ey, centre));
    cfg.monitors.push(MonitorSpec::Energy { every: s.energy_every });
    cfg.monitors.push(MonitorSpec::Snapshot {
        name: "field".into(),
        components: Component::evolved(s.dimensionality).to_vec(),
        region: None,
        every: args.snapshot_every.unwrap_or(cfg.total_steps).max(1),
        start_step: 0,
    });
    let out = run(&cfg)?;

    for p in &out.probes {
        let path = ctx.path(&format!("probe_{}.csv", p.name));
        p.write_csv(&path)?;
        ctx.add_output(path);
    }
    if let Some(e) = &out.energy {
        let path = ctx.path("energy.csv");
        e.write_csv(&path)?;
        ctx.add_output(path);
    }
    let dir = ctx.path("snapshots");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for snap in &out.snapshots {
        let path = snap.save(&dir, s.resolution, s.dimensionality)?;
        ctx.add_output(path);
    }

    let mut notes = Vec::new();
    let band = gap.map_or(((f0 * (1.0 - bw)).max(1e-9), f0 * (1.0 + bw)), |g| (g.lower, g.upper));
    let mut modes = Vec::new();
    if analysis.resonances || analysis.mode_volume {
        let probe = out.probe("centre-ey").expect("probe was requested");
        let first = ((window / dt).ceil() as usize).min(probe.values.len());
        match harmonic_inversion(&probe.values[first..], dt, band, s.max_modes) {
            Ok(m) => modes = m,
            Err(e) => notes.push(format!("resonances skipped: {e}")),
        }
        write_resonances(ctx, &modes, a_nm)?;
    }
    let mut volume = None;
    if analysis.mode_volume {
        match modes.first() {
            Some(m) => {
                let p = mode_profile(&grid, &s, waveform, m.frequency, window, cfg.total_steps)?;
                save_grid(ctx, "mode_intensity.phcgrid", &intensity_grid(&p.intensity, &grid))?;
                volume = Some(p.volume);
            }
            None => notes.push("mode volume skipped: no resonance in band".into()),
        }
    }
    if analysis.bands {
        let (k, _) = k_path(s.band_points_per_segment);
        let structure = pwe_te_bands(&lattice.with_slab_index(n_eff_for(&design, &s)?), &k, s.plane_waves, 8)?;
        let path = ctx.path("bands.csv");
        structure.write_csv(&path)?;
        ctx.add_output(path);
    }

    let report = SimulateReport {
        design: design.name.clone(),
        resolution: s.resolution,
        dimensionality: s.dimensionality,
        grid_shape: cfg.grid.shape(),
        n_eff,
        gap,
        source_frequency: f0,
        source_bandwidth: bw,
        dt,
        total_steps: cfg.total_steps,
        window_start_time: window,
        source_off_time: out.source_off_time,
        wall_seconds: out.stats.wall_seconds,
        cell_updates_per_second: out.stats.cell_updates_per_second,
        max_field: out.stats.max_field,
        resonances: modes.clone(),
        physical: physical_modes(&modes, a_nm),
        mode_volume: volume,
        notes,
    };
    ctx.write_toml("simulate.toml", &report)?;
    println!(
        "simulated {} steps on a {:?} grid in {:.1} s",
        cfg.total_steps,
        cfg.grid.shape(),
        out.stats.wall_seconds
    );
    if analysis.resonances {
        print_modes(&modes);
    }
    ctx.finish("simulate")?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct ResonanceReport<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    cavity: Option<&'a CavityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    signal: Option<SignalInfo>,
    resonances: &'a [ResonanceEstimate],
    #[serde(skip_serializing_if = "Vec::is_empty")]
    physical: Vec<PhysicalMode>,
}

#[derive(Serialize)]
struct SignalInfo {
    path: String,
    samples: usize,
    dt: f64,
    band: (f64, f64),
}

/// Reads `step,time,value` (or `time,value`) and returns `(dt, values)`.
fn read_probe(path: &Path) -> Result<(f64, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (ti, vi) = match (col("time"), col("value")) {
        (Some(t), Some(v)) => (t, v),
        _ => return Err(Error::InvalidInput(format!("{}: need `time` and `value` columns", path.display()))),
    };
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|s| s.trim().parse().ok()).ok_or(Error::Parse {
                line: n as u64 + 2,
                message: format!("{}: not a number", path.display()),
            })
        };
        times.push(num(ti)?);
        values.push(num(vi)?);
    }
    if times.len() < 2 {
        return Err(Error::InvalidInput(format!("{}: too few samples", path.display())));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::InvalidInput(format!("{}: samples are not evenly spaced", path.display())));
    }
    Ok((dt, values))
}

pub fn resonances(ctx: &mut Context, args: &ResonancesArgs) -> Result<Outcome> {
    if let Some(input) = &args.input {
        let band = args.band.ok_or_else(|| Error::InvalidInput("--in needs --band LO,HI".into()))?;
        ctx.add_input(input);
        let (dt, values) = read_probe(input)?;
        let skip = args.skip.unwrap_or(0).min(values.len());
        let max_modes = args.max_modes.unwrap_or(ctx.job.simulation.max_modes);
        let modes = harmonic_inversion(&values[skip..], dt, band, max_modes)?;
        let a_nm = ctx.lattice_nm(None)?;
        write_resonances(ctx, &modes, a_nm)?;
        let report = ResonanceReport {
            cavity: None,
            signal: Some(SignalInfo {
                path: input.to_string_lossy().into_owned(),
                samples: values.len() - skip,
                dt,
                band,
            }),
            resonances: &modes,
            physical: physical_modes(&modes, a_nm),
        };
        ctx.write_toml("resonances.toml", &report)?;
        print_modes(&modes);
        ctx.finish("resonances")?;
        return Ok(Outcome::Done);
    }
    let design = ctx.design(args.design.as_deref())?;
    let a_nm = ctx.lattice_nm(Some(&design))?;
    let mut s = settings(ctx, &args.run)?;
    s.mode_profile = false;
    if let Some(m) = args.max_modes {
        s.max_modes = m;
    }
    let analysis = analyze_cavity(&design.lattice_spec(), &design.cavity, &s)?;
    if let Some(p) = analysis.ringdown.probe("centre-ey") {
        let path = ctx.path("probe_centre-ey.csv");
        p.write_csv(&path)?;
        ctx.add_output(path);
    }
    let r = &analysis.report;
    write_resonances(ctx, &r.resonances, a_nm)?;
    let report = ResonanceReport {
        cavity: Some(r),
        signal: None,
        resonances: &r.resonances,
        physical: physical_modes(&r.resonances, a_nm),
    };
    ctx.write_toml("resonances.toml", &report)?;
    println!("band gap {:.5} .. {:.5} a/lambda", r.gap.lower, r.gap.upper);
    print_modes(&r.resonances);
    ctx.finish("resonances")?;
    Ok(Outcome::Done)
}

fn print_modes(modes: &[ResonanceEstimate]) {
    if modes.is_empty() {
        println!("no resonances in band");
    }
    for m in modes {
        println!(
            "f = {:.6} a/lambda  Q = {:.1}  |amplitude| = {:.3e}",
            m.frequency,
            m.q,
            m.amplitude_abs()
        );
    }
}

#[derive(Serialize)]
struct ModeVolumeReport<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    cavity: Option<&'a CavityReport>,
    mode_volume: &'a ModeVolumeResult,
    wavelength_a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    volume_nm3: Option<f64>,
    /// 2D runs: area times slab thickness, in (lambda/n)^3.
    #[serde(skip_serializing_if = "Option::is_none")]
    volume_extruded: Option<f64>,
}

pub fn modevolume(ctx: &mut Context, args: &ModeVolumeArgs) -> Result<Outcome> {
    if let Some(ipath) = &args.intensity {
        let (epath, wavelength) = match (&args.permittivity, args.wavelength) {
            (Some(e), Some(w)) => (e, w),
            _ => return Err(Error::InvalidInput("--intensity needs --permittivity and --wavelength".into())),
        };
        ctx.add_input(ipath);
        ctx.add_input(epath);
        let grid = ScalarGrid::load(epath)?.into_dielectric()?;
        let intensity = ScalarGrid::load(ipath)?;
        if intensity.shape != grid.shape() {
            return Err(Error::InvalidInput(format!(
                "intensity grid {:?} does not match permittivity grid {:?}",
                intensity.shape,
                grid.shape()
            )));
        }
        let v = mode_volume(&intensity.values, &grid, wavelength, args.index)?;
        let a_nm = ctx.lattice_nm(None)?;
        let report = ModeVolumeReport {
            cavity: None,
            mode_volume: &v,
            wavelength_a: wavelength,
            volume_nm3: a_nm.map(|a| v.volume_physical * a.powi(grid.dimensionality() as i32)),
            volume_extruded: None,
        };
        ctx.write_toml("modevolume.toml", &report)?;
        println!("V = {:.4} (lambda/n)^{}", v.volume_normalized, grid.dimensionality());
        ctx.finish("modevolume")?;
        return Ok(Outcome::Done);
    }
    let design = ctx.design(args.design.as_deref())?;
    let a_nm = ctx.lattice_nm(Some(&design))?;
    let mut s = settings(ctx, &args.run)?;
    s.mode_profile = true;
    let analysis = analyze_cavity(&design.lattice_spec(), &design.cavity, &s)?;
    save_grid(ctx, "permittivity.phcgrid", &ScalarGrid::from_dielectric(&analysis.grid))?;
    if let Some(i) = &analysis.intensity {
        save_grid(ctx, "mode_intensity.phcgrid", &intensity_grid(i, &analysis.grid))?;
    }
    let r = &analysis.report;
    write_resonances(ctx, &r.resonances, a_nm)?;
    let (Some(v), Some(m)) = (&r.mode_volume, &r.dominant) else {
        return Err(Error::Degenerate(
            "no resonance inside the band gap to take a mode volume of".into(),
        ));
    };
    let report = ModeVolumeReport {
        cavity: Some(r),
        mode_volume: v,
        wavelength_a: 1.0 / m.frequency,
        volume_nm3: a_nm.map(|a| v.volume_physical * a.powi(s.dimensionality as i32)),
        volume_extruded: r.mode_volume_extruded,
    };
    ctx.write_toml("modevolume.toml", &report)?;
    println!(
        "f = {:.6} a/lambda  Q = {:.1}  V = {:.4} (lambda/n)^{}",
        m.frequency, m.q, v.volume_normalized, s.dimensionality
    );
    ctx.finish("modevolume")?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct BandsReport {
    design: String,
    n_eff: f64,
    plane_waves: usize,
    points_per_segment: usize,
    bands: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<BandGap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_wavelength_nm: Option<(f64, f64)>,
}

pub fn bands(ctx: &mut Context, args: &BandsArgs) -> Result<Outcome> {
    let design = ctx.design(args.design.as_deref())?;
    let a_nm = ctx.lattice_nm(Some(&design))?;
    let s = &ctx.job.simulation;
    let n_eff = match args.n_eff.or(s.n_eff) {
        Some(n) => n,
        None => effective_index(&design.lattice_spec(), s.n_eff_wavelength)?,
    };
    let pw = args.plane_waves.unwrap_or(s.plane_waves);
    let pps = args.points_per_segment.unwrap_or(s.band_points_per_segment);
    let (k, _) = k_path(pps);
    let lattice = design.lattice_spec().with_slab_index(n_eff);
    let structure = pwe_te_bands(&lattice, &k, pw, args.bands)?;
    let gap = find_gap(&structure);
    let path = ctx.path("bands.csv");
    structure.write_csv(&path)?;
    ctx.add_output(path);
    let report = BandsReport {
        design: design.name.clone(),
        n_eff,
        plane_waves: pw,
        points_per_segment: pps,
        bands: args.bands,
        gap,
        gap_wavelength_nm: match (gap, a_nm) {
            (Some(g), Some(a)) => Some((a / g.upper, a / g.lower)),
            _ => None,
        },
    };
    ctx.write_toml("bands.toml", &report)?;
    match gap {
        Some(g) => println!(
            "TE gap {:.5} .. {:.5} a/lambda (gap/midgap {:.2}%) at n_eff = {n_eff:.5}",
            g.lower,
            g.upper,
            100.0 * g.gap_midgap_ratio
        ),
        None => println!("no TE gap at n_eff = {n_eff:.5}"),
    }
    ctx.finish("bands")?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct CqedReport {
    q: f64,
    v_normalized: f64,
    xi: f64,
    emitter: Vec<EmitterReport>,
}

pub fn cqed(ctx: &mut Context, args: &CqedArgs) -> Result<Outcome> {
    let db = match &args.emitters {
        Some(p) => {
            ctx.add_input(p);
            EmitterDatabase::load(p)?
        }
        None => EmitterDatabase::builtin(),
    };
    let chosen: Vec<_> = if args.emitter.is_empty() {
        db.emitters.clone()
    } else {
        args.emitter
            .iter()
            .map(|n| {
                db.get(n)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("unknown emitter {n:?}")))
            })
            .collect::<Result<_>>()?
    };
    if chosen.is_empty() {
        return Err(Error::InvalidInput("no emitters to report on".into()));
    }
    let reports = chosen
        .iter()
        .map(|e| emitter_report(args.q, args.v, args.xi, e))
        .collect::<Result<Vec<_>>>()?;

    let volumes: Vec<f64> = match &args.volumes {
        Some(v) => v.clone(),
        None => (0..=40).map(|k| 0.1 * 100f64.powf(k as f64 / 40.0)).collect(),
    };
    let path = ctx.path("threshold.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["emitter", "v_lambda_over_n_cubed", "q_threshold"])
        .map_err(|e| csv_err(&path, e))?;
    for e in &chosen {
        for p in threshold_curve(&volumes, e, ThresholdModel::Full)? {
            w.write_record([e.name.clone(), format!("{:.6e}", p.v_normalized), format!("{:.6e}", p.q_threshold)])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    ctx.add_output(path);

    for r in &reports {
        println!(
            "{}: F_P = {:.1}  I = {:.3}  beta = {:.3}  linewidth = {:.4} nm  Q* = {:.0} (F_P* = {:.0})  regime: {:?}",
            r.emitter, r.purcell, r.indistinguishability, r.beta, r.linewidth_nm, r.threshold_q, r.purcell_at_threshold, r.regime
        );
    }
    let report = CqedReport {
        q: args.q,
        v_normalized: args.v,
        xi: args.xi,
        emitter: reports,
    };
    ctx.write_toml("cqed.toml", &report)?;
    ctx.finish("cqed")?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct FitReport<T: Serialize> {
    input: String,
    model: &'static str,
    points: usize,
    noise_fraction: f64,
    seed: u64,
    fit: T,
}

pub fn fit_fano_cmd(ctx: &mut Context, args: &FitFanoArgs) -> Result<Outcome> {
    ctx.add_input(&args.input);
    let mut spectrum = load_spectrum(&args.input)?;
    if args.noise > 0.0 {
        spectrum = with_noise(&spectrum, args.noise, ctx.seed)?;
        let path = ctx.path("spectrum_noisy.csv");
        spectrum.write_csv(&path)?;
        ctx.add_output(path);
    } else if args.noise < 0.0 {
        return Err(Error::InvalidInput("--noise must be non-negative".into()));
    }
    let input = args.input.to_string_lossy().into_owned();
    let (points, noise_fraction, seed) = (spectrum.len(), args.noise, ctx.seed);
    match args.model {
        FanoModel::Fano => {
            let fit = match fit_fano(&spectrum, None) {
                Err(Error::NoConvergence { iterations, residual, .. }) => {
                    eprintln!("fit did not converge in {iterations} iterations (rms {residual:.3e})");
                    return Err(Error::NoConvergence {
                        iterations,
                        residual,
                        last_iterate: Vec::new(),
                    });
                }
                other => other?,
            };
            let path = ctx.path("fano_curve.csv");
            fit.write_curve_csv(&spectrum, &path)?;
            ctx.add_output(path);
            println!(
                "lambda_0 = {:.5} nm  FWHM = {:.5} nm  q = {:.4}  Q = {:.1} +/- {:.1}",
                fit.lambda_0,
                fit.fwhm,
                fit.q_fano,
                fit.q_factor,
                fit.q_factor_sigma()
            );
            let report = FitReport {
                input,
                model: "fano",
                points,
                noise_fraction,
                seed,
                fit,
            };
            ctx.write_toml("fano.toml", &report)?;
        }
        FanoModel::Lorentzian => {
            let fit = fit_lorentzian(&spectrum)?;
            println!(
                "lambda_0 = {:.5} nm  FWHM = {:.5} nm  Q = {:.1}",
                fit.lambda_0, fit.fwhm, fit.q_factor
            );
            let report = FitReport {
                input,
                model: "lorentzian",
                points,
                noise_fraction,
                seed,
                fit,
            };
            ctx.write_toml("lorentzian.toml", &report)?;
        }
    }
    ctx.finish("fit-fano")?;
    Ok(Outcome::Done)
}

/// Multiplicative Gaussian noise, reproducible from `seed`.
fn with_noise(s: &Spectrum, fraction: f64, seed: u64) -> Result<Spectrum> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, fraction).map_err(|e| Error::InvalidInput(format!("noise: {e}")))?;
    let intensity = s.intensity.iter().map(|y| (y * (1.0 + normal.sample(&mut rng))).max(0.0)).collect();
    Spectrum::new(s.wavelength_nm.clone(), intensity, None)
}

/// Expands `--designs` and `--lx` into named points, optionally crossed with radii.
fn sweep_points(args: &SweepArgs) -> Result<Vec<SweepPoint>> {
    let mut names: Vec<String> = args.designs.clone();
    if let Some((lo, hi)) = args.lx {
        if lo == 0 || hi < lo {
            return Err(Error::InvalidInput(format!("--lx {lo}..{hi} is not a valid range")));
        }
        names.extend((lo..=hi).map(|x| format!("l{x}")));
    }
    let mut points = Vec::new();
    for name in names {
        let d = resolve_design(&name)?;
        let label = if d.name.is_empty() { name.clone() } else { d.name.clone() };
        if args.radius.is_empty() {
            points.push(SweepPoint {
                name: label,
                lattice: d.lattice_spec(),
                design: d.cavity.clone(),
            });
        } else {
            for r in &args.radius {
                let mut lattice = d.lattice_spec();
                lattice.hole_radius_ratio = *r;
                points.push(SweepPoint {
                    name: format!("{label}@r{r}"),
                    lattice,
                    design: d.cavity.clone(),
                });
            }
        }
    }
    for p in &points {
        p.lattice.validate()?;
        p.design.validate(&p.lattice)?;
    }
    Ok(points)
}

pub fn sweep(ctx: &mut Context, args: &SweepArgs) -> Result<Outcome> {
    let points = sweep_points(args)?;
    let s = settings(ctx, &args.run)?;
    let log_path = ctx.path("sweep.log");
    let log = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?,
    );
    let rows = sweep_with(&points, &s, ctx.workers, |index, row: &SweepRow| {
        let line = format!(
            "{index}\t{}\t{}\t{}\t{}\n",
            row.name,
            row.frequency.map_or("-".into(), |f| format!("{f:.6}")),
            row.q.map_or("-".into(), |q| format!("{q:.1}")),
            row.error.as_deref().unwrap_or("ok")
        );
        if let Ok(mut f) = log.lock() {
            let _ = f.write_all(line.as_bytes());
        }
    })?;
    ctx.add_output(log_path);
    let path = ctx.path("sweep.csv");
    write_sweep_csv(&path, &rows)?;
    ctx.add_output(path);
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} points, {} failed", rows.len(), failed);
    for r in &rows {
        match (r.frequency, r.q) {
            (Some(f), Some(q)) => println!("{:<16} f = {f:.6}  Q = {q:.1}", r.name),
            _ => println!("{:<16} {}", r.name, r.error.as_deref().unwrap_or("-")),
        }
    }
    ctx.finish("sweep")?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct OptimizeReport {
    objective: Objective,
    holes: usize,
    budget: usize,
    evaluations: usize,
    resumed_from: usize,
    restarts: usize,
    budget_exhausted: bool,
    initial_value: f64,
    best_value: f64,
    initial_x: Vec<f64>,
    best_x: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

pub fn optimize(ctx: &mut Context, args: &OptimizeArgs) -> Result<Outcome> {
    if args.budget < 10 {
        return Err(Error::InvalidInput(format!(
            "--budget {} is below the minimum of 10 evaluations",
            args.budget
        )));
    }
    let design = ctx.design(args.design.as_deref())?;
    let mut s = settings(ctx, &args.run)?;
    s.mode_profile = args.objective == Objective::QOverV;
    let lattice = design.lattice_spec();
    let start = DesignVector::from_design(&lattice, &design.cavity, args.holes);
    let bounds = Bounds::for_design(args.holes);
    let mut x0 = start.to_vec();
    bounds.clamp(&mut x0);
    let options = NelderMeadOptions {
        budget: args.budget,
        initial_step: args.step,
        ..Default::default()
    };
    let trace_path: PathBuf = ctx.path("trace.csv");
    let resumed_from = if trace_path.exists() { read_trace(&trace_path)?.len() } else { 0 };
    let objective = args.objective;
    let evaluate = |x: &[f64]| -> Result<f64> {
        let (lat, cav) = DesignVector::from_slice(x)?.apply(&lattice, &design.cavity)?;
        let a = analyze_cavity(&lat, &cav, &s)?;
        let m = a
            .report
            .dominant
            .ok_or_else(|| Error::Degenerate("no resonance inside the band gap".into()))?;
        match objective {
            Objective::Q => Ok(m.q),
            Objective::QOverV => {
                let v = a.report.mode_volume.ok_or_else(|| Error::Degenerate("no mode volume".into()))?;
                Ok(m.q / v.volume_normalized)
            }
        }
    };
    let pool = rayon_pool(ctx.workers)?;
    let result = pool.install(|| maximize(evaluate, &x0, &bounds, &options, Some(&trace_path)))?;
    ctx.add_output(trace_path);

    let (best_lat, best_cav) = DesignVector::from_slice(&result.best_x)?.apply(&lattice, &design.cavity)?;
    let mut best = DesignFile::new(&format!("{}-optimized", design.name), &best_lat, &best_cav);
    best.lattice.lattice_constant_nm = design.lattice.lattice_constant_nm;
    let best_path = ctx.path("best.cfg");
    fs::write(&best_path, best.to_toml()).map_err(|e| io_err(&best_path, e))?;
    ctx.add_output(best_path);

    let report = OptimizeReport {
        objective,
        holes: args.holes,
        budget: args.budget,
        evaluations: result.evaluations,
        resumed_from,
        restarts: result.restarts,
        budget_exhausted: result.budget_exhausted,
        initial_value: result.initial_value,
        best_value: result.best_value,
        initial_x: x0,
        best_x: result.best_x.clone(),
        lower: bounds.lower.clone(),
        upper: bounds.upper.clone(),
    };
    ctx.write_toml("optimize.toml", &report)?;
    println!(
        "best objective {:.4} (start {:.4}) after {} evaluations{}",
        result.best_value,
        result.initial_value,
        result.evaluations,
        if result.budget_exhausted { ", budget exhausted" } else { "" }
    );
    ctx.finish("optimize")?;
    Ok(if result.budget_exhausted {
        Outcome::BudgetFlag
    } else {
        Outcome::Done
    })
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
}
