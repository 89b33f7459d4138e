//! Geometry to FDTD to resonance, Q and mode-volume reports.
//!
//! A cavity analysis:
//!
//! 1. reduces the slab to 2D with the effective index of its fundamental TE
//!    mode (3D runs keep the slab index),
//! 2. computes the TE band gap of the surrounding lattice by plane waves,
//! 3. rasterizes the cavity and drives it with an Ey dipole at its center,
//!    pulsed across the gap,
//! 4. inverts the center-probe ring-down inside the gap,
//! 5. re-runs with a DFT monitor at the dominant frequency over the same
//!    ring-down window for the mode profile, volume and mirror symmetry.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{find_gap, k_path, pwe_te_bands, BandGap};
use crate::error::{invalid, Error, Result};
use crate::fdtd::{run, Boundary, Component, MonitorSpec, PmlSpec, RunResult, SimulationConfig, SourceSpec, Waveform};
use crate::geometry::{
    enumerate_holes, rasterize, slab_effective_index, CavityDesign, DielectricGrid, GridSpec, LatticeSpec, Polarization, Smoothing,
    MIN_RESOLUTION,
};
use crate::modal::{
    extruded_volume, harmonic_inversion, mode_volume, ringdown_q, ringdown_window_start, ModeVolumeResult, ResonanceEstimate,
};

/// Modes whose amplitude reaches this fraction of the strongest in-gap mode count as dominant.
pub const DOMINANCE_RATIO: f64 = 0.1;

fn default_resolution() -> usize {
    16
}
fn default_dimensionality() -> usize {
    2
}
fn default_padding() -> f64 {
    1.0
}
fn default_courant() -> f64 {
    0.5
}
fn default_subpixel() -> usize {
    4
}
fn default_neff_wavelength() -> f64 {
    2.75
}
fn default_plane_waves() -> usize {
    121
}
fn default_band_points() -> usize {
    crate::bands::POINTS_PER_SEGMENT
}
fn default_ringdown() -> f64 {
    400.0
}
fn default_max_modes() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_energy_every() -> usize {
    10
}

/// Knobs of a cavity analysis. Lengths are in units of `a`, times in `a / c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityRunSettings {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// 2 (effective-index TE) or 3 (full slab).
    #[serde(default = "default_dimensionality")]
    pub dimensionality: usize,
    /// Slab margin between the outermost holes and the absorber.
    #[serde(default = "default_padding")]
    pub padding: f64,
    /// Air above and below the slab in 3D, excluding the absorber.
    #[serde(default = "default_padding")]
    pub z_padding: f64,
    #[serde(default = "default_courant")]
    pub courant_factor: f64,
    #[serde(default)]
    pub pml: PmlSpec,
    /// Sub-cells per side for boundary smoothing; 0 disables it.
    #[serde(default = "default_subpixel")]
    pub subpixel: usize,
    /// Overrides the computed effective index.
    #[serde(default)]
    pub n_eff: Option<f64>,
    /// Free-space wavelength, in `a`, at which the effective index is evaluated.
    #[serde(default = "default_neff_wavelength")]
    pub n_eff_wavelength: f64,
    #[serde(default = "default_plane_waves")]
    pub plane_waves: usize,
    #[serde(default = "default_band_points")]
    pub band_points_per_segment: usize,
    /// Length of the analysed ring-down window.
    #[serde(default = "default_ringdown")]
    pub ringdown_time: f64,
    #[serde(default = "default_max_modes")]
    pub max_modes: usize,
    /// Second run for the mode profile and volume.
    #[serde(default = "default_true")]
    pub mode_profile: bool,
    #[serde(default = "default_energy_every")]
    pub energy_every: usize,
}

impl Default for CavityRunSettings {
    fn default() -> Self {
        toml::from_str("").expect("all settings have defaults")
    }
}

impl CavityRunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.dimensionality != 2 && self.dimensionality != 3 {
            return Err(invalid("dimensionality must be 2 or 3"));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(invalid(format!(
                "resolution {} is below the minimum {MIN_RESOLUTION}",
                self.resolution
            )));
        }
        let limit = 1.0 / (self.dimensionality as f64).sqrt();
        if !(self.courant_factor > 0.0 && self.courant_factor <= limit) {
            return Err(invalid(format!("courant_factor must lie in (0, {limit:.4}]")));
        }
        if !(self.padding >= 0.0 && self.z_padding >= 0.0) {
            return Err(invalid("padding must be non-negative"));
        }
        if !(self.ringdown_time > 0.0) {
            return Err(invalid("ringdown_time must be positive"));
        }
        if self.max_modes == 0 || self.energy_every == 0 || self.band_points_per_segment == 0 {
            return Err(invalid("max_modes, energy_every and band_points_per_segment must be positive"));
        }
        if let Some(n) = self.n_eff {
            if !(n > 1.0) {
                return Err(invalid("n_eff override must exceed 1"));
            }
        }
        if !(self.n_eff_wavelength > 0.0) {
            return Err(invalid("n_eff_wavelength must be positive"));
        }
        Ok(())
    }

    fn smoothing(&self) -> Smoothing {
        if self.subpixel == 0 {
            Smoothing::Off
        } else {
            Smoothing::Subpixel(self.subpixel)
        }
    }
}

/// Effective index of the slab's fundamental TE mode at `wavelength` (in `a`).
pub fn effective_index(lattice: &LatticeSpec, wavelength: f64) -> Result<f64> {
    slab_effective_index(
        lattice.slab_index_n,
        lattice.background_index,
        lattice.slab_thickness_ratio,
        wavelength,
        Polarization::TE,
    )
}

/// Band gap of the 2D lattice with the slab index replaced by `n_eff`.
pub fn lattice_gap(lattice: &LatticeSpec, n_eff: f64, plane_waves: usize, points_per_segment: usize) -> Result<Option<BandGap>> {
    let reduced = lattice.with_slab_index(n_eff);
    let (path, _) = k_path(points_per_segment);
    let bands = pwe_te_bands(&reduced, &path, plane_waves, 2)?;
    Ok(find_gap(&bands))
}

/// Max `| |f|(x) - |f|(-x) |` and the same for y, relative to `max |f|`.
///
/// `values` are cell-centered on a grid of `shape`, symmetric about its center.
pub fn mirror_residuals(values: &[f64], shape: [usize; 3]) -> (f64, f64) {
    let [nx, ny, nz] = shape;
    let at = |i: usize, j: usize, k: usize| values[(i * ny + j) * nz + k].abs();
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return (0.0, 0.0);
    }
    let (mut rx, mut ry) = (0.0f64, 0.0f64);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let v = at(i, j, k);
                rx = rx.max((v - at(nx - 1 - i, j, k)).abs());
                ry = ry.max((v - at(i, ny - 1 - j, k)).abs());
            }
        }
    }
    (rx / peak, ry / peak)
}

/// Everything needed to reproduce and report one cavity analysis.
#[derive(Debug, Clone, Serialize)]
pub struct CavityReport {
    pub lattice: LatticeSpec,
    pub design: CavityDesign,
    pub resolution: usize,
    pub dimensionality: usize,
    pub grid_shape: [usize; 3],
    /// Index used for the 2D reduction and the band gap.
    pub n_eff: f64,
    pub gap: BandGap,
    pub source_frequency: f64,
    pub source_bandwidth: f64,
    pub dt: f64,
    pub total_steps: usize,
    pub window_start_time: f64,
    /// In-gap modes of the center probe, strongest first.
    pub resonances: Vec<ResonanceEstimate>,
    pub dominant_count: usize,
    pub dominant: Option<ResonanceEstimate>,
    pub dominant_in_gap: bool,
    pub q_ringdown: Option<f64>,
    pub q_ringdown_error: Option<String>,
    pub mode_volume: Option<ModeVolumeResult>,
    /// 2D only: the mode area extruded over the slab thickness, `(lambda / n)^3`.
    pub mode_volume_extruded: Option<f64>,
    /// Mirror residuals of `|Ey|` of the mode profile.
    pub symmetry_residual_x: Option<f64>,
    pub symmetry_residual_y: Option<f64>,
    pub wall_seconds: f64,
}

/// A report together with the raw run outputs.
pub struct CavityAnalysis {
    pub report: CavityReport,
    pub grid: DielectricGrid,
    pub ringdown: RunResult,
    pub profile: Option<RunResult>,
    /// `|E|^2` of the mode profile at cell centers.
    pub intensity: Option<Vec<f64>>,
}

/// Rasterized cavity for the given settings (effective index applied in 2D).
pub fn cavity_grid(lattice: &LatticeSpec, design: &CavityDesign, settings: &CavityRunSettings, n_eff: f64) -> Result<DielectricGrid> {
    let holes = enumerate_holes(lattice, design)?;
    let absorber = settings.pml.layers as f64 / settings.resolution as f64;
    if settings.dimensionality == 2 {
        let spec = GridSpec::enclosing_2d(&holes, settings.resolution, settings.padding + absorber);
        rasterize(&lattice.with_slab_index(n_eff), &holes, &spec, settings.smoothing())
    } else {
        let spec = GridSpec::enclosing_3d(
            &holes,
            settings.resolution,
            settings.padding + absorber,
            lattice.slab_thickness_ratio,
            settings.z_padding + absorber,
        );
        rasterize(lattice, &holes, &spec, settings.smoothing())
    }
}

/// Simulation with PML on every side and a soft Ey dipole at the grid center.
pub fn base_config(grid: DielectricGrid, settings: &CavityRunSettings, waveform: Waveform) -> SimulationConfig {
    let mut cfg = SimulationConfig::new(grid);
    cfg.courant_factor = settings.courant_factor;
    cfg.pml = settings.pml;
    cfg.boundaries = [[Boundary::Pml; 2]; 3];
    let centre = cfg.center_node(Component::Ey);
    cfg.sources.push(SourceSpec::new(Component::Ey, centre, waveform));
    cfg
}

/// Steady-state picture of one resonance from a DFT over the ring-down window.
#[derive(Debug, Clone)]
pub struct ModeProfile {
    /// `|E|^2` at cell centers.
    pub intensity: Vec<f64>,
    pub volume: ModeVolumeResult,
    /// Mirror residuals of `|Ey|`, relative to its peak.
    pub symmetry_residual_x: f64,
    pub symmetry_residual_y: f64,
    pub run: RunResult,
}

/// Re-runs the ring-down with a DFT monitor at `frequency` from `window_start` on.
pub fn mode_profile(
    grid: &DielectricGrid,
    settings: &CavityRunSettings,
    waveform: Waveform,
    frequency: f64,
    window_start: f64,
    total_steps: usize,
) -> Result<ModeProfile> {
    let mut cfg = base_config(grid.clone(), settings, waveform);
    cfg.total_steps = total_steps;
    let comps = Component::evolved(settings.dimensionality)
        .iter()
        .copied()
        .filter(|c| c.is_electric())
        .collect::<Vec<_>>();
    cfg.monitors.push(MonitorSpec::Dft {
        name: "mode".into(),
        components: comps.clone(),
        region: None,
        frequency,
        start_step: (window_start / cfg.dt()).ceil() as usize,
    });
    let out = run(&cfg)?;
    let mut total = vec![0.0; grid.permittivity.len()];
    for c in &comps {
        let field = out.dft_field("mode", *c).expect("DFT was requested");
        for (t, v) in total.iter_mut().zip(field.intensity()) {
            *t += v;
        }
    }
    let ey = out.dft_field("mode", Component::Ey).expect("DFT was requested").magnitude();
    let (rx, ry) = mirror_residuals(&ey, grid.shape());
    let volume = mode_volume(&total, grid, 1.0 / frequency, None)?;
    Ok(ModeProfile {
        intensity: total,
        volume,
        symmetry_residual_x: rx,
        symmetry_residual_y: ry,
        run: out,
    })
}

/// Runs the full analysis of one cavity.
pub fn analyze_cavity(lattice: &LatticeSpec, design: &CavityDesign, settings: &CavityRunSettings) -> Result<CavityAnalysis> {
    let started = Instant::now();
    settings.validate()?;
    design.validate(lattice)?;
    let n_eff = match settings.n_eff {
        Some(n) => n,
        None => effective_index(lattice, settings.n_eff_wavelength)?,
    };
    let gap = lattice_gap(lattice, n_eff, settings.plane_waves, settings.band_points_per_segment)?
        .ok_or_else(|| Error::NoBandGap(format!("r/a = {} at n_eff = {n_eff:.5}", lattice.hole_radius_ratio)))?;
    let grid = cavity_grid(lattice, design, settings, n_eff)?;

    let f0 = gap.midgap();
    let bandwidth = gap.gap_midgap_ratio;
    let waveform = Waveform::gaussian(f0, bandwidth);
    let width = waveform.width().expect("pulsed source");
    let off = waveform.end_time().expect("pulsed source");
    let window = ringdown_window_start(off, width);

    let mut cfg = base_config(grid.clone(), settings, waveform);
    let dt = cfg.dt();
    let centre = cfg.center_node(Component::Ey);
    cfg.total_steps = ((window + settings.ringdown_time) / dt).ceil() as usize;
    cfg.monitors.push(MonitorSpec::probe("centre-ey", Component::Ey, centre));
    cfg.monitors.push(MonitorSpec::Energy {
        every: settings.energy_every,
    });
    let ringdown = run(&cfg)?;

    let probe = ringdown.probe("centre-ey").expect("probe was requested");
    let first = ((window - probe.t0) / dt).ceil().max(0.0) as usize;
    let mut resonances = harmonic_inversion(&probe.values[first..], dt, (gap.lower, gap.upper), settings.max_modes)?;
    resonances.retain(|m| gap.contains(m.frequency));
    let strongest = resonances.first().map_or(0.0, |m| m.amplitude_abs());
    let dominant_count = resonances
        .iter()
        .filter(|m| m.amplitude_abs() >= DOMINANCE_RATIO * strongest)
        .count();
    let dominant = resonances.first().cloned();

    let (q_ringdown, q_ringdown_error) = match (&dominant, &ringdown.energy) {
        (Some(m), Some(trace)) => match ringdown_q(&trace.after(window), m.frequency) {
            Ok(q) => (Some(q), None),
            Err(e) => (None, Some(e.to_string())),
        },
        _ => (None, None),
    };

    let (mut profile, mut intensity, mut volume, mut sym) = (None, None, None, (None, None));
    if let (true, Some(m)) = (settings.mode_profile, &dominant) {
        let p = mode_profile(&grid, settings, waveform, m.frequency, window, cfg.total_steps)?;
        sym = (Some(p.symmetry_residual_x), Some(p.symmetry_residual_y));
        volume = Some(p.volume);
        intensity = Some(p.intensity);
        profile = Some(p.run);
    }

    let report = CavityReport {
        lattice: *lattice,
        design: design.clone(),
        resolution: settings.resolution,
        dimensionality: settings.dimensionality,
        grid_shape: grid.shape(),
        n_eff,
        gap,
        source_frequency: f0,
        source_bandwidth: bandwidth,
        dt,
        total_steps: cfg.total_steps,
        window_start_time: window,
        dominant_in_gap: dominant.as_ref().is_some_and(|m| gap.contains(m.frequency)),
        resonances,
        dominant_count,
        dominant,
        q_ringdown,
        q_ringdown_error,
        mode_volume_extruded: match (&volume, &dominant) {
            (Some(v), Some(m)) if settings.dimensionality == 2 => Some(extruded_volume(v, lattice.slab_thickness_ratio, 1.0 / m.frequency)),
            _ => None,
        },
        mode_volume: volume,
        symmetry_residual_x: sym.0,
        symmetry_residual_y: sym.1,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(CavityAnalysis {
        report,
        grid,
        ringdown,
        profile,
        intensity,
    })
}

/// One row of a sweep: a named design, optionally with another `r/a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub name: String,
    pub lattice: LatticeSpec,
    pub design: CavityDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub name: String,
    pub defect_length_x: usize,
    pub hole_radius_ratio: f64,
    pub frequency: Option<f64>,
    pub q: Option<f64>,
    pub mode_volume: Option<f64>,
    pub in_gap: Option<bool>,
    pub error: Option<String>,
}

/// Analyses every point on `workers` threads. Failures are recorded per row.
///
/// Rows come back in input order, and each run is bit-identical to a
/// serial one, so the table does not depend on `workers`.
pub fn sweep(points: &[SweepPoint], settings: &CavityRunSettings, workers: usize) -> Result<Vec<SweepRow>> {
    sweep_with(points, settings, workers, |_, _| {})
}

/// [`sweep`], calling `on_row(index, row)` from the worker as each point finishes.
pub fn sweep_with<F>(points: &[SweepPoint], settings: &CavityRunSettings, workers: usize, on_row: F) -> Result<Vec<SweepRow>>
where
    F: Fn(usize, &SweepRow) + Sync,
{
    settings.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .with_max_len(1)
            .map(|(index, p)| {
                let mut row = SweepRow {
                    name: p.name.clone(),
                    defect_length_x: p.design.defect_length_x,
                    hole_radius_ratio: p.lattice.hole_radius_ratio,
                    frequency: None,
                    q: None,
                    mode_volume: None,
                    in_gap: None,
                    error: None,
                };
                match analyze_cavity(&p.lattice, &p.design, settings) {
                    Ok(a) => {
                        let r = a.report;
                        row.frequency = r.dominant.as_ref().map(|m| m.frequency);
                        row.q = r.dominant.as_ref().map(|m| m.q);
                        row.mode_volume = r.mode_volume.map(|v| v.volume_normalized);
                        row.in_gap = Some(r.dominant_in_gap);
                        if r.dominant.is_none() {
                            row.error = Some("no resonance inside the band gap".into());
                        }
                    }
                    Err(e) => row.error = Some(format!("{}: {e}", e.class().as_str())),
                }
                on_row(index, &row);
                row
            })
            .collect()
    }))
}

/// Writes `name,defect_length_x,hole_radius_ratio,frequency,Q,V,in_gap,error`.
pub fn write_sweep_csv(path: impl AsRef<std::path::Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::fdtd::csv_err(path, e))?;
    w.write_record([
        "name",
        "defect_length_x",
        "hole_radius_ratio",
        "frequency",
        "Q",
        "V",
        "in_gap",
        "error",
    ])
    .map_err(|e| crate::fdtd::csv_err(path, e))?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.defect_length_x.to_string(),
            r.hole_radius_ratio.to_string(),
            opt(r.frequency),
            opt(r.q),
            opt(r.mode_volume),
            r.in_gap.map(|b| b.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| crate::fdtd::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::presets;

    #[test]
    fn defaults_parse() {
        let s = CavityRunSettings::default();
        assert_eq!(s.resolution, 16);
        assert_eq!(s.pml.layers, 12);
        assert!(s.validate().is_ok());
        assert!(toml::from_str::<CavityRunSettings>("resolutoin = 3").is_err());
    }

    #[test]
    fn mirror_residual_of_symmetric_and_skewed_fields() {
        let shape = [4, 3, 1];
        let sym: Vec<f64> = (0..12)
            .map(|n| {
                let (i, j) = (n / 3, n % 3);
                let x = i as f64 - 1.5;
                let y = j as f64 - 1.0;
                (-(x * x) - y * y).exp()
            })
            .collect();
        assert_eq!(mirror_residuals(&sym, shape), (0.0, 0.0));
        let mut skew = sym.clone();
        skew[0] += 0.5;
        let (rx, ry) = mirror_residuals(&skew, shape);
        assert!(rx > 0.0 && ry > 0.0);
    }

    #[test]
    fn acceptance_lattice_has_a_gap() {
        let (lat, _) = presets::l3_sr3();
        let n = effective_index(&lat, 2.75).unwrap();
        assert!((n - 2.197).abs() < 1e-3, "{n}");
        let g = lattice_gap(&lat, n, 121, 8).unwrap().unwrap();
        assert!(g.lower > 0.3 && g.upper < 0.36, "{g:?}");
    }

    #[test]
    fn grid_is_mirror_symmetric() {
        let (lat, d) = presets::l3_sr3();
        let g = cavity_grid(&lat, &d, &CavityRunSettings::default(), 2.197).unwrap();
        let [nx, ny, _] = g.shape();
        assert_eq!((nx % 2, ny % 2), (0, 1));
        // exact for representable permittivities; rounding only otherwise
        assert!(g.mirror_residual_x() < 1e-12);
        assert!(g.mirror_residual_y() < 1e-12);
    }
}
