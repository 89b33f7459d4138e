//! Finite-difference time-domain solver on a Yee grid.
//!
//! Units: `a = c = eps0 = mu0 = 1`, so a frequency `f` is `a / lambda` and the
//! time step is `courant_factor * h` for cell size `h = 1 / resolution`.
//! Two kernels share one interface: 2D TE (Ex, Ey, Hz) and full 3D.
//!
//! Each step advances `H^(n-1/2) -> H^(n+1/2)`, then `E^n -> E^(n+1)` with
//! soft currents sampled at `(n + 1/2) dt`. Outer walls are PEC; faces
//! marked [`Boundary::Pml`] carry a graded CPML slab in front of the wall.
//!
//! ```
//! use phc_core::fdtd::{run, Component, MonitorSpec, SimulationConfig, SourceSpec, Waveform};
//! use phc_core::geometry::{DielectricGrid, GridSpec};
//!
//! let grid = DielectricGrid::uniform(GridSpec::new_2d(10, 40, 41), 1.0);
//! let mut cfg = SimulationConfig::new(grid);
//! cfg.pml.layers = 8;
//! let centre = cfg.center_node(Component::Ey);
//! cfg.sources.push(SourceSpec::new(Component::Ey, centre, Waveform::gaussian(0.4, 0.5)));
//! cfg.monitors.push(MonitorSpec::probe("centre", Component::Ey, centre));
//! cfg.total_steps = 200;
//! let out = run(&cfg).unwrap();
//! assert_eq!(out.probes[0].values.len(), 200);
//! ```

mod layout;
mod pml;
mod source;
mod te2d;
mod verify;
mod yee3d;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use layout::{total_em_energy, Component, Region, YeeFields};
pub use pml::{Boundary, PmlSpec};
pub use source::{SourceSpec, Waveform};
pub use verify::{pml_reflection_test, pml_reflection_test_at};

use crate::error::{invalid, Error, Result};
use crate::geometry::DielectricGrid;
use crate::gridio::ScalarGrid;
use pml::AxisPml;

/// Fields beyond this multiple of the peak source amplitude abort the run.
/// The factor is arbitrary; a healthy run stays many orders of magnitude below it.
pub const INSTABILITY_FACTOR: f64 = 1e12;

pub(crate) trait Kernel {
    fn fields(&self) -> &YeeFields;
    /// With `keep_previous`, the pre-update H is kept for [`Kernel::energy`].
    fn step_h(&mut self, keep_previous: bool);
    fn step_e(&mut self);
    /// `E += dt / eps * current` at one node.
    fn inject(&mut self, c: Component, node: [usize; 3], current: f64);
    fn energy(&self) -> f64;
}

/// What to record during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MonitorSpec {
    /// One component at one node, every step.
    Probe {
        name: String,
        component: Component,
        position: [usize; 3],
    },
    /// Components collocated at cell centers, every `every` steps.
    Snapshot {
        name: String,
        components: Vec<Component>,
        region: Option<Region>,
        every: usize,
        #[serde(default)]
        start_step: usize,
    },
    /// Total energy on the non-PML region every `every` steps.
    Energy { every: usize },
    /// Running Fourier transform at one frequency, collocated at cell centers.
    Dft {
        name: String,
        components: Vec<Component>,
        region: Option<Region>,
        frequency: f64,
        #[serde(default)]
        start_step: usize,
    },
}

impl MonitorSpec {
    pub fn probe(name: &str, component: Component, position: [usize; 3]) -> Self {
        MonitorSpec::Probe {
            name: name.to_string(),
            component,
            position,
        }
    }
}

/// A complete run description.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub grid: DielectricGrid,
    /// `c dt / h`; stable for values up to `1 / sqrt(D)`.
    pub courant_factor: f64,
    pub pml: PmlSpec,
    /// `[axis][low, high]`; z is ignored in 2D.
    pub boundaries: [[Boundary; 2]; 3],
    pub sources: Vec<SourceSpec>,
    pub monitors: Vec<MonitorSpec>,
    pub total_steps: usize,
    /// Steps between instability checks.
    pub check_interval: usize,
}

impl SimulationConfig {
    pub fn new(grid: DielectricGrid) -> Self {
        SimulationConfig {
            grid,
            courant_factor: 0.5,
            pml: PmlSpec::default(),
            boundaries: [[Boundary::Pml; 2]; 3],
            sources: Vec::new(),
            monitors: Vec::new(),
            total_steps: 0,
            check_interval: 100,
        }
    }

    /// A closed PEC box (verification runs only).
    pub fn pec_box(grid: DielectricGrid) -> Self {
        SimulationConfig {
            boundaries: [[Boundary::Pec; 2]; 3],
            ..Self::new(grid)
        }
    }

    pub fn dimensionality(&self) -> usize {
        self.grid.dimensionality()
    }

    pub fn dt(&self) -> f64 {
        self.courant_factor * self.grid.cell_size()
    }

    fn axis_pml(&self, d: usize) -> AxisPml {
        let n = self.grid.shape()[d];
        let faces = if self.dimensionality() == 2 && d == 2 {
            [Boundary::Pec; 2]
        } else {
            self.boundaries[d]
        };
        AxisPml::new(n, self.grid.cell_size(), self.dt(), &self.pml, faces)
    }

    /// Cells outside every PML slab.
    pub fn interior(&self) -> Region {
        let mut r = Region::whole(self.grid.shape());
        for d in 0..self.dimensionality() {
            let (lo, hi) = self.axis_pml(d).interior;
            r.lo[d] = lo;
            r.hi[d] = hi;
        }
        r
    }

    /// Node of `component` nearest the physical point (origin at the grid center).
    pub fn node_at(&self, component: Component, point: [f64; 3]) -> [usize; 3] {
        let dim = self.dimensionality();
        let shape = component.node_shape(self.grid.shape(), dim);
        let origin = self.grid.origin();
        let h = self.grid.cell_size();
        let mut node = [0; 3];
        for d in 0..dim {
            let shift = if component.is_half(d) { 0.5 } else { 0.0 };
            let x = ((point[d] - origin[d]) / h - shift).round();
            node[d] = (x.max(0.0) as usize).min(shape[d] - 1);
        }
        node
    }

    /// Physical position of a node.
    pub fn node_position(&self, component: Component, node: [usize; 3]) -> [f64; 3] {
        let origin = self.grid.origin();
        let h = self.grid.cell_size();
        let mut p = [0.0; 3];
        for d in 0..self.dimensionality() {
            let shift = if component.is_half(d) { 0.5 } else { 0.0 };
            p[d] = origin[d] + (node[d] as f64 + shift) * h;
        }
        p
    }

    pub fn center_node(&self, component: Component) -> [usize; 3] {
        self.node_at(component, [0.0; 3])
    }

    fn node_in_interior(&self, c: Component, node: [usize; 3]) -> bool {
        let r = self.interior();
        let shape = c.node_shape(self.grid.shape(), self.dimensionality());
        (0..self.dimensionality()).all(|d| {
            let hi = if c.is_half(d) { r.hi[d] } else { r.hi[d] + 1 };
            node[d] >= r.lo[d] && node[d] < hi.min(shape[d])
        })
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dimensionality();
        if dim != 2 && dim != 3 {
            return Err(invalid(format!("dimensionality {dim} is not supported")));
        }
        let limit = 1.0 / (dim as f64).sqrt();
        if !(self.courant_factor > 0.0 && self.courant_factor <= limit) {
            return Err(invalid(format!(
                "courant_factor {} outside (0, 1/sqrt({dim})]",
                self.courant_factor
            )));
        }
        if self.grid.permittivity.len() != self.grid.spec.len() || self.grid.permittivity.iter().any(|e| !(*e >= 1.0)) {
            return Err(invalid("permittivity grid has wrong length or values below 1"));
        }
        if self.pml.layers > 0 && !(self.pml.target_reflection > 0.0 && self.pml.target_reflection < 1.0) {
            return Err(invalid("pml.target_reflection must lie in (0, 1)"));
        }
        if self.pml.alpha_max < 0.0 {
            return Err(invalid("pml.alpha_max must be non-negative"));
        }
        let cells = self.grid.shape();
        for (d, (&n, faces)) in cells.iter().zip(&self.boundaries).take(dim).enumerate() {
            let count = faces.iter().filter(|b| **b == Boundary::Pml).count();
            if n <= count * self.pml.layers + 1 {
                return Err(invalid(format!("axis {d}: {n} cells leave no room inside the PML")));
            }
        }
        if self.check_interval == 0 {
            return Err(invalid("check_interval must be positive"));
        }
        for s in &self.sources {
            s.waveform.validate()?;
            if !s.component.is_electric() || !Component::evolved(dim).contains(&s.component) {
                return Err(invalid(format!("{} is not a driven electric component in {dim}D", s.component)));
            }
            if !self.node_in_interior(s.component, s.position) {
                return Err(invalid(format!("source at {:?} lies outside the non-PML region", s.position)));
            }
            if !s.amplitude.is_finite() {
                return Err(invalid("source amplitude must be finite"));
            }
        }
        let mut energy_monitors = 0;
        for m in &self.monitors {
            match m {
                MonitorSpec::Probe { component, position, .. } => {
                    let shape = component.node_shape(cells, dim);
                    if !Component::evolved(dim).contains(component) || (0..3).any(|d| position[d] >= shape[d]) {
                        return Err(invalid(format!("probe {component} at {position:?} is outside the grid")));
                    }
                }
                MonitorSpec::Snapshot {
                    components, region, every, ..
                } => {
                    if *every == 0 {
                        return Err(invalid("snapshot interval must be positive"));
                    }
                    self.check_region(components, region)?;
                }
                MonitorSpec::Dft {
                    components,
                    region,
                    frequency,
                    ..
                } => {
                    if !(*frequency > 0.0) {
                        return Err(invalid("DFT frequency must be positive"));
                    }
                    self.check_region(components, region)?;
                }
                MonitorSpec::Energy { every } => {
                    energy_monitors += 1;
                    if *every == 0 {
                        return Err(invalid("energy interval must be positive"));
                    }
                }
            }
        }
        if energy_monitors > 1 {
            return Err(invalid("at most one energy monitor"));
        }
        Ok(())
    }

    fn check_region(&self, components: &[Component], region: &Option<Region>) -> Result<()> {
        let dim = self.dimensionality();
        if let Some(c) = components.iter().find(|c| !Component::evolved(dim).contains(c)) {
            return Err(invalid(format!("{c} is not evolved in {dim}D")));
        }
        if let Some(r) = region {
            if !r.within(self.grid.shape()) {
                return Err(invalid(format!("monitor region {r:?} is outside the grid")));
            }
        }
        Ok(())
    }
}

/// Time series of one probe; sample `k` is at `t0 + k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSeries {
    pub name: String,
    pub component: Component,
    pub position: [usize; 3],
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl ProbeSeries {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// CSV with columns `step,time,value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["step", "time", "value"]).map_err(|e| csv_err(path, e))?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([k.to_string(), format!("{:.17e}", self.time(k)), format!("{v:.17e}")])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => invalid(format!("{}: {other:?}", path.display())),
    }
}

/// Field values collocated at the cell centers of `region`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub name: String,
    pub component: Component,
    pub step: usize,
    pub time: f64,
    pub region: Region,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn to_grid(&self, resolution: usize, dimensionality: usize) -> ScalarGrid {
        let s = self.region.shape();
        let h = 1.0 / resolution as f64;
        ScalarGrid {
            dimensionality,
            shape: s,
            resolution,
            extent: [s[0] as f64 * h, s[1] as f64 * h],
            values: self.values.clone(),
        }
    }

    /// Writes `<dir>/<name>_<component>_<step>.phcgrid`.
    pub fn save(&self, dir: impl AsRef<Path>, resolution: usize, dimensionality: usize) -> Result<std::path::PathBuf> {
        let path = dir
            .as_ref()
            .join(format!("{}_{}_{:08}.phcgrid", self.name, self.component, self.step));
        self.to_grid(resolution, dimensionality).save(&path)?;
        Ok(path)
    }
}

/// `sum_t F(t) exp(i 2 pi f t) dt` at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct DftField {
    pub name: String,
    pub component: Component,
    pub frequency: f64,
    pub region: Region,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl DftField {
    pub fn intensity(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.intensity().into_iter().map(f64::sqrt).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyTrace {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
}

impl EnergyTrace {
    /// Samples from `start_time` on.
    pub fn after(&self, start_time: f64) -> EnergyTrace {
        let k = self.times.partition_point(|t| *t < start_time);
        EnergyTrace {
            steps: self.steps[k..].to_vec(),
            times: self.times[k..].to_vec(),
            energy: self.energy[k..].to_vec(),
        }
    }

    /// CSV with columns `step,time,energy`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["step", "time", "energy"]).map_err(|e| csv_err(path, e))?;
        for ((n, t), u) in self.steps.iter().zip(&self.times).zip(&self.energy) {
            w.write_record([n.to_string(), format!("{t:.17e}"), format!("{u:.17e}")])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub dt: f64,
    pub wall_seconds: f64,
    pub cell_updates_per_second: f64,
    /// Largest field magnitude seen at the instability checks.
    pub max_field: f64,
    pub peak_source_amplitude: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunResult {
    pub probes: Vec<ProbeSeries>,
    pub snapshots: Vec<Snapshot>,
    pub dft: Vec<DftField>,
    pub energy: Option<EnergyTrace>,
    pub stats: RunStats,
    /// Last time the sources inject anything, if they all stop.
    pub source_off_time: Option<f64>,
}

impl RunResult {
    pub fn probe(&self, name: &str) -> Option<&ProbeSeries> {
        self.probes.iter().find(|p| p.name == name)
    }

    pub fn dft_field(&self, name: &str, component: Component) -> Option<&DftField> {
        self.dft.iter().find(|d| d.name == name && d.component == component)
    }
}

struct DftState {
    field: DftField,
    start: usize,
}

/// Runs a simulation. Identical configs give bit-identical fields and records.
pub fn run(config: &SimulationConfig) -> Result<RunResult> {
    config.validate()?;
    execute(config)
}

fn execute(config: &SimulationConfig) -> Result<RunResult> {
    let dim = config.dimensionality();
    let dt = config.dt();
    let mut kernel: Box<dyn Kernel> = if dim == 2 {
        Box::new(te2d::Te2d::new(&config.grid, dt, config.axis_pml(0), config.axis_pml(1)))
    } else {
        Box::new(yee3d::Yee3d::new(
            &config.grid,
            dt,
            [config.axis_pml(0), config.axis_pml(1), config.axis_pml(2)],
        ))
    };
    let cells = config.grid.shape();
    let peak = config.sources.iter().map(|s| s.amplitude.abs()).fold(0.0, f64::max);
    let limit = INSTABILITY_FACTOR * peak;
    let source_off_time = config
        .sources
        .iter()
        .map(|s| s.last_step(dt).map(|n| n as f64 * dt))
        .try_fold(0.0f64, |acc, t| t.map(|t| acc.max(t)));

    let mut probes: Vec<ProbeSeries> = Vec::new();
    let mut snapshots = Vec::new();
    let mut dfts: Vec<DftState> = Vec::new();
    let mut energy_every = None;
    let mut energy = EnergyTrace::default();
    for m in &config.monitors {
        match m {
            MonitorSpec::Probe { name, component, position } => probes.push(ProbeSeries {
                name: name.clone(),
                component: *component,
                position: *position,
                t0: if component.is_electric() { dt } else { 0.5 * dt },
                dt,
                values: Vec::with_capacity(config.total_steps),
            }),
            MonitorSpec::Dft {
                name,
                components,
                region,
                frequency,
                start_step,
            } => {
                let region = region.unwrap_or(Region::whole(cells));
                for &c in components {
                    dfts.push(DftState {
                        field: DftField {
                            name: name.clone(),
                            component: c,
                            frequency: *frequency,
                            region,
                            re: vec![0.0; region.len()],
                            im: vec![0.0; region.len()],
                        },
                        start: *start_step,
                    });
                }
            }
            MonitorSpec::Energy { every } => energy_every = Some(*every),
            MonitorSpec::Snapshot { .. } => {}
        }
    }

    let started = Instant::now();
    let mut max_field = 0.0f64;
    for n in 0..config.total_steps {
        let energy_due = energy_every.is_some_and(|k| n % k == 0);
        kernel.step_h(energy_due);
        if energy_due {
            energy.steps.push(n);
            energy.times.push(n as f64 * dt);
            energy.energy.push(kernel.energy());
        }
        kernel.step_e();
        for s in &config.sources {
            let j = s.current(n, dt);
            if j != 0.0 {
                kernel.inject(s.component, s.position, j);
            }
        }

        let fields = kernel.fields();
        for p in &mut probes {
            p.values.push(fields.get(p.component, p.position));
        }
        let step = n + 1;
        for m in &config.monitors {
            if let MonitorSpec::Snapshot {
                name,
                components,
                region,
                every,
                start_step,
            } = m
            {
                if step >= *start_step && step % every == 0 {
                    let region = region.unwrap_or(Region::whole(cells));
                    for &c in components {
                        let time = if c.is_electric() {
                            step as f64 * dt
                        } else {
                            (step as f64 - 0.5) * dt
                        };
                        snapshots.push(Snapshot {
                            name: name.clone(),
                            component: c,
                            step,
                            time,
                            region,
                            values: fields.collocated(c, &region),
                        });
                    }
                }
            }
        }
        for d in &mut dfts {
            if step < d.start {
                continue;
            }
            let c = d.field.component;
            let t = if c.is_electric() {
                step as f64 * dt
            } else {
                (step as f64 - 0.5) * dt
            };
            let phase = 2.0 * std::f64::consts::PI * d.field.frequency * t;
            let (cr, ci) = (phase.cos() * dt, phase.sin() * dt);
            let values = fields.collocated(c, &d.field.region);
            for (k, v) in values.into_iter().enumerate() {
                d.field.re[k] += v * cr;
                d.field.im[k] += v * ci;
            }
        }
        if step % config.check_interval == 0 || step == config.total_steps {
            let m = fields.max_abs();
            if m.is_nan() || m > limit {
                return Err(Error::Unstable { step, magnitude: m, limit });
            }
            max_field = max_field.max(m);
        }
    }
    let wall = started.elapsed().as_secs_f64();
    let cells_total = config.grid.spec.len() as f64;
    Ok(RunResult {
        probes,
        snapshots,
        dft: dfts.into_iter().map(|d| d.field).collect(),
        energy: energy_every.map(|_| energy),
        stats: RunStats {
            steps: config.total_steps,
            dt,
            wall_seconds: wall,
            cell_updates_per_second: if wall > 0.0 {
                cells_total * config.total_steps as f64 / wall
            } else {
                0.0
            },
            max_field,
            peak_source_amplitude: peak,
        },
        source_off_time,
    })
}

#[cfg(test)]
mod tests;
