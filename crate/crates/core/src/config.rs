//! Job and design files.
//!
//! Both are TOML. Lengths that are not ratios carry their unit in the key
//! (`lattice_constant_nm`); everything else is a ratio to the lattice
//! constant `a`.
//!
//! A design file:
//!
//! ```toml
//! name = "l3_sr3"
//!
//! [lattice]
//! slab_index_n = 2.6
//! slab_thickness_ratio = 0.6
//! hole_radius_ratio = 0.2553
//! lattice_constant_nm = 400.0
//!
//! [cavity]
//! defect_length_x = 3
//! crystal_extent = [20, 13]
//!
//! [[cavity.modifications]]
//! index_from_cavity_edge = 1
//! axial_shift_ratio = 0.3482
//! radius_reduction_ratio = 0.098
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{presets, CavityDesign, LatticeSpec};
use crate::pipeline::CavityRunSettings;

fn one() -> f64 {
    1.0
}

/// Lattice block of a design file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub slab_index_n: f64,
    pub slab_thickness_ratio: f64,
    pub hole_radius_ratio: f64,
    #[serde(default = "one")]
    pub background_index: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_constant_nm: Option<f64>,
}

/// A cavity design as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    #[serde(default)]
    pub name: String,
    pub lattice: LatticeBlock,
    pub cavity: CavityDesign,
}

impl DesignFile {
    pub fn new(name: &str, lattice: &LatticeSpec, cavity: &CavityDesign) -> Self {
        DesignFile {
            name: name.to_string(),
            lattice: LatticeBlock {
                slab_index_n: lattice.slab_index_n,
                slab_thickness_ratio: lattice.slab_thickness_ratio,
                hole_radius_ratio: lattice.hole_radius_ratio,
                background_index: lattice.background_index,
                lattice_constant_nm: (lattice.lattice_constant_a != 1.0).then_some(lattice.lattice_constant_a * 1e9),
            },
            cavity: cavity.clone(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let d: DesignFile = toml::from_str(text).map_err(|e| toml_err(text, e))?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut d = Self::parse(&text).map_err(|e| with_path(path, e))?;
        if d.name.is_empty() {
            d.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(d)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("design serializes")
    }

    /// Normalized lattice (`a = 1`); the physical `a` stays in `lattice_constant_nm`.
    pub fn lattice_spec(&self) -> LatticeSpec {
        LatticeSpec {
            lattice_constant_a: 1.0,
            slab_index_n: self.lattice.slab_index_n,
            slab_thickness_ratio: self.lattice.slab_thickness_ratio,
            hole_radius_ratio: self.lattice.hole_radius_ratio,
            background_index: self.lattice.background_index,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lat = self.lattice_spec();
        lat.validate()?;
        if let Some(a) = self.lattice.lattice_constant_nm {
            if !(a > 0.0 && a.is_finite()) {
                return Err(invalid("lattice_constant_nm must be positive"));
            }
        }
        self.cavity.validate(&lat)
    }
}

/// Resolves a design reference: an existing file, or else a preset name.
pub fn resolve_design(reference: &str) -> Result<DesignFile> {
    let path = Path::new(reference);
    if path.exists() {
        return DesignFile::load(path);
    }
    match presets::by_name(reference) {
        Some((lat, d)) => Ok(DesignFile::new(&reference.to_ascii_lowercase(), &lat, &d)),
        None => Err(invalid(format!("design {reference:?} is neither a file nor a known preset"))),
    }
}

/// Which analyses `simulate` runs on its own output. Resonances are cheap
/// (a fit to the probe signal); the mode volume needs a second run and the
/// bands a plane-wave solve, so those are opt-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSelection {
    pub resonances: bool,
    pub mode_volume: bool,
    pub bands: bool,
}

impl Default for AnalysisSelection {
    fn default() -> Self {
        AnalysisSelection {
            resonances: true,
            mode_volume: false,
            bands: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_constant_nm: Option<f64>,
}

/// One job: what to simulate, how, and where the results go.
///
/// ```toml
/// design = "l3sr3.cfg"     # file, relative to this config, or a preset name
/// output_dir = "runs/l3sr3"
/// seed = 7
///
/// [simulation]
/// resolution = 16
///
/// [analysis]
/// mode_volume = true
///
/// [units]
/// lattice_constant_nm = 400.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulation: CavityRunSettings,
    #[serde(default)]
    pub analysis: AnalysisSelection,
    #[serde(default)]
    pub units: UnitsBlock,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig::parse("").expect("empty job is valid")
    }
}

impl JobConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let job: JobConfig = toml::from_str(text).map_err(|e| toml_err(text, e))?;
        job.simulation.validate()?;
        Ok(job)
    }

    /// Reads a job file. A relative design path is taken relative to the
    /// job file and must exist unless it names a preset.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut job = Self::parse(&text).map_err(|e| with_path(path, e))?;
        if let Some(reference) = &job.design {
            let candidate = path.parent().unwrap_or(Path::new(".")).join(reference);
            if candidate.exists() {
                job.design = Some(candidate.to_string_lossy().into_owned());
            } else if presets::by_name(reference).is_none() {
                return Err(Error::io(
                    candidate,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "design file not found"),
                ));
            }
        }
        Ok(job)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("job serializes")
    }
}

fn toml_err(text: &str, e: toml::de::Error) -> Error {
    match e.span() {
        Some(span) => Error::Parse {
            line: 1 + text[..span.start.min(text.len())].matches('\n').count() as u64,
            message: e.message().to_string(),
        },
        None => Error::InvalidInput(e.message().to_string()),
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}
