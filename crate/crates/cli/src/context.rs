use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use serde::Serialize;
use sha2::{Digest, Sha256};

use phc_core::config::{resolve_design, DesignFile, JobConfig};
use phc_core::{Error, Result, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    /// Frequencies in a/lambda, lengths in a.
    Normalized,
    /// Adds THz and nm alongside; needs the lattice constant.
    Physical,
}

/// Everything a subcommand needs besides its own flags.
pub struct Context {
    pub job: JobConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub units: Units,
    arguments: Vec<String>,
    started: Instant,
    started_unix: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    design: Option<DesignFile>,
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    arguments: &'a [String],
    seed: u64,
    workers: usize,
    units: Units,
    started_unix_seconds: u64,
    wall_seconds: f64,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    job: &'a JobConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    design: Option<&'a DesignFile>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        total += n as u64;
        hasher.update(&buf[..n]);
    }
    let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((total, hex))
}

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Context {
    pub fn new(job: JobConfig, config_path: Option<&Path>, out: PathBuf, seed: u64, workers: usize, units: Units) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let mut inputs = Vec::new();
        if let Some(p) = config_path {
            inputs.push(p.to_path_buf());
        }
        Context {
            job,
            out,
            seed,
            workers,
            units,
            arguments: std::env::args().collect(),
            started: Instant::now(),
            started_unix,
            inputs,
            outputs: Vec::new(),
            design: None,
        }
    }

    pub fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn add_input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Registers a file written into the output directory.
    pub fn add_output(&mut self, path: PathBuf) {
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
    }

    /// Flag, then job file, then the L3_sr3 preset.
    pub fn design(&mut self, flag: Option<&str>) -> Result<DesignFile> {
        let reference = flag
            .map(str::to_string)
            .or_else(|| self.job.design.clone())
            .unwrap_or_else(|| "l3_sr3".to_string());
        let design = resolve_design(&reference)?;
        let path = Path::new(&reference);
        if path.exists() {
            self.add_input(path);
        }
        // a copy next to the results makes the run reproducible without the original file
        let copy = self.path("design.cfg");
        fs::write(&copy, design.to_toml()).map_err(|e| io_err(&copy, e))?;
        self.add_output(copy);
        self.design = Some(design.clone());
        Ok(design)
    }

    /// Lattice constant in nm when physical units are requested.
    pub fn lattice_nm(&self, design: Option<&DesignFile>) -> Result<Option<f64>> {
        if self.units == Units::Normalized {
            return Ok(None);
        }
        self.job
            .units
            .lattice_constant_nm
            .or_else(|| design.and_then(|d| d.lattice.lattice_constant_nm))
            .map(Some)
            .ok_or_else(|| {
                Error::InvalidInput(
                    "--units physical needs lattice_constant_nm in the job [units] block or the design [lattice] block".into(),
                )
            })
    }

    pub fn write_toml<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let text = toml::to_string(value).map_err(|e| Error::InvalidInput(format!("{name}: {e}")))?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        self.add_output(path.clone());
        Ok(path)
    }

    /// Writes `job.toml` (the resolved job) and `manifest.toml`.
    pub fn finish(&mut self, command: &str) -> Result<()> {
        let mut job = self.job.clone();
        job.seed = self.seed;
        job.output_dir = Some(self.out.clone());
        if self.design.is_some() {
            job.design = Some("design.cfg".into());
        }
        self.write_toml("job.toml", &job)?;
        let record = |p: &PathBuf| -> Result<FileRecord> {
            let (bytes, sha256) = sha256_file(p)?;
            Ok(FileRecord {
                path: p.to_string_lossy().into_owned(),
                bytes,
                sha256,
            })
        };
        let inputs = self.inputs.iter().map(record).collect::<Result<Vec<_>>>()?;
        let mut outputs = self.outputs.iter().map(record).collect::<Result<Vec<_>>>()?;
        for o in &mut outputs {
            if let Ok(rel) = Path::new(&o.path).strip_prefix(&self.out) {
                o.path = rel.to_string_lossy().into_owned();
            }
        }
        let manifest = Manifest {
            tool: "phc",
            version: env!("CARGO_PKG_VERSION"),
            command,
            arguments: &self.arguments,
            seed: self.seed,
            workers: self.workers,
            units: self.units,
            started_unix_seconds: self.started_unix,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            inputs,
            outputs,
            job: &job,
            design: self.design.as_ref(),
        };
        let path = self.path("manifest.toml");
        let text = toml::to_string(&manifest).map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

/// `(THz, nm)` for a normalized frequency and lattice constant in nm.
pub fn physical(frequency: f64, lattice_nm: f64) -> (f64, f64) {
    (frequency * SPEED_OF_LIGHT / (lattice_nm * 1e-9) * 1e-12, lattice_nm / frequency)
}
