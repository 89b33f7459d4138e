//! Absorber verification runs.

use super::{run, Boundary, Component, MonitorSpec, PmlSpec, SimulationConfig, SourceSpec, Waveform};
use crate::error::Result;
use crate::geometry::{DielectricGrid, GridSpec};

/// Normal-incidence amplitude reflection of the high-x face at resolution 20.
///
/// `layers = 0` replaces the absorber with the bare PEC wall.
pub fn pml_reflection_test(layers: usize, polynomial_order: u32, target_reflection: f64) -> Result<f64> {
    let spec = PmlSpec {
        layers,
        polynomial_order,
        target_reflection,
        alpha_max: 0.0,
    };
    pml_reflection_test_at(&spec, 20)
}

/// Like [`pml_reflection_test`] with an explicit absorber and resolution.
///
/// A uniform Ey sheet between two PEC plates launches a plane pulse along x
/// (band 0.25-0.75 `a/lambda`). The probe trace is compared against a run
/// whose right side is long enough that nothing returns within the window;
/// the ratio of the largest difference to the largest incident value is the
/// reflection coefficient.
pub fn pml_reflection_test_at(spec: &PmlSpec, resolution: usize) -> Result<f64> {
    let r = resolution;
    let waveform = Waveform::gaussian(0.5, 1.0);
    let pulse_end = waveform.end_time().unwrap();
    // the left margin keeps waves bounced off the left face out of the window
    let (left, gap_probe, gap_wall) = (12 * r, 2 * r, r);
    let window = pulse_end + (gap_probe + 2 * gap_wall) as f64 / r as f64 + 2.0;
    let extension = ((window / 2.0 + 2.0) * r as f64).ceil() as usize;

    let layers = spec.layers;
    let face = if layers == 0 { Boundary::Pec } else { Boundary::Pml };
    let source_i = layers + left;
    let probe_i = source_i + gap_probe;
    let nx_test = probe_i + gap_wall + layers;
    let ny = 2;

    let trace = |nx: usize| -> Result<Vec<f64>> {
        let grid = DielectricGrid::uniform(GridSpec::new_2d(r, nx, ny), 1.0);
        let mut cfg = SimulationConfig::new(grid);
        cfg.pml = *spec;
        cfg.boundaries = [[face, face], [Boundary::Pec, Boundary::Pec], [Boundary::Pec; 2]];
        for j in 0..ny {
            cfg.sources.push(SourceSpec::new(Component::Ey, [source_i, j, 0], waveform));
        }
        cfg.monitors.push(MonitorSpec::probe("p", Component::Ey, [probe_i, 0, 0]));
        cfg.total_steps = (window / cfg.dt()).ceil() as usize;
        Ok(run(&cfg)?.probes.remove(0).values)
    };
    let test = trace(nx_test)?;
    let reference = trace(nx_test + extension)?;
    let incident = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let returned = test.iter().zip(&reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(returned / incident)
}
