//! Resonances, quality factors and mode volumes from time-domain output.
//!
//! Conventions: a mode `a exp((i 2 pi f - gamma) t)` has field-amplitude
//! decay rate `gamma` and `Q = pi f / gamma`, equal to `omega / kappa` with
//! energy decay rate `kappa = 2 gamma`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fdtd::{csv_err, EnergyTrace};
use crate::geometry::DielectricGrid;

/// Fewest samples accepted by [`harmonic_inversion`].
pub const MIN_SAMPLES: usize = 256;

/// One damped sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonanceEstimate {
    pub frequency: f64,
    /// Field-amplitude decay rate; 0 for a non-decaying mode.
    pub decay_rate: f64,
    /// `pi f / gamma`; infinite when `decay_rate == 0`.
    pub q: f64,
    /// Complex amplitude at the first sample; reports write it as `[re, im]`.
    #[serde(serialize_with = "complex_pair")]
    pub amplitude: Complex64,
    /// Pole shift between two pencil sizes; spurious poles do not reproduce.
    pub fit_error: f64,
}

fn complex_pair<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

impl ResonanceEstimate {
    pub fn amplitude_abs(&self) -> f64 {
        self.amplitude.norm()
    }

    /// Full width at half maximum of the power spectrum, `f / Q`.
    pub fn linewidth(&self) -> f64 {
        self.decay_rate / PI
    }
}

/// Tuning knobs of the matrix-pencil solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionOptions {
    /// Pencil parameter `L` (model order limit) before clamping to `N / 3`.
    pub pencil: usize,
    /// Singular values below `tolerance * s_max` are treated as noise.
    pub tolerance: f64,
    /// Decimated signals longer than this are truncated.
    pub max_samples: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions {
            pencil: 256,
            tolerance: 1e-6,
            max_samples: 4096,
        }
    }
}

/// Decomposes a real signal into damped sinusoids; see [`harmonic_inversion_complex`].
pub fn harmonic_inversion(signal: &[f64], dt: f64, band: (f64, f64), max_modes: usize) -> Result<Vec<ResonanceEstimate>> {
    let z: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    harmonic_inversion_with(&z, dt, band, max_modes, &InversionOptions::default())
}

pub fn harmonic_inversion_complex(signal: &[Complex64], dt: f64, band: (f64, f64), max_modes: usize) -> Result<Vec<ResonanceEstimate>> {
    harmonic_inversion_with(signal, dt, band, max_modes, &InversionOptions::default())
}

/// Matrix-pencil harmonic inversion.
///
/// Long signals are mixed down to the band center, low-pass filtered and
/// decimated first; an FIR filter does not move the poles, so frequencies
/// and decay rates are unaffected. Returns the in-band modes with positive
/// frequency, largest amplitude first, at most `max_modes` of them.
pub fn harmonic_inversion_with(
    signal: &[Complex64],
    dt: f64,
    band: (f64, f64),
    max_modes: usize,
    options: &InversionOptions,
) -> Result<Vec<ResonanceEstimate>> {
    let (f_lo, f_hi) = band;
    let nyquist = 0.5 / dt;
    if signal.len() < MIN_SAMPLES {
        return Err(invalid(format!("{} samples, need at least {MIN_SAMPLES}", signal.len())));
    }
    if !(dt > 0.0 && f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyquist) {
        return Err(invalid(format!("band ({f_lo}, {f_hi}) is not inside (0, Nyquist = {nyquist})")));
    }
    if signal.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(invalid("signal contains non-finite samples"));
    }
    if signal.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        return Ok(Vec::new());
    }

    // dividing by the largest sample removes global scale and phase before any arithmetic
    let reference = *signal.iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
    let normalized: Vec<Complex64> = signal.iter().map(|v| v / reference).collect();
    let prepared = Baseband::prepare(&normalized, dt, band, options);
    let x = &prepared.samples;
    let pencil = options.pencil.min(x.len() / 3);
    if max_modes > pencil {
        return Err(Error::RankDeficient {
            supported: pencil,
            requested: max_modes,
        });
    }
    let poles = pencil_poles(x, pencil, options.tolerance);
    if poles.is_empty() {
        return Ok(Vec::new());
    }
    let check = pencil_poles(x, (pencil * 3) / 4, options.tolerance);

    // strongly growing poles are noise and would swamp the amplitude fit
    let n = x.len() as f64;
    let poles: Vec<Complex64> = poles.into_iter().filter(|z| z.norm().ln() * n < 25.0).collect();
    let amplitudes = vandermonde_amplitudes(x, &poles);

    let step = prepared.step;
    let mut out: Vec<ResonanceEstimate> = poles
        .iter()
        .zip(&amplitudes)
        .filter_map(|(z, a)| {
            let frequency = prepared.shift + z.arg() / (2.0 * PI * step);
            if !(frequency >= f_lo && frequency <= f_hi && frequency > 0.0) {
                return None;
            }
            let decay_rate = (-z.norm().ln() / step).max(0.0);
            let q = if decay_rate > 0.0 {
                PI * frequency / decay_rate
            } else {
                f64::INFINITY
            };
            let fit_error = check.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min) / z.norm();
            Some(ResonanceEstimate {
                frequency,
                decay_rate,
                q,
                amplitude: *a * reference * prepared.phase_at_origin(frequency, decay_rate),
                fit_error,
            })
        })
        .collect();
    out.sort_by(|a, b| b.amplitude_abs().total_cmp(&a.amplitude_abs()));
    out.truncate(max_modes);
    Ok(out)
}

/// Signal ready for the pencil: `samples[k]` taken at `t0 + k step`,
/// frequencies shifted down by `shift`.
struct Baseband {
    samples: Vec<Complex64>,
    step: f64,
    shift: f64,
    t0: f64,
}

impl Baseband {
    fn prepare(signal: &[Complex64], dt: f64, band: (f64, f64), options: &InversionOptions) -> Self {
        let half = 0.5 * (band.1 - band.0);
        let center = 0.5 * (band.0 + band.1);
        // baseband rate 4x the half band keeps aliases out of the band
        let mut factor = ((1.0 / (4.0 * half.max(1e-300) * dt)).floor() as usize).max(1);
        let taps = |factor: usize| {
            if factor == 1 {
                0
            } else {
                (2.75 * factor as f64).ceil() as usize * 2 + 1
            }
        };
        while factor > 1 && (signal.len().saturating_sub(taps(factor))) / factor < 3 * MIN_SAMPLES {
            factor /= 2;
        }
        if factor == 1 {
            let mut samples = signal.to_vec();
            samples.truncate(options.max_samples.max(MIN_SAMPLES));
            return Baseband {
                samples,
                step: dt,
                shift: 0.0,
                t0: 0.0,
            };
        }
        let k = taps(factor);
        let cutoff = 0.5 / factor as f64; // cycles per input sample
        let h: Vec<f64> = (0..k)
            .map(|m| {
                let x = m as f64 - (k - 1) as f64 * 0.5;
                let sinc = if x == 0.0 {
                    2.0 * cutoff
                } else {
                    (2.0 * PI * cutoff * x).sin() / (PI * x)
                };
                let w = 0.42 - 0.5 * (2.0 * PI * m as f64 / (k - 1) as f64).cos() + 0.08 * (4.0 * PI * m as f64 / (k - 1) as f64).cos();
                sinc * w
            })
            .collect();
        let mix = |n: usize| Complex64::from_polar(1.0, -2.0 * PI * center * n as f64 * dt);
        let count = ((signal.len() - k) / factor + 1).min(options.max_samples);
        let samples = (0..count)
            .map(|j| {
                let start = j * factor;
                (0..k).map(|m| signal[start + m] * mix(start + m) * h[k - 1 - m]).sum()
            })
            .collect();
        Baseband {
            samples,
            step: factor as f64 * dt,
            shift: center,
            // output j is centered on input sample j*factor + (k-1)/2
            t0: (k - 1) as f64 * 0.5 * dt,
        }
    }

    /// Maps an amplitude at `t0` in the shifted frame back to `t = 0` of the input.
    fn phase_at_origin(&self, frequency: f64, decay_rate: f64) -> Complex64 {
        if self.shift == 0.0 && self.t0 == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        let s = Complex64::new(-decay_rate, 2.0 * PI * (frequency - self.shift));
        (-s * self.t0).exp()
    }
}

/// Signal poles from the total-least-squares matrix pencil with parameter `l`.
fn pencil_poles(x: &[Complex64], l: usize, tol: f64) -> Vec<Complex64> {
    let rows = x.len() - l;
    let y = DMatrix::from_fn(rows, l + 1, |i, j| x[i + j]);
    // QR first: the SVD then runs on a small square factor
    let r = y.qr().r();
    let svd = r.svd(false, true);
    let s = &svd.singular_values;
    let s0 = s.iter().cloned().fold(0.0, f64::max);
    if s0 == 0.0 {
        return Vec::new();
    }
    let order = s.iter().filter(|v| **v > tol * s0).count().min(l);
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|a, b| s[*b].total_cmp(&s[*a]));
    let v_t = svd.v_t.expect("right singular vectors requested");
    // columns of V for the dominant singular values
    let v = DMatrix::from_fn(l + 1, order, |i, k| v_t[(idx[k], i)]);
    let v1 = v.rows(0, l).into_owned();
    let v2 = v.rows(1, l).into_owned();
    let Ok(pinv) = v1.pseudo_inverse(1e-14) else {
        return Vec::new();
    };
    let z = pinv * v2;
    z.schur().eigenvalues().map(|e| e.iter().cloned().collect()).unwrap_or_default()
}

/// Least-squares amplitudes of `x[n] = sum_k a_k z_k^n`.
fn vandermonde_amplitudes(x: &[Complex64], poles: &[Complex64]) -> Vec<Complex64> {
    if poles.is_empty() {
        return Vec::new();
    }
    let a = DMatrix::from_fn(x.len(), poles.len(), |n, k| poles[k].powu(n as u32));
    let b = DMatrix::from_column_slice(x.len(), 1, x);
    let qr = a.clone().qr();
    let rhs = qr.q().adjoint() * &b;
    match qr.r().solve_upper_triangular(&rhs) {
        Some(sol) if sol.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => sol.iter().cloned().collect(),
        _ => a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_else(|_| vec![Complex64::new(0.0, 0.0); poles.len()]),
    }
}

/// Mode whose frequency lies within half a linewidth of `frequency`.
pub fn match_mode(estimates: &[ResonanceEstimate], frequency: f64) -> Option<&ResonanceEstimate> {
    estimates
        .iter()
        .filter(|e| (e.frequency - frequency).abs() <= 0.5 * e.linewidth().max(f64::MIN_POSITIVE))
        .min_by(|a, b| (a.frequency - frequency).abs().total_cmp(&(b.frequency - frequency).abs()))
}

/// Earliest time a ring-down window may start: three source widths after turn-off.
pub fn ringdown_window_start(source_off_time: f64, source_width: f64) -> f64 {
    source_off_time + 3.0 * source_width
}

/// rms deviation of `ln U` from its linear fit above which a trace is rejected.
pub const RINGDOWN_RESIDUAL_LIMIT: f64 = 1e-2;

/// Energy-decay Q: least-squares line through `ln U(t)`, `Q = omega / kappa`.
///
/// Returns `f64::INFINITY` when the energy does not decay.
pub fn ringdown_q(trace: &EnergyTrace, frequency: f64) -> Result<f64> {
    let (t, u) = (&trace.times, &trace.energy);
    if t.len() != u.len() || t.len() < 3 {
        return Err(invalid("ring-down needs at least three energy samples"));
    }
    if !(frequency > 0.0) {
        return Err(invalid("resonance frequency must be positive"));
    }
    if u.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("energy samples must be positive and finite"));
    }
    let n = t.len() as f64;
    let y: Vec<f64> = u.iter().map(|v| v.ln()).collect();
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|x| (x - tm) * (x - tm)).sum();
    let sxy: f64 = t.iter().zip(&y).map(|(x, v)| (x - tm) * (v - ym)).sum();
    if sxx == 0.0 {
        return Err(invalid("energy samples share one time stamp"));
    }
    let slope = sxy / sxx;
    let residual = (t
        .iter()
        .zip(&y)
        .map(|(x, v)| {
            let r = v - (ym + slope * (x - tm));
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    if residual > RINGDOWN_RESIDUAL_LIMIT {
        return Err(Error::NotSingleExponential { residual });
    }
    let span = t[t.len() - 1] - t[0];
    if slope >= 0.0 || -slope * span < 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * PI * frequency / -slope)
}

/// Mode volume of a field snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeVolumeResult {
    /// Length^D in units of `a`.
    pub volume_physical: f64,
    /// In units of `(lambda / n)^D`.
    pub volume_normalized: f64,
    pub location_of_max: [f64; 3],
    pub index_at_max: f64,
    /// The maximum sits within two cells of a permittivity step.
    pub near_dielectric_boundary: bool,
}

/// `V = sum eps |E|^2 dV / max(eps |E|^2)`, normalized by `(lambda / n)^D`.
///
/// `intensity` is `|E|^2` at the cell centers of `grid`; `wavelength` is in
/// units of `a`; `n` defaults to `sqrt(eps)` at the maximum.
pub fn mode_volume(intensity: &[f64], grid: &DielectricGrid, wavelength: f64, n_override: Option<f64>) -> Result<ModeVolumeResult> {
    if intensity.len() != grid.permittivity.len() {
        return Err(invalid(format!(
            "{} intensity samples for a grid of {} cells",
            intensity.len(),
            grid.permittivity.len()
        )));
    }
    if !(wavelength > 0.0) {
        return Err(invalid("wavelength must be positive"));
    }
    if intensity.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(invalid("intensity must be finite and non-negative"));
    }
    let mut total = 0.0;
    let mut best = (0usize, 0.0f64);
    for (k, (e, i)) in grid.permittivity.iter().zip(intensity).enumerate() {
        let w = e * i;
        total += w;
        if w > best.1 {
            best = (k, w);
        }
    }
    if best.1 == 0.0 {
        return Err(Error::Degenerate("field is zero everywhere".into()));
    }
    let volume_physical = total / best.1 * grid.cell_volume();
    let [nx, ny, nz] = grid.shape();
    let (i, j, k) = (best.0 / (ny * nz), (best.0 / nz) % ny, best.0 % nz);
    let spec = &grid.spec;
    let location_of_max = [
        spec.center(0, i),
        spec.center(1, j),
        if grid.dimensionality() == 3 { spec.center(2, k) } else { 0.0 },
    ];
    let eps_max = grid.get(i, j, k);
    let index_at_max = n_override.unwrap_or(eps_max.sqrt());
    let reach = |c: usize, n: usize| c.saturating_sub(2)..(c + 3).min(n);
    let near_dielectric_boundary = reach(i, nx).any(|a| {
        reach(j, ny).any(|b| {
            let zr = if grid.dimensionality() == 3 { reach(k, nz) } else { 0..1 };
            zr.clone().any(|c| (grid.get(a, b, c) - eps_max).abs() > 1e-9 * eps_max)
        })
    });
    let d = grid.dimensionality() as i32;
    Ok(ModeVolumeResult {
        volume_physical,
        volume_normalized: volume_physical / (wavelength / index_at_max).powi(d),
        location_of_max,
        index_at_max,
        near_dielectric_boundary,
    })
}

/// Rough 3D volume of a 2D result: the mode area times the slab thickness,
/// in `(lambda / n)^3` with the same `n` as the area.
///
/// The field is assumed uniform across the slab, so this overestimates the
/// confinement a 3D run would give.
pub fn extruded_volume(area: &ModeVolumeResult, slab_thickness: f64, wavelength: f64) -> f64 {
    area.volume_physical * slab_thickness / (wavelength / area.index_at_max).powi(3)
}

/// Writes `frequency,Q,amplitude,fit_error` rows.
pub fn write_resonances_csv(path: impl AsRef<Path>, modes: &[ResonanceEstimate]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["frequency", "Q", "amplitude", "fit_error"])
        .map_err(|e| csv_err(path, e))?;
    for m in modes {
        w.write_record([
            format!("{:.12e}", m.frequency),
            format!("{:.6e}", m.q),
            format!("{:.6e}", m.amplitude_abs()),
            format!("{:.3e}", m.fit_error),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
