//! Resonant-scattering spectra and Fano lineshape fits.
//!
//! Wavelengths are in nanometers throughout this module. The Fano model is
//!
//! ```text
//! F(lambda) = A (q + e)^2 / (1 + e^2) + B,   e = 2 (lambda - lambda_0) / Gamma
//! ```
//!
//! with `Gamma` the wavelength FWHM, so `Q = lambda_0 / Gamma`.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fdtd::csv_err;

/// Minimum number of samples in a [`Spectrum`].
pub const MIN_POINTS: usize = 8;
pub const MAX_ITERATIONS: usize = 200;
pub const PARAMETER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub wavelength_nm: Vec<f64>,
    pub intensity: Vec<f64>,
    /// One-sigma intensity errors; when present the fit is weighted.
    pub uncertainty: Option<Vec<f64>>,
}

impl Spectrum {
    pub fn new(wavelength_nm: Vec<f64>, intensity: Vec<f64>, uncertainty: Option<Vec<f64>>) -> Result<Self> {
        let s = Spectrum {
            wavelength_nm,
            intensity,
            uncertainty,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.wavelength_nm.len();
        if self.intensity.len() != n {
            return Err(invalid(format!("{} wavelengths but {} intensities", n, self.intensity.len())));
        }
        if n < MIN_POINTS {
            return Err(invalid(format!("spectrum has {n} points, at least {MIN_POINTS} required")));
        }
        if let Some(u) = &self.uncertainty {
            if u.len() != n {
                return Err(invalid("uncertainty column length differs from the data"));
            }
            if u.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(invalid("uncertainties must be positive and finite"));
            }
        }
        if self.wavelength_nm.iter().any(|w| !w.is_finite()) {
            return Err(invalid("non-finite wavelength"));
        }
        if self.intensity.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("intensities must be finite and non-negative"));
        }
        if let Some(i) = self.wavelength_nm.windows(2).position(|w| w[1] <= w[0]) {
            return Err(invalid(format!(
                "wavelengths not strictly increasing at index {} ({} after {})",
                i + 1,
                self.wavelength_nm[i + 1],
                self.wavelength_nm[i]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.wavelength_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelength_nm.is_empty()
    }

    /// Writes `wavelength_nm,intensity[,uncertainty]` with round-trip precision.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let header: &[&str] = if self.uncertainty.is_some() {
            &["wavelength_nm", "intensity", "uncertainty"]
        } else {
            &["wavelength_nm", "intensity"]
        };
        w.write_record(header).map_err(|e| csv_err(path, e))?;
        for i in 0..self.len() {
            let mut rec = vec![self.wavelength_nm[i].to_string(), self.intensity[i].to_string()];
            if let Some(u) = &self.uncertainty {
                rec.push(u[i].to_string());
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a two- or three-column CSV (wavelength in nm, intensity, optional sigma).
pub fn load_spectrum(path: impl AsRef<Path>) -> Result<Spectrum> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_spectrum(file)
}

/// Parses spectrum CSV from any reader. A non-numeric first row is a header.
/// Rows are sorted by wavelength; repeated wavelengths are rejected.
pub fn parse_spectrum<R: Read>(reader: R) -> Result<Spectrum> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<(f64, f64, Option<f64>)> = Vec::new();
    let mut columns = None;
    for (index, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        let fields: Vec<&str> = record.iter().filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && columns.is_none() => {
                columns = Some(fields.len());
                continue;
            }
            Err(e) => {
                return Err(Error::Parse {
                    line,
                    message: format!("non-numeric field: {e}"),
                })
            }
        };
        if !(2..=3).contains(&values.len()) {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 or 3 columns, found {}", values.len()),
            });
        }
        if let Some((_, _, u)) = rows.first() {
            if u.is_some() != (values.len() == 3) {
                return Err(Error::Parse {
                    line,
                    message: "inconsistent column count".into(),
                });
            }
        }
        rows.push((values[0], values[1], values.get(2).copied()));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(invalid(format!("duplicate wavelength {} nm", w[0].0)));
    }
    let has_unc = rows.first().is_some_and(|r| r.2.is_some());
    Spectrum::new(
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        has_unc.then(|| rows.iter().map(|r| r.2.unwrap()).collect()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FanoParams {
    pub lambda_0: f64,
    /// FWHM, nm.
    pub gamma: f64,
    pub q: f64,
    pub amplitude: f64,
    pub offset: f64,
}

impl FanoParams {
    pub fn evaluate(&self, lambda: f64) -> f64 {
        let e = 2.0 * (lambda - self.lambda_0) / self.gamma;
        self.amplitude * (self.q + e).powi(2) / (1.0 + e * e) + self.offset
    }

    /// Noiseless spectrum on the given wavelengths.
    pub fn synthesize(&self, wavelength_nm: &[f64]) -> Result<Spectrum> {
        let intensity = wavelength_nm.iter().map(|&l| self.evaluate(l)).collect();
        Spectrum::new(wavelength_nm.to_vec(), intensity, None)
    }

    fn to_vec(self) -> [f64; 5] {
        [self.lambda_0, self.gamma, self.q, self.amplitude, self.offset]
    }

    fn from_slice(p: &[f64]) -> Self {
        FanoParams {
            lambda_0: p[0],
            gamma: p[1],
            q: p[2],
            amplitude: p[3],
            offset: p[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FanoFit {
    pub lambda_0: f64,
    pub fwhm: f64,
    pub q_fano: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// `lambda_0 / fwhm`
    pub q_factor: f64,
    pub residual_rms: f64,
    /// Parameter order `lambda_0, fwhm, q_fano, amplitude, offset`.
    pub covariance: [[f64; 5]; 5],
    pub iterations: usize,
    /// Residual rms at the starting point.
    pub initial_residual_rms: f64,
}

impl FanoFit {
    pub fn params(&self) -> FanoParams {
        FanoParams {
            lambda_0: self.lambda_0,
            gamma: self.fwhm,
            q: self.q_fano,
            amplitude: self.amplitude,
            offset: self.offset,
        }
    }

    /// One-sigma error of the Q factor from the covariance, first order.
    pub fn q_factor_sigma(&self) -> f64 {
        let (l, g) = (self.lambda_0, self.fwhm);
        let (dl, dg) = (1.0 / g, -l / (g * g));
        let c = &self.covariance;
        (dl * dl * c[0][0] + 2.0 * dl * dg * c[0][1] + dg * dg * c[1][1]).max(0.0).sqrt()
    }

    /// CSV `wavelength_nm,measured,fitted` for plotting.
    pub fn write_curve_csv(&self, spectrum: &Spectrum, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let p = self.params();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["wavelength_nm", "measured", "fitted"])
            .map_err(|e| csv_err(path, e))?;
        for (l, y) in spectrum.wavelength_nm.iter().zip(&spectrum.intensity) {
            w.write_record([l.to_string(), y.to_string(), p.evaluate(*l).to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzianFit {
    pub lambda_0: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub q_factor: f64,
    pub residual_rms: f64,
}

/// A lineshape with analytic gradient.
trait Model<const N: usize> {
    fn value(p: &[f64; N], x: f64) -> f64;
    fn gradient(p: &[f64; N], x: f64) -> [f64; N];
    /// Scale against which a step in each parameter counts as relative.
    fn scales(p: &[f64; N]) -> [f64; N];
}

struct Fano;

impl Model<5> for Fano {
    fn value(p: &[f64; 5], x: f64) -> f64 {
        FanoParams::from_slice(p).evaluate(x)
    }

    fn gradient(p: &[f64; 5], x: f64) -> [f64; 5] {
        let [l0, g, q, a, _] = *p;
        let e = 2.0 * (x - l0) / g;
        let u = q + e;
        let d = 1.0 + e * e;
        let df_de = 2.0 * a * u * (1.0 - q * e) / (d * d);
        [df_de * (-2.0 / g), df_de * (-e / g), 2.0 * a * u / d, u * u / d, 1.0]
    }

    fn scales(p: &[f64; 5]) -> [f64; 5] {
        let g = p[1].abs();
        [g, g, p[2].abs().max(1.0), p[3].abs(), p[4].abs().max(p[3].abs())]
    }
}

struct Lorentz;

impl Model<4> for Lorentz {
    fn value(p: &[f64; 4], x: f64) -> f64 {
        let e = 2.0 * (x - p[0]) / p[1];
        p[2] / (1.0 + e * e) + p[3]
    }

    fn gradient(p: &[f64; 4], x: f64) -> [f64; 4] {
        let [l0, g, a, _] = *p;
        let e = 2.0 * (x - l0) / g;
        let d = 1.0 + e * e;
        let df_de = -2.0 * a * e / (d * d);
        [df_de * (-2.0 / g), df_de * (-e / g), 1.0 / d, 1.0]
    }

    fn scales(p: &[f64; 4]) -> [f64; 4] {
        let g = p[1].abs();
        [g, g, p[2].abs(), p[3].abs().max(p[2].abs())]
    }
}

struct Outcome<const N: usize> {
    params: [f64; N],
    cost: f64,
    initial_cost: f64,
    iterations: usize,
    /// `(J^T W J)^-1`, NaN when singular.
    inverse_normal: DMatrix<f64>,
}

fn weighted_cost<const N: usize, M: Model<N>>(p: &[f64; N], s: &Spectrum, w: &[f64]) -> f64 {
    s.wavelength_nm
        .iter()
        .zip(&s.intensity)
        .zip(w)
        .map(|((x, y), w)| (w * (y - M::value(p, *x))).powi(2))
        .sum()
}

fn normal_equations<const N: usize, M: Model<N>>(p: &[f64; N], s: &Spectrum, w: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(N, N);
    let mut g = DVector::zeros(N);
    for ((x, y), w) in s.wavelength_nm.iter().zip(&s.intensity).zip(w) {
        let j = M::gradient(p, *x).map(|d| d * w);
        let r = w * (y - M::value(p, *x));
        for i in 0..N {
            g[i] += j[i] * r;
            for k in 0..=i {
                a[(i, k)] += j[i] * j[k];
            }
        }
    }
    for i in 0..N {
        for k in 0..i {
            a[(k, i)] = a[(i, k)];
        }
    }
    (a, g)
}

/// Levenberg-Marquardt with Marquardt's diagonal scaling.
fn levenberg_marquardt<const N: usize, M: Model<N>>(s: &Spectrum, p0: [f64; N]) -> Result<Outcome<N>> {
    let w: Vec<f64> = match &s.uncertainty {
        Some(u) => u.iter().map(|u| 1.0 / u).collect(),
        None => vec![1.0; s.len()],
    };
    let mut p = p0;
    let mut cost = weighted_cost::<N, M>(&p, s, &w);
    if !cost.is_finite() {
        return Err(invalid("initial guess gives a non-finite residual"));
    }
    let initial_cost = cost;
    let mut mu = 1e-3;
    let mut iterations = 0;
    let (mut a, mut g) = normal_equations::<N, M>(&p, s, &w);
    let converged = loop {
        if cost == 0.0 {
            break true;
        }
        if iterations == MAX_ITERATIONS {
            break false;
        }
        iterations += 1;
        let dmax = (0..N).map(|i| a[(i, i)]).fold(0.0, f64::max);
        let mut damped = a.clone();
        for i in 0..N {
            damped[(i, i)] += mu * a[(i, i)].max(1e-30 * dmax);
        }
        let step = damped.cholesky().map(|c| c.solve(&g));
        let Some(step) = step else {
            mu *= 10.0;
            continue;
        };
        let mut trial = p;
        for i in 0..N {
            trial[i] += step[i];
        }
        let trial_cost = weighted_cost::<N, M>(&trial, s, &w);
        if trial_cost.is_finite() && trial_cost <= cost {
            let scales = M::scales(&p);
            let small = (0..N).all(|i| step[i].abs() <= PARAMETER_TOLERANCE * scales[i]);
            p = trial;
            cost = trial_cost;
            (a, g) = normal_equations::<N, M>(&p, s, &w);
            mu = (mu / 3.0).max(1e-12);
            if small {
                break true;
            }
        } else {
            mu *= 4.0;
            // no descent left at any damping: a stationary point
            if mu > 1e16 {
                break true;
            }
        }
    };
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            residual: (cost / s.len() as f64).sqrt(),
            last_iterate: p.to_vec(),
        });
    }
    let inverse_normal = a.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(N, N, f64::NAN));
    Ok(Outcome {
        params: p,
        cost,
        initial_cost,
        iterations,
        inverse_normal,
    })
}

/// Least-squares amplitude and offset for a fixed unit shape `h(x)`.
fn linear_amplitude(s: &Spectrum, shape: impl Fn(f64) -> f64) -> Option<(f64, f64, f64)> {
    let (mut shh, mut sh, mut sy, mut shy) = (0.0, 0.0, 0.0, 0.0);
    let n = s.len() as f64;
    for (x, y) in s.wavelength_nm.iter().zip(&s.intensity) {
        let h = shape(*x);
        shh += h * h;
        sh += h;
        sy += y;
        shy += h * y;
    }
    let det = n * shh - sh * sh;
    if !(det.abs() > 1e-300) {
        return None;
    }
    let a = (n * shy - sh * sy) / det;
    let b = (sy - a * sh) / n;
    let cost = s
        .wavelength_nm
        .iter()
        .zip(&s.intensity)
        .map(|(x, y)| (y - a * shape(*x) - b).powi(2))
        .sum::<f64>();
    Some((a, b, cost))
}

/// Extremum position and half-level width of a spectrum, measured from its median.
struct Feature {
    center: f64,
    width: f64,
}

fn feature(s: &Spectrum) -> Result<Feature> {
    let y = &s.intensity;
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if !(hi - lo > 1e-12 * hi.abs().max(lo.abs())) || hi == lo {
        return Err(Error::Degenerate("flat spectrum".into()));
    }
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let dev: Vec<f64> = y.iter().map(|v| (v - median).abs()).collect();
    let k = (0..m).max_by(|a, b| dev[*a].total_cmp(&dev[*b])).unwrap();
    let half = 0.5 * dev[k];
    let x = &s.wavelength_nm;
    let crossing = |i: usize, j: usize| {
        // linear interpolation of the half level between samples i (above) and j (below)
        let t = (dev[i] - half) / (dev[i] - dev[j]).max(f64::MIN_POSITIVE);
        x[i] + t * (x[j] - x[i])
    };
    let mut l = k;
    while l > 0 && dev[l - 1] > half {
        l -= 1;
    }
    let left = if l > 0 { crossing(l, l - 1) } else { x[0] };
    let mut r = k;
    while r + 1 < m && dev[r + 1] > half {
        r += 1;
    }
    let right = if r + 1 < m { crossing(r, r + 1) } else { x[m - 1] };
    let spacing = (x[m - 1] - x[0]) / (m - 1) as f64;
    Ok(Feature {
        center: x[k],
        width: (right - left).max(2.0 * spacing),
    })
}

const Q_GRID: [f64; 13] = [-10.0, -4.0, -2.0, -1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0];

/// Starting point: for each `q` on a grid and each way of lining the model
/// extremum (or zero) up with the data extremum, solve for `A`, `B`
/// linearly and keep the cheapest.
pub fn initial_guess(s: &Spectrum) -> Result<FanoParams> {
    let f = feature(s)?;
    let g = f.width;
    let mut best: Option<(f64, FanoParams)> = None;
    for q in Q_GRID {
        let mut centers = vec![f.center];
        if q != 0.0 {
            centers.push(f.center - g / (2.0 * q));
            centers.push(f.center + q * g / 2.0);
        }
        for l0 in centers {
            let shape = |x: f64| {
                let e = 2.0 * (x - l0) / g;
                (q + e).powi(2) / (1.0 + e * e)
            };
            if let Some((a, b, cost)) = linear_amplitude(s, shape) {
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((
                        cost,
                        FanoParams {
                            lambda_0: l0,
                            gamma: g,
                            q,
                            amplitude: a,
                            offset: b,
                        },
                    ));
                }
            }
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::Degenerate("no usable starting point".into()))
}

/// Maps a fitted parameter vector onto the canonical branch, carrying the
/// covariance along.
///
/// `(Gamma, q)` and `(-Gamma, -q)` give the same curve, and so do
/// `(q, A, B)` and `(-1/q, -A q^2, B + A (1 + q^2))`. The canonical choice is
/// `Gamma > 0` and `A >= 0`.
fn canonical(mut p: [f64; 5], mut cov: DMatrix<f64>) -> ([f64; 5], DMatrix<f64>) {
    if p[1] < 0.0 {
        p[1] = -p[1];
        p[2] = -p[2];
        let mut t = DMatrix::identity(5, 5);
        t[(1, 1)] = -1.0;
        t[(2, 2)] = -1.0;
        cov = &t * cov * t.transpose();
    }
    let (q, a, b) = (p[2], p[3], p[4]);
    if a < 0.0 && q != 0.0 {
        let mut t = DMatrix::identity(5, 5);
        t[(2, 2)] = 1.0 / (q * q);
        t[(3, 2)] = -2.0 * a * q;
        t[(3, 3)] = -q * q;
        t[(4, 2)] = 2.0 * a * q;
        t[(4, 3)] = 1.0 + q * q;
        p[2] = -1.0 / q;
        p[3] = -a * q * q;
        p[4] = b + a * (1.0 + q * q);
        cov = &t * cov * t.transpose();
    }
    (p, cov)
}

/// Fits the Fano lineshape. Without a guess, [`initial_guess`] is used.
pub fn fit_fano(spectrum: &Spectrum, guess: Option<FanoParams>) -> Result<FanoFit> {
    spectrum.validate()?;
    feature(spectrum)?;
    let p0 = match guess {
        Some(g) => {
            if !(g.gamma > 0.0) {
                return Err(invalid("initial gamma must be positive"));
            }
            g
        }
        None => initial_guess(spectrum)?,
    };
    let out = levenberg_marquardt::<5, Fano>(spectrum, p0.to_vec())?;
    let n = spectrum.len();
    let s2 = if spectrum.uncertainty.is_some() {
        1.0
    } else {
        out.cost / (n.saturating_sub(5)).max(1) as f64
    };
    let (p, cov) = canonical(out.params, out.inverse_normal * s2);
    let cov: [[f64; 5]; 5] = std::array::from_fn(|i| std::array::from_fn(|k| cov[(i, k)]));
    let (lo, hi) = (spectrum.wavelength_nm[0], spectrum.wavelength_nm[n - 1]);
    if !(p[0] >= lo && p[0] <= hi) {
        return Err(invalid(format!(
            "fitted resonance {:.6} nm lies outside the scanned range {lo}-{hi} nm",
            p[0]
        )));
    }
    let rms = |c: f64| (c / n as f64).sqrt();
    Ok(FanoFit {
        lambda_0: p[0],
        fwhm: p[1],
        q_fano: p[2],
        amplitude: p[3],
        offset: p[4],
        q_factor: p[0] / p[1],
        residual_rms: rms(out.cost),
        covariance: cov,
        iterations: out.iterations,
        initial_residual_rms: rms(out.initial_cost),
    })
}

/// Symmetric Lorentzian peak or dip plus offset.
pub fn fit_lorentzian(spectrum: &Spectrum) -> Result<LorentzianFit> {
    spectrum.validate()?;
    let f = feature(spectrum)?;
    let (l0, g) = (f.center, f.width);
    let shape = |x: f64| 1.0 / (1.0 + (2.0 * (x - l0) / g).powi(2));
    let (a, b, _) = linear_amplitude(spectrum, shape).ok_or_else(|| Error::Degenerate("flat spectrum".into()))?;
    let out = levenberg_marquardt::<4, Lorentz>(spectrum, [l0, g, a, b])?;
    let p = out.params;
    let fwhm = p[1].abs();
    Ok(LorentzianFit {
        lambda_0: p[0],
        fwhm,
        amplitude: p[2],
        offset: p[3],
        q_factor: p[0] / fwhm,
        residual_rms: (out.cost / spectrum.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(center: f64, half: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| center - half + 2.0 * half * i as f64 / (n - 1) as f64).collect()
    }

    fn reference() -> FanoParams {
        FanoParams {
            lambda_0: 1100.0,
            gamma: 0.1542,
            q: 2.0,
            amplitude: 1.0,
            offset: 0.1,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = [1100.0, 0.1542, 2.0, 1.3, 0.1];
        for x in [1099.9, 1100.02, 1100.3] {
            let g = Fano::gradient(&p, x);
            for i in 0..5 {
                let h = 1e-6 * Fano::scales(&p)[i];
                let (mut a, mut b) = (p, p);
                a[i] += h;
                b[i] -= h;
                let fd = (Fano::value(&a, x) - Fano::value(&b, x)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{i}: {fd} {}", g[i]);
            }
        }
        let p = [1100.0, 0.1542, 0.8, 0.2];
        for x in [1099.9, 1100.3] {
            let g = Lorentz::gradient(&p, x);
            for i in 0..4 {
                let h = 1e-6 * Lorentz::scales(&p)[i];
                let (mut a, mut b) = (p, p);
                a[i] += h;
                b[i] -= h;
                let fd = (Lorentz::value(&a, x) - Lorentz::value(&b, x)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn noiseless_recovery() {
        let truth = reference();
        let s = truth.synthesize(&grid(1100.0, 1.5, 500)).unwrap();
        let fit = fit_fano(&s, None).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(fit.lambda_0, 1100.0) < 1e-8);
        assert!(rel(fit.fwhm, 0.1542) < 1e-8, "{fit:?}");
        assert!(rel(fit.q_fano, 2.0) < 1e-8, "{fit:?}");
        assert!(rel(fit.amplitude, 1.0) < 1e-8);
        assert!(rel(fit.offset, 0.1) < 1e-8);
        assert_eq!(fit.q_factor, fit.lambda_0 / fit.fwhm);
        assert!((fit.q_factor - 7134.0).abs() < 1.0);
        assert!(fit.residual_rms <= fit.initial_residual_rms);
    }

    #[test]
    fn negative_q_and_dips() {
        let mut p = reference();
        p.q = -0.7;
        p.amplitude = 0.5;
        p.offset = 0.05;
        let s = p.synthesize(&grid(1100.1, 1.0, 400)).unwrap();
        let fit = fit_fano(&s, None).unwrap();
        assert!((fit.q_fano + 0.7).abs() < 1e-8);
        assert!((fit.fwhm / 0.1542 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn equivalent_branch_maps_to_same_curve() {
        let p = [1100.0, -0.1542, 2.0, -4.0, 5.1];
        let (c, _) = canonical(p, DMatrix::identity(5, 5));
        for x in [1099.8, 1100.0, 1100.05, 1100.4] {
            assert!((Fano::value(&p, x) - Fano::value(&c, x)).abs() < 1e-12);
        }
        assert!(c[1] > 0.0 && c[3] > 0.0);
    }

    #[test]
    fn flat_spectrum_is_degenerate() {
        let s = Spectrum::new(grid(1100.0, 1.0, 20), vec![3.0; 20], None).unwrap();
        assert!(matches!(fit_fano(&s, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn short_spectrum_rejected() {
        let err = parse_spectrum("1100.0,1.0\n1100.1,2.0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("at least 8"), "{err}");
    }

    #[test]
    fn header_skipped_and_rows_sorted() {
        let mut text = String::from("wavelength_nm,counts\n");
        for i in (0..10).rev() {
            text.push_str(&format!("{},{}\n", 1100.0 + i as f64 * 0.1, i));
        }
        let s = parse_spectrum(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.wavelength_nm[0], 1100.0);
        assert_eq!(s.intensity[9], 9.0);
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = String::from("wavelength_nm,counts\n");
        for i in 0..10 {
            text.push_str(&format!("{},{}\n", 1100.0 + i as f64, i));
        }
        text.push_str("1111.0,abc\n");
        match parse_spectrum(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_wavelength_rejected() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("{},{}\n", 1100 + i.min(8), i));
        }
        assert!(parse_spectrum(text.as_bytes()).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = reference().synthesize(&grid(1100.0, 1.5, 500)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(&path).unwrap();
        assert_eq!(load_spectrum(&path).unwrap(), s);
    }

    #[test]
    fn lorentzian_limit() {
        let q: f64 = 1e4;
        let p = FanoParams {
            lambda_0: 1100.0,
            gamma: 0.1542,
            q,
            amplitude: 1.0 / (q * q),
            offset: 0.1,
        };
        let s = p.synthesize(&grid(1100.0, 1.5, 500)).unwrap();
        let fano = fit_fano(&s, None).unwrap();
        let lor = fit_lorentzian(&s).unwrap();
        assert!((fano.fwhm / lor.fwhm - 1.0).abs() < 1e-3, "{} {}", fano.fwhm, lor.fwhm);
    }
}
