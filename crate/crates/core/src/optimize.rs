//! Bounded Nelder-Mead maximization over edge-hole design vectors.
//!
//! Points outside the box are projected onto it. Coefficients follow the
//! dimension-adaptive choice of Gao and Han. On stagnation the simplex is
//! rebuilt once around the best vertex; a second stagnation ends the run.
//!
//! Every evaluation is appended to a CSV trace. Because the iteration is
//! deterministic, resuming replays the algorithm and serves the recorded
//! values for evaluations whose point matches bit for bit.

use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fdtd::csv_err;
use crate::geometry::{CavityDesign, HoleModification, LatticeSpec};

/// `(ds_1..ds_k, dr_1..dr_k, r/a)`, all in units of `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    pub shifts: Vec<f64>,
    pub reductions: Vec<f64>,
    pub radius_ratio: f64,
}

impl DesignVector {
    /// Reads the first `k` modifications (missing ones count as zero).
    pub fn from_design(lattice: &LatticeSpec, design: &CavityDesign, k: usize) -> Self {
        let mut shifts = vec![0.0; k];
        let mut reductions = vec![0.0; k];
        for m in &design.modifications {
            let i = m.index_from_cavity_edge;
            if (1..=k).contains(&i) {
                shifts[i - 1] = m.axial_shift_ratio;
                reductions[i - 1] = m.radius_reduction_ratio;
            }
        }
        DesignVector {
            shifts,
            reductions,
            radius_ratio: lattice.hole_radius_ratio,
        }
    }

    pub fn holes(&self) -> usize {
        self.shifts.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.shifts.clone();
        v.extend(&self.reductions);
        v.push(self.radius_ratio);
        v
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len().is_multiple_of(2) {
            return Err(invalid(format!("design vector length {} is not 2k + 1", x.len())));
        }
        let k = x.len() / 2;
        Ok(DesignVector {
            shifts: x[..k].to_vec(),
            reductions: x[k..2 * k].to_vec(),
            radius_ratio: x[2 * k],
        })
    }

    /// Lattice and design with these parameters; other fields come from the templates.
    pub fn apply(&self, lattice: &LatticeSpec, design: &CavityDesign) -> Result<(LatticeSpec, CavityDesign)> {
        let mut lat = *lattice;
        lat.hole_radius_ratio = self.radius_ratio;
        let mut mods: Vec<HoleModification> = design
            .modifications
            .iter()
            .filter(|m| m.index_from_cavity_edge > self.holes())
            .copied()
            .collect();
        for i in 0..self.holes() {
            if self.reductions[i] >= self.radius_ratio {
                return Err(invalid(format!(
                    "radius reduction {} of hole {} leaves no hole (r/a = {})",
                    self.reductions[i],
                    i + 1,
                    self.radius_ratio
                )));
            }
            mods.push(HoleModification::new(i + 1, self.shifts[i], self.reductions[i]));
        }
        mods.sort_by_key(|m| m.index_from_cavity_edge);
        let d = design.clone().with_modifications(mods);
        d.validate(&lat)?;
        Ok((lat, d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Bounds { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Default box for `k` modified holes: shifts in `[0, 0.5]`, reductions
    /// in `[0, 0.15]`, `r/a` in `[0.2, 0.35]`, so radii stay positive.
    pub fn for_design(k: usize) -> Self {
        let mut lower = vec![0.0; 2 * k];
        let mut upper = vec![0.5; k];
        upper.extend(vec![0.15; k]);
        lower.push(0.2);
        upper.push(0.35);
        Bounds { lower, upper }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(invalid("bounds must be non-empty with matching lengths"));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(invalid(format!("bound {i}: [{l}, {u}] is not a finite interval")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Maximum number of objective evaluations (at least 10).
    pub budget: usize,
    /// Initial simplex edge as a fraction of each bound range.
    pub initial_step: f64,
    /// Stagnation when every vertex is within this fraction of the range from the best.
    pub x_tolerance: f64,
    /// ... or the value spread is below this, relative to `|f_best|`.
    pub f_tolerance: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            budget: 100,
            initial_step: 0.1,
            x_tolerance: 1e-7,
            f_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub index: usize,
    pub x: Vec<f64>,
    /// `-inf` when the objective failed at this point.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub initial_value: f64,
    pub evaluations: usize,
    pub restarts: usize,
    /// Budget ran out before the simplex stagnated twice.
    pub budget_exhausted: bool,
    pub trace: Vec<Evaluation>,
}

/// Append-only evaluation log, optionally mirrored to CSV.
struct Recorder {
    replay: Vec<Evaluation>,
    trace: Vec<Evaluation>,
    file: Option<(PathBuf, csv::Writer<BufWriter<std::fs::File>>)>,
    budget: usize,
}

impl Recorder {
    fn open(path: Option<&Path>, dim: usize, budget: usize) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Recorder {
                replay: Vec::new(),
                trace: Vec::new(),
                file: None,
                budget,
            });
        };
        let replay = if path.exists() { read_trace(path)? } else { Vec::new() };
        if replay.iter().any(|e| e.x.len() != dim) {
            return Err(invalid(format!("{}: trace dimension differs from the bounds", path.display())));
        }
        // rewrite from scratch; replayed rows are written back as they are consumed
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["evaluation".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        header.push("value".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        Ok(Recorder {
            replay,
            trace: Vec::new(),
            file: Some((path.to_path_buf(), w)),
            budget,
        })
    }

    fn remaining(&self) -> usize {
        self.budget - self.trace.len()
    }

    fn push(&mut self, x: Vec<f64>, value: f64) -> Result<()> {
        let e = Evaluation {
            index: self.trace.len(),
            x,
            value,
        };
        if let Some((path, w)) = &mut self.file {
            let mut rec = vec![e.index.to_string()];
            rec.extend(e.x.iter().map(|v| v.to_string()));
            rec.push(e.value.to_string());
            w.write_record(&rec).map_err(|err| csv_err(path, err))?;
            w.flush().map_err(|err| Error::io(path.clone(), err))?;
        }
        self.trace.push(e);
        Ok(())
    }

    /// Evaluates a batch of points, in parallel where not replayed.
    fn evaluate<F>(&mut self, f: &F, points: Vec<Vec<f64>>) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let start = self.trace.len();
        let values: Vec<f64> = points
            .par_iter()
            .enumerate()
            .map(|(i, x)| match self.replay.get(start + i) {
                Some(r) if r.x == *x => r.value,
                _ => objective_value(f, x),
            })
            .collect();
        for (x, v) in points.into_iter().zip(&values) {
            self.push(x, *v)?;
        }
        Ok(values)
    }
}

fn objective_value<F: Fn(&[f64]) -> Result<f64>>(f: &F, x: &[f64]) -> f64 {
    match f(x) {
        Ok(v) if !v.is_nan() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// Reads a trace written by [`maximize`].
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<Evaluation>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let nums = nums.map_err(|e| Error::Parse {
            line,
            message: format!("{}: {e}", path.display()),
        })?;
        if nums.len() < 3 {
            return Err(Error::Parse {
                line,
                message: "trace rows need an index, coordinates and a value".into(),
            });
        }
        out.push(Evaluation {
            index: nums[0] as usize,
            x: nums[1..nums.len() - 1].to_vec(),
            value: nums[nums.len() - 1],
        });
    }
    Ok(out)
}

/// Maximizes `f` over the box starting from `x0`.
///
/// Objective errors and NaN count as `-inf`. With `trace_path` set, every
/// evaluation is logged there and an existing log is resumed.
pub fn maximize<F>(f: F, x0: &[f64], bounds: &Bounds, options: &NelderMeadOptions, trace_path: Option<&Path>) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    bounds.validate()?;
    let n_all = bounds.dim();
    if x0.len() != n_all {
        return Err(invalid(format!("start point has {} components, bounds {}", x0.len(), n_all)));
    }
    if options.budget < 10 {
        return Err(invalid("optimization budget must be at least 10 evaluations"));
    }
    if !(options.initial_step > 0.0 && options.initial_step <= 1.0) {
        return Err(invalid("initial_step must lie in (0, 1]"));
    }
    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    let mut rec = Recorder::open(trace_path, n_all, options.budget)?;

    // collapsed coordinates are held fixed
    let free: Vec<usize> = (0..n_all).filter(|&i| bounds.upper[i] > bounds.lower[i]).collect();
    let range: Vec<f64> = free.iter().map(|&i| bounds.upper[i] - bounds.lower[i]).collect();
    let n = free.len();
    let embed = |y: &[f64]| {
        let mut x = start.clone();
        for (k, &i) in free.iter().enumerate() {
            x[i] = y[k].clamp(bounds.lower[i], bounds.upper[i]);
        }
        x
    };
    let project = |y: &mut Vec<f64>| {
        for (k, &i) in free.iter().enumerate() {
            y[k] = y[k].clamp(bounds.lower[i], bounds.upper[i]);
        }
    };

    let initial_value = rec.evaluate(&f, vec![start.clone()])?[0];
    if n == 0 {
        return Ok(finish(rec, start, initial_value, initial_value, 0, false));
    }
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let y0: Vec<f64> = free.iter().map(|&i| start[i]).collect();
    let build_simplex = |center: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| {
                let i = free[k];
                let mut y = center.to_vec();
                let step = options.initial_step * range[k];
                y[k] = if center[k] + step <= bounds.upper[i] {
                    center[k] + step
                } else {
                    center[k] - step
                };
                y
            })
            .collect()
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(y0.clone(), initial_value)];
    let mut restarts = 0;
    let mut exhausted = false;
    let mut fill = build_simplex(&y0);
    'outer: loop {
        // fill in new vertices (initial simplex or restart)
        if !fill.is_empty() {
            let take = fill.len().min(rec.remaining());
            let pts: Vec<Vec<f64>> = fill.drain(..).take(take).collect();
            let vals = rec.evaluate(&f, pts.iter().map(|y| embed(y)).collect())?;
            simplex.extend(pts.into_iter().zip(vals));
            if simplex.len() < n + 1 {
                exhausted = true;
                break;
            }
        }
        loop {
            // best first; ties keep earlier order
            simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            let spread = (0..n)
                .map(|k| simplex.iter().map(|v| (v.0[k] - simplex[0].0[k]).abs()).fold(0.0, f64::max) / range[k])
                .fold(0.0, f64::max);
            let f_flat = best.is_finite() && (best - worst).abs() <= options.f_tolerance * best.abs().max(1e-300);
            if spread <= options.x_tolerance || f_flat {
                if restarts == 0 {
                    restarts = 1;
                    let center = simplex[0].clone();
                    simplex = vec![center.clone()];
                    fill = build_simplex(&center.0);
                    continue 'outer;
                }
                break 'outer;
            }
            if rec.remaining() == 0 {
                exhausted = true;
                break 'outer;
            }
            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(&v.0) {
                    *c += x / nf;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                let mut y: Vec<f64> = (0..n).map(|k| centroid[k] + t * (centroid[k] - simplex[n].0[k])).collect();
                project(&mut y);
                y
            };
            let second_worst = simplex[n - 1].1;
            let yr = along(alpha);
            let fr = rec.evaluate(&f, vec![embed(&yr)])?[0];
            if fr > best {
                if rec.remaining() == 0 {
                    simplex[n] = (yr, fr);
                    exhausted = true;
                    break 'outer;
                }
                let ye = along(alpha * beta);
                let fe = rec.evaluate(&f, vec![embed(&ye)])?[0];
                simplex[n] = if fe > fr { (ye, fe) } else { (yr, fr) };
                continue;
            }
            if fr > second_worst {
                simplex[n] = (yr, fr);
                continue;
            }
            if rec.remaining() == 0 {
                exhausted = true;
                break 'outer;
            }
            // outside contraction must beat the reflection, inside the worst vertex
            let outside = fr > worst;
            let yc = along(if outside { alpha * gamma } else { -gamma });
            let fc = rec.evaluate(&f, vec![embed(&yc)])?[0];
            if (outside && fc >= fr) || (!outside && fc > worst) {
                simplex[n] = (yc, fc);
                continue;
            }
            // shrink toward the best vertex
            let take = n.min(rec.remaining());
            let b = simplex[0].0.clone();
            let pts: Vec<Vec<f64>> = simplex[1..=take]
                .iter()
                .map(|v| (0..n).map(|k| b[k] + delta * (v.0[k] - b[k])).collect())
                .collect();
            let vals = rec.evaluate(&f, pts.iter().map(|y| embed(y)).collect())?;
            for (slot, (y, v)) in simplex[1..=take].iter_mut().zip(pts.into_iter().zip(vals)) {
                *slot = (y, v);
            }
            if take < n {
                exhausted = true;
                break 'outer;
            }
        }
    }
    let (best_y, best_value) = simplex
        .iter()
        .fold((&simplex[0].0, simplex[0].1), |acc, v| if v.1 > acc.1 { (&v.0, v.1) } else { acc });
    let best_x = embed(best_y);
    Ok(finish(rec, best_x, best_value, initial_value, restarts, exhausted))
}

fn finish(rec: Recorder, best_x: Vec<f64>, best_value: f64, initial_value: f64, restarts: usize, exhausted: bool) -> OptimizeResult {
    // the best recorded point wins over the simplex in case of later ties
    let (best_x, best_value) = rec.trace.iter().fold(
        (best_x, best_value),
        |acc, e| if e.value > acc.1 { (e.x.clone(), e.value) } else { acc },
    );
    OptimizeResult {
        best_x,
        best_value,
        initial_value,
        evaluations: rec.trace.len(),
        restarts,
        budget_exhausted: exhausted,
        trace: rec.trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::presets;

    fn quadratic(center: Vec<f64>) -> impl Fn(&[f64]) -> Result<f64> + Sync {
        move |x| Ok(-x.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
    }

    #[test]
    fn design_vector_round_trip() {
        let (lat, d) = presets::l3_sr3();
        let v = DesignVector::from_design(&lat, &d, 3);
        assert_eq!(v.to_vec(), vec![0.3482, 0.2476, 0.0573, 0.098, 0.0882, 0.0927, 0.2553]);
        let (lat2, d2) = v.apply(&lat, &d).unwrap();
        assert_eq!((lat2, d2), (lat, d.clone()));
        assert_eq!(DesignVector::from_slice(&v.to_vec()).unwrap(), v);
        let mut bad = v.clone();
        bad.reductions[0] = 0.3;
        assert!(bad.apply(&lat, &d).is_err());
    }

    #[test]
    fn quadratic_in_three_dimensions() {
        let bounds = Bounds::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let opts = NelderMeadOptions {
            budget: 200,
            ..Default::default()
        };
        let r = maximize(quadratic(vec![0.3, -0.2, 0.55]), &[0.0; 3], &bounds, &opts, None).unwrap();
        let err = r
            .best_x
            .iter()
            .zip([0.3, -0.2, 0.55])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{r:?}");
        assert!(r.evaluations <= 200);
    }

    #[test]
    fn collapsed_bounds_single_evaluation() {
        let bounds = Bounds::new(vec![0.5, 0.2], vec![0.5, 0.2]).unwrap();
        let r = maximize(quadratic(vec![0.0, 0.0]), &[0.1, 0.1], &bounds, &Default::default(), None).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.best_x, vec![0.5, 0.2]);
    }

    #[test]
    fn optimum_on_the_boundary() {
        let bounds = Bounds::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        let opts = NelderMeadOptions {
            budget: 150,
            ..Default::default()
        };
        let r = maximize(quadratic(vec![1.5, 0.5]), &[0.2, 0.2], &bounds, &opts, None).unwrap();
        assert!((r.best_x[0] - 1.0).abs() < 1e-4 && (r.best_x[1] - 0.5).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let bounds = Bounds::new(vec![-1.0; 4], vec![1.0; 4]).unwrap();
        let opts = NelderMeadOptions {
            budget: 12,
            ..Default::default()
        };
        let r = maximize(quadratic(vec![0.3; 4]), &[0.0; 4], &bounds, &opts, None).unwrap();
        assert!(r.budget_exhausted);
        assert_eq!(r.evaluations, 12);
        assert!(r.best_value >= r.initial_value);
    }

    #[test]
    fn failures_count_as_worst() {
        let bounds = Bounds::new(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                Err(Error::Degenerate("nope".into()))
            } else {
                Ok(-(x[0] - 0.4).powi(2) - x[1] * x[1])
            }
        };
        let r = maximize(f, &[0.0, 0.3], &bounds, &Default::default(), None).unwrap();
        assert!((r.best_x[0] - 0.4).abs() < 1e-3);
    }

    #[test]
    fn resume_replays_the_trace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let bounds = Bounds::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let short = NelderMeadOptions {
            budget: 25,
            ..Default::default()
        };
        let long = NelderMeadOptions {
            budget: 60,
            ..Default::default()
        };
        let center = vec![0.1, 0.2, -0.3];
        maximize(quadratic(center.clone()), &[0.0; 3], &bounds, &short, Some(&path)).unwrap();
        assert_eq!(read_trace(&path).unwrap().len(), 25);

        let calls = std::sync::atomic::AtomicUsize::new(0);
        let counted = |x: &[f64]| {
            calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            quadratic(center.clone())(x)
        };
        let resumed = maximize(counted, &[0.0; 3], &bounds, &long, Some(&path)).unwrap();
        assert_eq!(calls.load(std::sync::atomic::Ordering::Relaxed), 35);
        let fresh = maximize(quadratic(center), &[0.0; 3], &bounds, &long, None).unwrap();
        assert_eq!(resumed.trace, fresh.trace);
        assert_eq!(read_trace(&path).unwrap(), fresh.trace);
    }
}
