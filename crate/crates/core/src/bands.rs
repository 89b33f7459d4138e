//! TE band structure of the triangular hole lattice by plane-wave expansion.
//!
//! Lattice vectors `a1 = (1, 0)`, `a2 = (1/2, sqrt(3)/2)`; reciprocal vectors
//! `b1 = 2 pi (1, -1/sqrt(3))`, `b2 = 2 pi (0, 2/sqrt(3))`. The plane-wave
//! set is the rhombus `G = m b1 + n b2`, `|m|, |n| <= M`, so the count is
//! `(2M + 1)^2`. The inverse permittivity matrix is obtained by inverting
//! the permittivity Toeplitz matrix, which converges much faster than
//! Fourier-transforming `1 / eps` for the Hz master equation.
//!
//! Wave vectors are Cartesian, in units of `2 pi / a`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fdtd::csv_err;
use crate::geometry::LatticeSpec;
use crate::SPEED_OF_LIGHT;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Default k-path sampling.
pub const POINTS_PER_SEGMENT: usize = 16;

/// High-symmetry points in units of `2 pi / a`.
pub mod points {
    pub const GAMMA: [f64; 2] = [0.0, 0.0];
    /// `b2 / 2`
    pub const M: [f64; 2] = [0.0, 0.577_350_269_189_625_8];
    /// `(b1 + 2 b2) / 3`
    pub const K: [f64; 2] = [1.0 / 3.0, 0.577_350_269_189_625_8];
}

/// The closed path Gamma-M-K-Gamma, `per_segment` points per leg plus the endpoint.
pub fn k_path(per_segment: usize) -> (Vec<[f64; 2]>, Vec<(usize, &'static str)>) {
    let corners = [
        (points::GAMMA, "Gamma"),
        (points::M, "M"),
        (points::K, "K"),
        (points::GAMMA, "Gamma"),
    ];
    let mut path = Vec::with_capacity(3 * per_segment + 1);
    let mut labels = Vec::new();
    for w in corners.windows(2) {
        let (p, q) = (w[0].0, w[1].0);
        labels.push((path.len(), w[0].1));
        for s in 0..per_segment {
            let t = s as f64 / per_segment as f64;
            path.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    labels.push((path.len(), "Gamma"));
    path.push(points::GAMMA);
    (path, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandStructure {
    pub k_path: Vec<[f64; 2]>,
    /// `frequencies[k][band]` in `a / lambda`, ascending per k.
    pub frequencies: Vec<Vec<f64>>,
    pub num_plane_waves: usize,
}

impl BandStructure {
    pub fn num_bands(&self) -> usize {
        self.frequencies.first().map_or(0, Vec::len)
    }

    /// Band frequencies in Hz for lattice constant `a` (meters).
    pub fn physical_frequencies(&self, a: f64) -> Vec<Vec<f64>> {
        self.frequencies
            .iter()
            .map(|row| row.iter().map(|f| f * SPEED_OF_LIGHT / a).collect())
            .collect()
    }

    /// CSV with columns `k_index,k_x,k_y,band_index,frequency`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["k_index", "k_x", "k_y", "band_index", "frequency"])
            .map_err(|e| csv_err(path, e))?;
        for (ki, (k, row)) in self.k_path.iter().zip(&self.frequencies).enumerate() {
            for (b, f) in row.iter().enumerate() {
                w.write_record([
                    ki.to_string(),
                    format!("{:.10}", k[0]),
                    format!("{:.10}", k[1]),
                    (b + 1).to_string(),
                    format!("{f:.10}"),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `eps(G)` of one circular hole of radius `r` per cell.
fn hole_fourier(eps_bg: f64, eps_hole: f64, r: f64, g: f64) -> f64 {
    let fill = 2.0 * PI / SQRT3 * r * r;
    let x = g * r;
    if x < 1e-12 {
        eps_bg + (eps_hole - eps_bg) * fill
    } else {
        (eps_hole - eps_bg) * fill * 2.0 * libm::j1(x) / x
    }
}

/// Reciprocal vector `m b1 + n b2` in units of `2 pi / a`.
fn reciprocal(m: i64, n: i64) -> [f64; 2] {
    [m as f64, (2 * n - m) as f64 / SQRT3]
}

/// Lowest `num_bands` TE bands (Hz polarization) along `k_points`.
pub fn pwe_te_bands(lattice: &LatticeSpec, k_points: &[[f64; 2]], num_plane_waves: usize, num_bands: usize) -> Result<BandStructure> {
    lattice.validate()?;
    bands_with(
        lattice.slab_permittivity(),
        lattice.background_permittivity(),
        lattice.hole_radius_ratio,
        k_points,
        num_plane_waves,
        num_bands,
    )
}

fn bands_with(
    eps_bg: f64,
    eps_hole: f64,
    r: f64,
    k_points: &[[f64; 2]],
    num_plane_waves: usize,
    num_bands: usize,
) -> Result<BandStructure> {
    let side = (num_plane_waves as f64).sqrt().round() as usize;
    if side * side != num_plane_waves || side.is_multiple_of(2) || num_plane_waves < 121 {
        return Err(invalid(format!(
            "num_plane_waves {num_plane_waves} must be an odd perfect square of at least 121"
        )));
    }
    if num_bands == 0 || num_bands > num_plane_waves {
        return Err(invalid("num_bands must lie in 1..=num_plane_waves"));
    }
    if k_points.is_empty() {
        return Err(invalid("empty k-point list"));
    }
    let half = (side / 2) as i64;
    let gs: Vec<(i64, i64)> = (-half..=half).flat_map(|m| (-half..=half).map(move |n| (m, n))).collect();
    let n = gs.len();
    let eps = DMatrix::from_fn(n, n, |a, b| {
        let (m, k) = (gs[a].0 - gs[b].0, gs[a].1 - gs[b].1);
        let g = reciprocal(m, k);
        hole_fourier(eps_bg, eps_hole, r, 2.0 * PI * g[0].hypot(g[1]))
    });
    let eta = eps
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("permittivity matrix is singular".into()))?;
    let eta = (&eta + eta.transpose()) * 0.5;
    let gvec: Vec<[f64; 2]> = gs.iter().map(|&(m, k)| reciprocal(m, k)).collect();

    let frequencies = k_points
        .par_iter()
        .map(|k| {
            let kg: Vec<[f64; 2]> = gvec.iter().map(|g| [2.0 * PI * (k[0] + g[0]), 2.0 * PI * (k[1] + g[1])]).collect();
            let theta = DMatrix::from_fn(n, n, |a, b| (kg[a][0] * kg[b][0] + kg[a][1] * kg[b][1]) * eta[(a, b)]);
            let eig = SymmetricEigen::try_new(theta, 1e-13, 10_000).ok_or(Error::Eigensolver { kx: k[0], ky: k[1] })?;
            let mut w: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Eigensolver { kx: k[0], ky: k[1] });
            }
            w.sort_by(f64::total_cmp);
            Ok(w.iter().take(num_bands).map(|v| v.max(0.0).sqrt() / (2.0 * PI)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(BandStructure {
        k_path: k_points.to_vec(),
        frequencies,
        num_plane_waves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandGap {
    pub lower: f64,
    pub upper: f64,
    /// `(upper - lower) / midgap`
    pub gap_midgap_ratio: f64,
}

impl BandGap {
    pub fn midgap(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, f: f64) -> bool {
        f > self.lower && f < self.upper
    }

    /// Free-space wavelengths `(long, short)` of the gap edges for lattice constant `a`.
    pub fn wavelength_span(&self, a: f64) -> (f64, f64) {
        (a / self.lower, a / self.upper)
    }
}

/// Gap between bands 1 and 2: `max band 1` to `min band 2`, if open.
pub fn find_gap(bands: &BandStructure) -> Option<BandGap> {
    if bands.num_bands() < 2 {
        return None;
    }
    let lower = bands.frequencies.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
    let upper = bands.frequencies.iter().map(|r| r[1]).fold(f64::INFINITY, f64::min);
    (lower < upper).then(|| BandGap {
        lower,
        upper,
        gap_midgap_ratio: (upper - lower) / (0.5 * (upper + lower)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acceptance_lattice() -> LatticeSpec {
        LatticeSpec::normalized(2.197_07, 0.6, 0.2553)
    }

    #[test]
    fn path_layout() {
        let (p, labels) = k_path(16);
        assert_eq!(p.len(), 49);
        assert_eq!(labels[1], (16, "M"));
        assert_eq!(labels[2], (32, "K"));
        assert_eq!(p[16], points::M);
        // |K| = 2/3 in units of 2 pi / a
        assert!((points::K[0].hypot(points::K[1]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_medium_is_free_photon() {
        let ks = [[0.1, 0.05], points::M, points::K, [0.0, 0.0]];
        let b = bands_with(2.25, 2.25, 0.3, &ks, 121, 3).unwrap();
        for (k, row) in ks.iter().zip(&b.frequencies) {
            // lowest three |k + G| over the plane-wave set
            let mut all: Vec<f64> = (-5..=5)
                .flat_map(|m| (-5..=5).map(move |n| reciprocal(m, n)))
                .map(|g| (k[0] + g[0]).hypot(k[1] + g[1]) / 1.5)
                .collect();
            all.sort_by(f64::total_cmp);
            for (f, e) in row.iter().zip(&all) {
                assert!((f - e).abs() < 1e-10, "{f} {e}");
            }
        }
        assert!(find_gap(&b).is_none());
    }

    #[test]
    fn gap_opens_for_acceptance_lattice() {
        let (path, _) = k_path(8);
        let b = pwe_te_bands(&acceptance_lattice(), &path, 121, 4).unwrap();
        let g = find_gap(&b).unwrap();
        assert!((g.lower - 0.3138).abs() < 1e-3, "{g:?}");
        assert!((g.upper - 0.3442).abs() < 1e-3, "{g:?}");
        assert_eq!(b.frequencies[0][0], 0.0);
    }

    #[test]
    fn flat_bands_gap() {
        let b = BandStructure {
            k_path: vec![[0.0; 2], [0.1, 0.0]],
            frequencies: vec![vec![0.2, 0.4], vec![0.3, 0.5]],
            num_plane_waves: 121,
        };
        let g = find_gap(&b).unwrap();
        assert_eq!((g.lower, g.upper), (0.3, 0.4));
        assert!((g.gap_midgap_ratio - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn inversion_symmetry_exact() {
        let ks = [[0.13, 0.21], [-0.13, -0.21]];
        let b = pwe_te_bands(&acceptance_lattice(), &ks, 121, 5).unwrap();
        for (p, q) in b.frequencies[0].iter().zip(&b.frequencies[1]) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_plane_wave_counts() {
        let lat = acceptance_lattice();
        assert!(pwe_te_bands(&lat, &[[0.0; 2]], 100, 2).is_err());
        assert!(pwe_te_bands(&lat, &[[0.0; 2]], 144, 2).is_err());
        assert!(pwe_te_bands(&lat, &[[0.0; 2]], 81, 2).is_err());
    }

    #[test]
    fn physical_frequencies_scale_inversely_with_a() {
        let b = pwe_te_bands(&acceptance_lattice(), &[points::M], 121, 2).unwrap();
        let f1 = b.physical_frequencies(400e-9);
        let f2 = b.physical_frequencies(800e-9);
        assert!((f1[0][1] - 2.0 * f2[0][1]).abs() / f1[0][1] < 1e-15);
    }
}
