use rayon::prelude::*;

use super::lattice::{Hole, LatticeSpec};
use crate::error::{invalid, Result};

/// Minimum rasterization resolution in cells per lattice constant.
pub const MIN_RESOLUTION: usize = 8;

/// Uniform cell grid centered on the origin (the cavity center).
///
/// `shape` is `[nx, ny, nz]`; 2D grids have `nz == 1`. Lengths are in units
/// of the lattice constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub resolution: usize,
    pub shape: [usize; 3],
    pub dimensionality: usize,
}

impl GridSpec {
    pub fn new_2d(resolution: usize, nx: usize, ny: usize) -> Self {
        GridSpec {
            resolution,
            shape: [nx, ny, 1],
            dimensionality: 2,
        }
    }

    pub fn new_3d(resolution: usize, nx: usize, ny: usize, nz: usize) -> Self {
        GridSpec {
            resolution,
            shape: [nx, ny, nz],
            dimensionality: 3,
        }
    }

    /// Smallest grid covering the holes plus `padding` (in `a`) on each side.
    ///
    /// `nx` is even and `ny` odd so the origin sits on an Ey node of the Yee
    /// lattice and both mirror planes map cells onto cells.
    pub fn enclosing_2d(holes: &[Hole], resolution: usize, padding: f64) -> Self {
        let (hx, hy) = holes.iter().fold((0.0f64, 0.0f64), |(hx, hy), h| {
            (hx.max(h.x.abs() + h.radius), hy.max(h.y.abs() + h.radius))
        });
        let res = resolution as f64;
        let nx = 2 * ((hx + padding) * res).ceil() as usize;
        let ny = 2 * ((hy + padding) * res - 0.5).ceil().max(0.0) as usize + 1;
        GridSpec::new_2d(resolution, nx.max(2), ny)
    }

    /// Like [`GridSpec::enclosing_2d`], with `nz` cells spanning the slab plus `z_padding` above and below.
    pub fn enclosing_3d(holes: &[Hole], resolution: usize, padding: f64, thickness: f64, z_padding: f64) -> Self {
        let g = Self::enclosing_2d(holes, resolution, padding);
        let nz = 2 * ((thickness * 0.5 + z_padding) * resolution as f64).ceil() as usize;
        GridSpec::new_3d(resolution, g.shape[0], g.shape[1], nz.max(2))
    }

    pub fn cell_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical extent per axis (z extent is 0 in 2D).
    pub fn extent(&self) -> [f64; 3] {
        let h = self.cell_size();
        let z = if self.dimensionality == 3 { self.shape[2] as f64 * h } else { 0.0 };
        [self.shape[0] as f64 * h, self.shape[1] as f64 * h, z]
    }

    /// Cell-center coordinate along `axis`, exactly antisymmetric under `i -> n-1-i`.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        let n = self.shape[axis] as f64;
        (2.0 * i as f64 + 1.0 - n) * 0.5 * self.cell_size()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }
}

/// Relative permittivity sampled at cell centers, row-major `(x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DielectricGrid {
    pub spec: GridSpec,
    pub permittivity: Vec<f64>,
}

impl DielectricGrid {
    pub fn uniform(spec: GridSpec, eps: f64) -> Self {
        DielectricGrid {
            spec,
            permittivity: vec![eps; spec.len()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.spec.shape
    }

    pub fn resolution(&self) -> usize {
        self.spec.resolution
    }

    pub fn dimensionality(&self) -> usize {
        self.spec.dimensionality
    }

    pub fn cell_size(&self) -> f64 {
        self.spec.cell_size()
    }

    /// Lower corner of the grid.
    pub fn origin(&self) -> [f64; 3] {
        let e = self.spec.extent();
        [-0.5 * e[0], -0.5 * e[1], -0.5 * e[2]]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.permittivity[self.spec.index(i, j, k)]
    }

    pub fn mean(&self) -> f64 {
        self.permittivity.iter().sum::<f64>() / self.permittivity.len() as f64
    }

    /// Cell volume (area in 2D).
    pub fn cell_volume(&self) -> f64 {
        self.cell_size().powi(self.dimensionality() as i32)
    }

    /// `max |eps(x,y,z) - eps(-x,y,z)|`.
    pub fn mirror_residual_x(&self) -> f64 {
        let [nx, ny, nz] = self.shape();
        let mut worst = 0.0f64;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    worst = worst.max((self.get(i, j, k) - self.get(nx - 1 - i, j, k)).abs());
                }
            }
        }
        worst
    }

    /// `max |eps(x,y,z) - eps(x,-y,z)|`.
    pub fn mirror_residual_y(&self) -> f64 {
        let [nx, ny, nz] = self.shape();
        let mut worst = 0.0f64;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    worst = worst.max((self.get(i, j, k) - self.get(i, ny - 1 - j, k)).abs());
                }
            }
        }
        worst
    }

    /// Block-averages into a grid with half the resolution. Needs even shape in-plane.
    pub fn coarsen(&self) -> Option<DielectricGrid> {
        let [nx, ny, nz] = self.shape();
        let three = self.dimensionality() == 3;
        if !nx.is_multiple_of(2) || !ny.is_multiple_of(2) || (three && !nz.is_multiple_of(2)) || !self.resolution().is_multiple_of(2) {
            return None;
        }
        let cz = if three { nz / 2 } else { 1 };
        let spec = GridSpec {
            resolution: self.resolution() / 2,
            shape: [nx / 2, ny / 2, cz],
            dimensionality: self.dimensionality(),
        };
        let mut out = DielectricGrid::uniform(spec, 0.0);
        let zf = if three { 2 } else { 1 };
        let w = 1.0 / (4 * zf) as f64;
        for i in 0..nx / 2 {
            for j in 0..ny / 2 {
                for k in 0..cz {
                    let mut s = 0.0;
                    for di in 0..2 {
                        for dj in 0..2 {
                            for dk in 0..zf {
                                s += self.get(2 * i + di, 2 * j + dj, zf * k + dk);
                            }
                        }
                    }
                    out.permittivity[spec.index(i, j, k)] = s * w;
                }
            }
        }
        Some(out)
    }
}

/// Boundary treatment of partially filled cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    /// Each cell takes the material at its center.
    Off,
    /// Area-weighted average with the fill fraction estimated on an
    /// `n x n` sub-cell grid (`n >= 4`).
    Subpixel(usize),
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Subpixel(4)
    }
}

/// Fraction of the unit square `[-1/2, 1/2]^2` with `n . u <= t` for a unit normal `n`.
fn halfplane_fraction(t: f64, nx: f64, ny: f64) -> f64 {
    let (a, b) = {
        let (p, q) = (nx.abs(), ny.abs());
        if p >= q {
            (p, q)
        } else {
            (q, p)
        }
    };
    let tp = t + 0.5 * (a + b);
    if tp <= 0.0 {
        return 0.0;
    }
    if tp >= a + b {
        return 1.0;
    }
    if b < 1e-12 {
        return (t / a + 0.5).clamp(0.0, 1.0);
    }
    if tp <= b {
        tp * tp / (2.0 * a * b)
    } else if tp <= a {
        (tp - 0.5 * b) / a
    } else {
        let s = a + b - tp;
        1.0 - s * s / (2.0 * a * b)
    }
}

/// Hole fill fraction of the square cell centered at `(x, y)` with side `h`.
///
/// Sub-cells far from the rim count as 0 or 1; sub-cells crossed by the rim
/// use the exact area cut by the rim's local tangent line.
fn hole_fraction(hole: &Hole, x: f64, y: f64, h: f64, subdivisions: usize) -> f64 {
    let dx = x - hole.x;
    let dy = y - hole.y;
    let half = 0.5 * h;
    let far = dx.abs() + half;
    let far_y = dy.abs() + half;
    let near_x = (dx.abs() - half).max(0.0);
    let near_y = (dy.abs() - half).max(0.0);
    let r2 = hole.radius * hole.radius;
    if near_x * near_x + near_y * near_y >= r2 {
        return 0.0;
    }
    if far * far + far_y * far_y <= r2 {
        return 1.0;
    }
    let n = subdivisions;
    let hs = h / n as f64;
    let mut acc = 0.0;
    for a in 0..n {
        let sx = dx + (2 * a as i64 + 1 - n as i64) as f64 * 0.5 * hs;
        for b in 0..n {
            let sy = dy + (2 * b as i64 + 1 - n as i64) as f64 * 0.5 * hs;
            let d = (sx * sx + sy * sy).sqrt();
            let signed = d - hole.radius;
            if signed >= hs {
                continue;
            }
            if signed <= -hs || d == 0.0 {
                acc += 1.0;
                continue;
            }
            // inside is n . u <= -signed/hs with n the outward radial direction
            acc += halfplane_fraction(-signed / hs, sx / d, sy / d);
        }
    }
    acc / (n * n) as f64
}

/// Fraction of `[z0, z1]` inside the slab `|z| <= t/2`.
fn slab_fraction(z0: f64, z1: f64, thickness: f64) -> f64 {
    let half = 0.5 * thickness;
    ((z1.min(half) - z0.max(-half)).max(0.0)) / (z1 - z0)
}

/// Rasterizes holes into a permittivity grid.
///
/// Cells inside a hole take `background_index^2`, cells in the slab
/// `slab_index_n^2`; in 3D the slab occupies `|z| <= slab_thickness_ratio / 2`
/// and everything else is background.
pub fn rasterize(lattice: &LatticeSpec, holes: &[Hole], spec: &GridSpec, smoothing: Smoothing) -> Result<DielectricGrid> {
    if spec.resolution < MIN_RESOLUTION {
        return Err(invalid(format!(
            "resolution {} below the minimum of {MIN_RESOLUTION} cells per a",
            spec.resolution
        )));
    }
    if let Smoothing::Subpixel(n) = smoothing {
        if n < 4 {
            return Err(invalid("subpixel smoothing needs at least 4x4 sub-cells"));
        }
    }
    if spec.dimensionality != 2 && spec.dimensionality != 3 {
        return Err(invalid("dimensionality must be 2 or 3"));
    }
    if spec.dimensionality == 2 && spec.shape[2] != 1 {
        return Err(invalid("2D grids must have nz = 1"));
    }
    if spec.is_empty() {
        return Err(invalid("empty grid"));
    }
    let [nx, ny, nz] = spec.shape;
    let h = spec.cell_size();
    let eps_slab = lattice.slab_permittivity();
    let eps_bg = lattice.background_permittivity();

    // holes touching each x-column of cells, in input order
    let mut per_column: Vec<Vec<usize>> = vec![Vec::new(); nx];
    for (idx, hole) in holes.iter().enumerate() {
        let lo = ((hole.x - hole.radius) / h + nx as f64 * 0.5).floor().max(0.0) as usize;
        let hi = ((hole.x + hole.radius) / h + nx as f64 * 0.5).ceil();
        if hi < 0.0 {
            continue;
        }
        for column in per_column.iter_mut().take((hi as usize).min(nx)).skip(lo) {
            column.push(idx);
        }
    }

    let mut hole_frac = vec![0.0f64; nx * ny];
    hole_frac.par_chunks_mut(ny).enumerate().for_each(|(i, column)| {
        let x = spec.center(0, i);
        for &idx in &per_column[i] {
            let hole = &holes[idx];
            let lo = ((hole.y - hole.radius) / h + ny as f64 * 0.5).floor().max(0.0) as usize;
            let hi = (((hole.y + hole.radius) / h + ny as f64 * 0.5).ceil().max(0.0) as usize).min(ny);
            for (j, cell) in column.iter_mut().enumerate().take(hi).skip(lo) {
                let y = spec.center(1, j);
                let f = match smoothing {
                    Smoothing::Off => {
                        let (dx, dy) = (x - hole.x, y - hole.y);
                        if dx * dx + dy * dy < hole.radius * hole.radius {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Smoothing::Subpixel(n) => hole_fraction(hole, x, y, h, n),
                };
                *cell = (*cell + f).min(1.0);
            }
        }
    });

    let mut permittivity = vec![0.0; spec.len()];
    if spec.dimensionality == 2 {
        for (p, f) in permittivity.iter_mut().zip(&hole_frac) {
            *p = f * eps_bg + (1.0 - f) * eps_slab;
        }
    } else {
        let t = lattice.slab_thickness_ratio;
        let zfrac: Vec<f64> = (0..nz)
            .map(|k| {
                let zc = spec.center(2, k);
                match smoothing {
                    Smoothing::Off => {
                        if zc.abs() <= 0.5 * t {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Smoothing::Subpixel(_) => slab_fraction(zc - 0.5 * h, zc + 0.5 * h, t),
                }
            })
            .collect();
        for (cell, f) in hole_frac.iter().enumerate() {
            for (k, zf) in zfrac.iter().enumerate() {
                let material = zf * (1.0 - f);
                permittivity[cell * nz + k] = material * eps_slab + (1.0 - material) * eps_bg;
            }
        }
    }
    Ok(DielectricGrid { spec: *spec, permittivity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{enumerate_holes, presets};

    fn lattice() -> LatticeSpec {
        LatticeSpec::normalized(2.6, 0.6, 0.29)
    }

    #[test]
    fn halfplane_limits() {
        assert_eq!(halfplane_fraction(-1.0, 0.6, 0.8), 0.0);
        assert_eq!(halfplane_fraction(1.0, 0.6, 0.8), 1.0);
        assert!((halfplane_fraction(0.0, 0.6, 0.8) - 0.5).abs() < 1e-15);
        assert!((halfplane_fraction(0.25, 1.0, 0.0) - 0.75).abs() < 1e-15);
        // symmetric in the sign of the normal components
        assert_eq!(halfplane_fraction(0.1, -0.6, 0.8), halfplane_fraction(0.1, 0.6, -0.8));
    }

    #[test]
    fn no_holes_is_uniform() {
        let g = rasterize(&lattice(), &[], &GridSpec::new_2d(16, 32, 17), Smoothing::default()).unwrap();
        assert!(g.permittivity.iter().all(|&e| e == 2.6 * 2.6));
    }

    #[test]
    fn rejects_low_resolution() {
        assert!(rasterize(&lattice(), &[], &GridSpec::new_2d(4, 8, 8), Smoothing::Off).is_err());
        assert!(rasterize(&lattice(), &[], &GridSpec::new_2d(8, 8, 8), Smoothing::Subpixel(2)).is_err());
    }

    #[test]
    fn values_stay_in_range() {
        let (lat, d) = presets::l3_sr3();
        let holes = enumerate_holes(&lat, &d).unwrap();
        let spec = GridSpec::enclosing_2d(&holes, 8, 0.5);
        let g = rasterize(&lat, &holes, &spec, Smoothing::default()).unwrap();
        assert!(g.permittivity.iter().all(|&e| (1.0..=2.6 * 2.6).contains(&e)));
        assert!(g.permittivity.contains(&1.0));
    }

    #[test]
    fn enclosing_grid_parity() {
        let (lat, d) = presets::l3_sr3();
        let holes = enumerate_holes(&lat, &d).unwrap();
        let spec = GridSpec::enclosing_2d(&holes, 16, 1.0);
        assert_eq!(spec.shape[0] % 2, 0);
        assert_eq!(spec.shape[1] % 2, 1);
        let e = spec.extent();
        assert!(e[0] >= 2.0 * (10.0 + 0.2553 + 1.0) - 1e-9);
    }

    #[test]
    fn slab_in_3d() {
        let lat = LatticeSpec::normalized(2.6, 0.6, 0.29);
        let spec = GridSpec::new_3d(10, 10, 10, 20);
        let g = rasterize(&lat, &[], &spec, Smoothing::default()).unwrap();
        // slab spans 6 of the 20 z cells
        let column: Vec<f64> = (0..20).map(|k| g.get(5, 5, k)).collect();
        let filled: f64 = column.iter().map(|e| (e - 1.0) / (6.76 - 1.0)).sum();
        assert!((filled - 6.0).abs() < 1e-12);
        assert_eq!(g.mirror_residual_x(), 0.0);
    }
}
