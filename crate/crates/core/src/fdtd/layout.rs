use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::DielectricGrid;

/// A Cartesian field component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    Ex,
    Ey,
    Ez,
    Hx,
    Hy,
    Hz,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Ex,
        Component::Ey,
        Component::Ez,
        Component::Hx,
        Component::Hy,
        Component::Hz,
    ];

    pub fn axis(self) -> usize {
        match self {
            Component::Ex | Component::Hx => 0,
            Component::Ey | Component::Hy => 1,
            Component::Ez | Component::Hz => 2,
        }
    }

    pub fn is_electric(self) -> bool {
        matches!(self, Component::Ex | Component::Ey | Component::Ez)
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Ex => "Ex",
            Component::Ey => "Ey",
            Component::Ez => "Ez",
            Component::Hx => "Hx",
            Component::Hy => "Hy",
            Component::Hz => "Hz",
        }
    }

    /// Components evolved by the solver of the given dimensionality (2D is TE).
    pub fn evolved(dimensionality: usize) -> &'static [Component] {
        if dimensionality == 2 {
            &[Component::Ex, Component::Ey, Component::Hz]
        } else {
            &Component::ALL
        }
    }

    /// True when the component sits half a cell off the cell edges along `axis`.
    pub(crate) fn is_half(self, axis: usize) -> bool {
        if self.is_electric() {
            axis == self.axis()
        } else {
            axis != self.axis()
        }
    }

    /// Node-array shape on a grid of `cells`. The z axis collapses to one node in 2D.
    pub fn node_shape(self, cells: [usize; 3], dimensionality: usize) -> [usize; 3] {
        let mut s = [0; 3];
        for d in 0..3 {
            s[d] = if dimensionality == 2 && d == 2 {
                1
            } else if self.is_half(d) {
                cells[d]
            } else {
                cells[d] + 1
            };
        }
        s
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown field component {s:?}")))
    }
}

/// Half-open box of cell indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Region {
    pub fn whole(cells: [usize; 3]) -> Self {
        Region { lo: [0; 3], hi: cells }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn within(&self, cells: [usize; 3]) -> bool {
        (0..3).all(|d| self.lo[d] < self.hi[d] && self.hi[d] <= cells[d])
    }

    /// Node index range of `component` covering this region (edges inclusive).
    fn node_range(&self, component: Component, dimensionality: usize, d: usize) -> (usize, usize) {
        if dimensionality == 2 && d == 2 {
            (0, 1)
        } else if component.is_half(d) {
            (self.lo[d], self.hi[d])
        } else {
            (self.lo[d], self.hi[d] + 1)
        }
    }
}

#[inline]
pub(crate) fn flat(shape: [usize; 3], i: usize, j: usize, k: usize) -> usize {
    (i * shape[1] + j) * shape[2] + k
}

/// All field arrays of a Yee grid.
///
/// Layout (cell `(i, j, k)` spans `[i, i+1] x [j, j+1] x [k, k+1]`):
/// `Ex (i+1/2, j, k)`, `Ey (i, j+1/2, k)`, `Ez (i, j, k+1/2)`,
/// `Hx (i, j+1/2, k+1/2)`, `Hy (i+1/2, j, k+1/2)`, `Hz (i+1/2, j+1/2, k)`.
/// Components not evolved in 2D TE are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct YeeFields {
    pub cells: [usize; 3],
    pub dimensionality: usize,
    /// Indexed by [`Component::axis`].
    pub e: [Vec<f64>; 3],
    pub h: [Vec<f64>; 3],
    /// H half a step earlier, for the staggered energy product.
    pub h_previous: Option<[Vec<f64>; 3]>,
}

impl YeeFields {
    pub fn zeros(cells: [usize; 3], dimensionality: usize) -> Self {
        let alloc = |c: Component| {
            if Component::evolved(dimensionality).contains(&c) {
                vec![0.0; c.node_shape(cells, dimensionality).iter().product()]
            } else {
                Vec::new()
            }
        };
        YeeFields {
            cells,
            dimensionality,
            e: [alloc(Component::Ex), alloc(Component::Ey), alloc(Component::Ez)],
            h: [alloc(Component::Hx), alloc(Component::Hy), alloc(Component::Hz)],
            h_previous: None,
        }
    }

    pub fn shape_of(&self, c: Component) -> [usize; 3] {
        c.node_shape(self.cells, self.dimensionality)
    }

    pub fn component(&self, c: Component) -> &[f64] {
        if c.is_electric() {
            &self.e[c.axis()]
        } else {
            &self.h[c.axis()]
        }
    }

    pub fn component_mut(&mut self, c: Component) -> &mut [f64] {
        if c.is_electric() {
            &mut self.e[c.axis()]
        } else {
            &mut self.h[c.axis()]
        }
    }

    pub fn is_evolved(&self, c: Component) -> bool {
        !self.component(c).is_empty()
    }

    pub fn node_in_bounds(&self, c: Component, node: [usize; 3]) -> bool {
        let s = self.shape_of(c);
        self.is_evolved(c) && (0..3).all(|d| node[d] < s[d])
    }

    pub fn get(&self, c: Component, node: [usize; 3]) -> f64 {
        self.component(c)[flat(self.shape_of(c), node[0], node[1], node[2])]
    }

    pub fn max_abs(&self) -> f64 {
        // NaN propagates so the instability check sees it
        self.e.iter().chain(self.h.iter()).flat_map(|v| v.iter()).fold(0.0f64, |m, &v| {
            if v.is_nan() || m.is_nan() {
                f64::NAN
            } else {
                m.max(v.abs())
            }
        })
    }

    /// Component averaged onto the cell centers of `region`, row-major.
    pub fn collocated(&self, c: Component, region: &Region) -> Vec<f64> {
        let data = self.component(c);
        let shape = self.shape_of(c);
        let rs = region.shape();
        let offsets: Vec<[usize; 3]> = {
            let spread = |d: usize| -> &'static [usize] {
                if (self.dimensionality == 2 && d == 2) || c.is_half(d) {
                    &[0]
                } else {
                    &[0, 1]
                }
            };
            let mut v = Vec::new();
            for &a in spread(0) {
                for &b in spread(1) {
                    for &cz in spread(2) {
                        v.push([a, b, cz]);
                    }
                }
            }
            v
        };
        let weight = 1.0 / offsets.len() as f64;
        let mut out = Vec::with_capacity(region.len());
        for i in 0..rs[0] {
            for j in 0..rs[1] {
                for k in 0..rs[2] {
                    let base = [
                        region.lo[0] + i,
                        region.lo[1] + j,
                        if self.dimensionality == 2 { 0 } else { region.lo[2] + k },
                    ];
                    let sum: f64 = offsets
                        .iter()
                        .map(|o| data[flat(shape, base[0] + o[0], base[1] + o[1], base[2] + o[2])])
                        .sum();
                    out.push(sum * weight);
                }
            }
        }
        out
    }
}

/// Relative permittivity at every node of electric component `c`: the
/// arithmetic mean of the cells sharing that edge.
pub(crate) fn edge_permittivity(grid: &DielectricGrid, c: Component) -> Vec<f64> {
    let cells = grid.shape();
    let dim = grid.dimensionality();
    let shape = c.node_shape(cells, dim);
    let mut out = Vec::with_capacity(shape.iter().product());
    let neighbours = |d: usize, n: usize| -> (usize, usize) {
        if (dim == 2 && d == 2) || c.is_half(d) {
            (n, n)
        } else {
            (n.saturating_sub(1), n.min(cells[d] - 1))
        }
    };
    for i in 0..shape[0] {
        let (i0, i1) = neighbours(0, i);
        for j in 0..shape[1] {
            let (j0, j1) = neighbours(1, j);
            for k in 0..shape[2] {
                let (k0, k1) = neighbours(2, k);
                let mut sum = 0.0;
                let mut count = 0.0;
                for a in [i0, i1] {
                    for b in [j0, j1] {
                        for z in [k0, k1] {
                            sum += grid.get(a, b, z);
                            count += 1.0;
                        }
                    }
                }
                out.push(sum / count);
            }
        }
    }
    out
}

/// Electromagnetic energy on the non-PML `interior` with node permittivities `eps_e`.
pub(crate) fn energy_with(fields: &YeeFields, eps_e: &[Vec<f64>; 3], interior: &Region, dv: f64) -> f64 {
    let dim = fields.dimensionality;
    let sum_over = |c: Component, f: &dyn Fn(usize) -> f64| -> f64 {
        let shape = fields.shape_of(c);
        let r: Vec<(usize, usize)> = (0..3).map(|d| interior.node_range(c, dim, d)).collect();
        // per-row partial sums keep the total independent of any parallel chunking
        (r[0].0..r[0].1)
            .map(|i| {
                let mut row = 0.0;
                for j in r[1].0..r[1].1 {
                    for k in r[2].0..r[2].1 {
                        row += f(flat(shape, i, j, k));
                    }
                }
                row
            })
            .sum()
    };
    let mut total = 0.0;
    for &c in Component::evolved(dim) {
        let a = c.axis();
        if c.is_electric() {
            let v = &fields.e[a];
            let eps = &eps_e[a];
            total += sum_over(c, &|n| eps[n] * v[n] * v[n]);
        } else {
            let v = &fields.h[a];
            match &fields.h_previous {
                Some(prev) => {
                    let p = &prev[a];
                    total += sum_over(c, &|n| p[n] * v[n]);
                }
                None => total += sum_over(c, &|n| v[n] * v[n]),
            }
        }
    }
    0.5 * total * dv
}

/// Total electromagnetic energy `1/2 sum (eps |E|^2 + mu0 |H|^2) dV` over
/// `interior` (pass the non-PML region).
///
/// With `fields.h_previous` set, the magnetic term is the staggered product
/// `H^(n-1/2) . H^(n+1/2)`, which the lossless Yee update conserves exactly.
pub fn total_em_energy(fields: &YeeFields, grid: &DielectricGrid, interior: &Region) -> f64 {
    let eps = [Component::Ex, Component::Ey, Component::Ez].map(|c| {
        if fields.is_evolved(c) {
            edge_permittivity(grid, c)
        } else {
            Vec::new()
        }
    });
    energy_with(fields, &eps, interior, grid.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;

    #[test]
    fn te_shapes() {
        let cells = [4, 5, 1];
        assert_eq!(Component::Ex.node_shape(cells, 2), [4, 6, 1]);
        assert_eq!(Component::Ey.node_shape(cells, 2), [5, 5, 1]);
        assert_eq!(Component::Hz.node_shape(cells, 2), [4, 5, 1]);
        assert_eq!(Component::Hx.node_shape([4, 5, 6], 3), [5, 5, 6]);
        assert_eq!(Component::Ez.node_shape([4, 5, 6], 3), [5, 6, 6]);
    }

    #[test]
    fn zero_fields_zero_energy() {
        let grid = DielectricGrid::uniform(GridSpec::new_2d(10, 6, 5), 4.0);
        let f = YeeFields::zeros(grid.shape(), 2);
        assert_eq!(total_em_energy(&f, &grid, &Region::whole(grid.shape())), 0.0);
    }

    #[test]
    fn single_vacuum_node_energy() {
        let grid = DielectricGrid::uniform(GridSpec::new_2d(10, 6, 5), 1.0);
        let mut f = YeeFields::zeros(grid.shape(), 2);
        let n = flat(f.shape_of(Component::Ey), 3, 2, 0);
        f.e[1][n] = 1.0;
        let u = total_em_energy(&f, &grid, &Region::whole(grid.shape()));
        assert!((u - 0.5 * grid.cell_volume()).abs() < 1e-18);
    }

    #[test]
    fn edge_permittivity_averages() {
        let mut grid = DielectricGrid::uniform(GridSpec::new_2d(10, 2, 1), 1.0);
        grid.permittivity[1] = 3.0;
        // Ey nodes along x: wall, shared edge, wall
        assert_eq!(edge_permittivity(&grid, Component::Ey), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn collocation_averages_staggered_nodes() {
        let mut f = YeeFields::zeros([2, 1, 1], 2);
        f.e[1].copy_from_slice(&[1.0, 3.0, 5.0]);
        assert_eq!(f.collocated(Component::Ey, &Region::whole([2, 1, 1])), vec![2.0, 4.0]);
    }

    #[test]
    fn component_parsing() {
        assert_eq!("ey".parse::<Component>().unwrap(), Component::Ey);
        assert!("Ew".parse::<Component>().is_err());
    }
}
