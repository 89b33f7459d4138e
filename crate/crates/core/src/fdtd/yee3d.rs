use std::ops::Range;

use rayon::prelude::*;

use super::layout::{edge_permittivity, energy_with, flat, Component, Region, YeeFields};
use super::pml::AxisPml;
use super::Kernel;
use crate::geometry::DielectricGrid;

const E: [Component; 3] = [Component::Ex, Component::Ey, Component::Ez];
const H: [Component; 3] = [Component::Hx, Component::Hy, Component::Hz];

fn strides(s: [usize; 3]) -> [usize; 3] {
    [s[1] * s[2], s[2], 1]
}

/// Full 3D Yee leapfrog with CPML slabs on every PML face.
///
/// For component `a` the curl partners are `b = a+1`, `c = a+2` (cyclic):
/// `dE_a/dt = (d_b H_c - d_c H_b) / eps`, `dH_a/dt = -(d_b E_c - d_c E_b)`.
pub(crate) struct Yee3d {
    cells: [usize; 3],
    f: YeeFields,
    ce: [Vec<f64>; 3],
    eps: [Vec<f64>; 3],
    ch: f64,
    dt: f64,
    pml: [AxisPml; 3],
    /// `[component][slot]`, slot 0 for the derivative along `b`, 1 along `c`.
    psi_e: [[Vec<f64>; 2]; 3],
    psi_h: [[Vec<f64>; 2]; 3],
    interior: Region,
    dv: f64,
}

impl Yee3d {
    pub fn new(grid: &DielectricGrid, dt: f64, pml: [AxisPml; 3]) -> Self {
        let cells = grid.shape();
        let h = grid.cell_size();
        let eps = E.map(|c| edge_permittivity(grid, c));
        let ce = [0, 1, 2].map(|a| eps[a].iter().map(|e| dt / (e * h)).collect());
        let f = YeeFields::zeros(cells, 3);
        let psi = |arrays: &[Vec<f64>; 3]| [0, 1, 2].map(|a| [vec![0.0; arrays[a].len()], vec![0.0; arrays[a].len()]]);
        let interior = Region {
            lo: [pml[0].interior.0, pml[1].interior.0, pml[2].interior.0],
            hi: [pml[0].interior.1, pml[1].interior.1, pml[2].interior.1],
        };
        Yee3d {
            cells,
            psi_e: psi(&f.e),
            psi_h: psi(&f.h),
            f,
            ce,
            eps,
            ch: dt / h,
            dt,
            pml,
            interior,
            dv: h * h * h,
        }
    }

    /// Node range of `E_a` that the update touches (PEC walls excluded).
    fn e_range(&self, a: usize) -> [Range<usize>; 3] {
        [0, 1, 2].map(|d| if d == a { 0..self.cells[d] } else { 1..self.cells[d] })
    }

    fn update_e(&mut self, a: usize) {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        let se = strides(E[a].node_shape(self.cells, 3));
        let sc = strides(H[c].node_shape(self.cells, 3));
        let sb = strides(H[b].node_shape(self.cells, 3));
        let r = self.e_range(a);
        let YeeFields { e, h, .. } = &mut self.f;
        let (hc, hb) = (&h[c], &h[b]);
        let ce = &self.ce[a];
        e[a].par_chunks_mut(se[0]).enumerate().for_each(|(i, plane)| {
            if !r[0].contains(&i) {
                return;
            }
            for j in r[1].clone() {
                for k in r[2].clone() {
                    let t = j * se[1] + k;
                    let ic = i * sc[0] + j * sc[1] + k;
                    let ib = i * sb[0] + j * sb[1] + k;
                    let curl = (hc[ic] - hc[ic - sc[b]]) - (hb[ib] - hb[ib - sb[c]]);
                    plane[t] += ce[i * se[0] + t] * curl;
                }
            }
        });
        for slot in 0..2 {
            let d = (a + 1 + slot) % 3;
            let (src, sign) = if slot == 0 { (c, 1.0) } else { (b, -1.0) };
            let ss = strides(H[src].node_shape(self.cells, 3));
            for slab in &self.pml[d].slabs_e {
                let mut rr = r.clone();
                rr[d] = slab.start.max(r[d].start)..slab.end.min(r[d].end);
                let (bv, cv) = (&self.pml[d].b_e, &self.pml[d].c_e);
                let psi = &mut self.psi_e[a][slot];
                let src_field = &h[src];
                let target = &mut e[a];
                for i in rr[0].clone() {
                    for j in rr[1].clone() {
                        for k in rr[2].clone() {
                            let idx = [i, j, k];
                            let t = i * se[0] + j * se[1] + k;
                            let s = i * ss[0] + j * ss[1] + k;
                            let diff = src_field[s] - src_field[s - ss[d]];
                            psi[t] = bv[idx[d]] * psi[t] + cv[idx[d]] * diff;
                            target[t] += sign * ce[t] * psi[t];
                        }
                    }
                }
            }
        }
    }

    fn update_h(&mut self, a: usize) {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        let shape = H[a].node_shape(self.cells, 3);
        let sh = strides(shape);
        let sc = strides(E[c].node_shape(self.cells, 3));
        let sb = strides(E[b].node_shape(self.cells, 3));
        let ch = self.ch;
        let YeeFields { e, h, .. } = &mut self.f;
        let (ec, eb) = (&e[c], &e[b]);
        h[a].par_chunks_mut(sh[0]).enumerate().for_each(|(i, plane)| {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    let t = j * sh[1] + k;
                    let ic = i * sc[0] + j * sc[1] + k;
                    let ib = i * sb[0] + j * sb[1] + k;
                    let curl = (ec[ic + sc[b]] - ec[ic]) - (eb[ib + sb[c]] - eb[ib]);
                    plane[t] -= ch * curl;
                }
            }
        });
        for slot in 0..2 {
            let d = (a + 1 + slot) % 3;
            let (src, sign) = if slot == 0 { (c, -1.0) } else { (b, 1.0) };
            let ss = strides(E[src].node_shape(self.cells, 3));
            for slab in &self.pml[d].slabs_c {
                let mut rr = [0..shape[0], 0..shape[1], 0..shape[2]];
                rr[d] = slab.clone();
                let (bv, cv) = (&self.pml[d].b_c, &self.pml[d].c_c);
                let psi = &mut self.psi_h[a][slot];
                let src_field = &e[src];
                let target = &mut h[a];
                for i in rr[0].clone() {
                    for j in rr[1].clone() {
                        for k in rr[2].clone() {
                            let idx = [i, j, k];
                            let t = i * sh[0] + j * sh[1] + k;
                            let s = i * ss[0] + j * ss[1] + k;
                            let diff = src_field[s + ss[d]] - src_field[s];
                            psi[t] = bv[idx[d]] * psi[t] + cv[idx[d]] * diff;
                            target[t] += sign * ch * psi[t];
                        }
                    }
                }
            }
        }
    }
}

impl Kernel for Yee3d {
    fn fields(&self) -> &YeeFields {
        &self.f
    }

    fn step_h(&mut self, keep_previous: bool) {
        self.f.h_previous = if keep_previous { Some(self.f.h.clone()) } else { None };
        for a in 0..3 {
            self.update_h(a);
        }
    }

    fn step_e(&mut self) {
        for a in 0..3 {
            self.update_e(a);
        }
    }

    fn inject(&mut self, c: Component, node: [usize; 3], current: f64) {
        let n = flat(self.f.shape_of(c), node[0], node[1], node[2]);
        let eps = self.eps[c.axis()][n];
        self.f.component_mut(c)[n] += self.dt / eps * current;
    }

    fn energy(&self) -> f64 {
        energy_with(&self.f, &self.eps, &self.interior, self.dv)
    }
}
