use rayon::prelude::*;

use super::layout::{edge_permittivity, energy_with, flat, Component, Region, YeeFields};
use super::pml::AxisPml;
use super::Kernel;
use crate::geometry::DielectricGrid;

/// Rows per rayon task; any value gives identical results.
const ROWS_PER_TASK: usize = 16;

/// 2D TE (Ex, Ey, Hz) leapfrog with CPML slabs.
pub(crate) struct Te2d {
    nx: usize,
    ny: usize,
    f: YeeFields,
    /// `dt / (eps h)` per E node.
    cex: Vec<f64>,
    cey: Vec<f64>,
    eps: [Vec<f64>; 3],
    /// `dt / h` (mu = 1).
    ch: f64,
    dt: f64,
    px: AxisPml,
    py: AxisPml,
    psi_hzx: Vec<f64>,
    psi_hzy: Vec<f64>,
    psi_exy: Vec<f64>,
    psi_eyx: Vec<f64>,
    interior: Region,
    dv: f64,
}

impl Te2d {
    pub fn new(grid: &DielectricGrid, dt: f64, px: AxisPml, py: AxisPml) -> Self {
        let [nx, ny, _] = grid.shape();
        let h = grid.cell_size();
        let eps_ex = edge_permittivity(grid, Component::Ex);
        let eps_ey = edge_permittivity(grid, Component::Ey);
        let cex = eps_ex.iter().map(|e| dt / (e * h)).collect();
        let cey = eps_ey.iter().map(|e| dt / (e * h)).collect();
        let interior = Region {
            lo: [px.interior.0, py.interior.0, 0],
            hi: [px.interior.1, py.interior.1, 1],
        };
        Te2d {
            nx,
            ny,
            f: YeeFields::zeros(grid.shape(), 2),
            cex,
            cey,
            eps: [eps_ex, eps_ey, Vec::new()],
            ch: dt / h,
            dt,
            psi_hzx: vec![0.0; nx * ny],
            psi_hzy: vec![0.0; nx * ny],
            psi_exy: vec![0.0; nx * (ny + 1)],
            psi_eyx: vec![0.0; (nx + 1) * ny],
            px,
            py,
            interior,
            dv: h * h,
        }
    }
}

impl Kernel for Te2d {
    fn fields(&self) -> &YeeFields {
        &self.f
    }

    fn step_h(&mut self, keep_previous: bool) {
        let (nx, ny, ch) = (self.nx, self.ny, self.ch);
        if keep_previous {
            self.f.h_previous = Some(self.f.h.clone());
        } else {
            self.f.h_previous = None;
        }
        let YeeFields { e, h, .. } = &mut self.f;
        let (ex, ey) = (&e[0], &e[1]);
        let hz = &mut h[2];
        hz.par_chunks_mut(ny).with_min_len(ROWS_PER_TASK).enumerate().for_each(|(i, row)| {
            let ey0 = &ey[i * ny..(i + 1) * ny];
            let ey1 = &ey[(i + 1) * ny..(i + 2) * ny];
            let exr = &ex[i * (ny + 1)..(i + 1) * (ny + 1)];
            for j in 0..ny {
                row[j] -= ch * ((ey1[j] - ey0[j]) - (exr[j + 1] - exr[j]));
            }
        });
        for range in &self.px.slabs_c {
            for i in range.clone() {
                let (b, c) = (self.px.b_c[i], self.px.c_c[i]);
                for j in 0..ny {
                    let n = i * ny + j;
                    let d = ey[(i + 1) * ny + j] - ey[i * ny + j];
                    let p = &mut self.psi_hzx[n];
                    *p = b * *p + c * d;
                    hz[n] -= ch * *p;
                }
            }
        }
        if !self.py.slabs_c.is_empty() {
            for i in 0..nx {
                for range in &self.py.slabs_c {
                    for j in range.clone() {
                        let n = i * ny + j;
                        let m = i * (ny + 1) + j;
                        let d = ex[m + 1] - ex[m];
                        let p = &mut self.psi_hzy[n];
                        *p = self.py.b_c[j] * *p + self.py.c_c[j] * d;
                        hz[n] += ch * *p;
                    }
                }
            }
        }
    }

    fn step_e(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        let YeeFields { e, h, .. } = &mut self.f;
        let hz = &h[2];
        let [ex, ey, _] = e;
        let cex = &self.cex;
        let cey = &self.cey;
        ex.par_chunks_mut(ny + 1)
            .with_min_len(ROWS_PER_TASK)
            .enumerate()
            .for_each(|(i, row)| {
                let hr = &hz[i * ny..(i + 1) * ny];
                let cr = &cex[i * (ny + 1)..(i + 1) * (ny + 1)];
                for j in 1..ny {
                    row[j] += cr[j] * (hr[j] - hr[j - 1]);
                }
            });
        ey.par_chunks_mut(ny).with_min_len(ROWS_PER_TASK).enumerate().for_each(|(i, row)| {
            if i == 0 || i == nx {
                return;
            }
            let h0 = &hz[(i - 1) * ny..i * ny];
            let h1 = &hz[i * ny..(i + 1) * ny];
            let cr = &cey[i * ny..(i + 1) * ny];
            for j in 0..ny {
                row[j] -= cr[j] * (h1[j] - h0[j]);
            }
        });
        if !self.py.slabs_e.is_empty() {
            for i in 0..nx {
                for range in &self.py.slabs_e {
                    for j in range.clone() {
                        let m = i * (ny + 1) + j;
                        let d = hz[i * ny + j] - hz[i * ny + j - 1];
                        let p = &mut self.psi_exy[m];
                        *p = self.py.b_e[j] * *p + self.py.c_e[j] * d;
                        ex[m] += cex[m] * *p;
                    }
                }
            }
        }
        for range in &self.px.slabs_e {
            for i in range.clone() {
                let (b, c) = (self.px.b_e[i], self.px.c_e[i]);
                for j in 0..ny {
                    let m = i * ny + j;
                    let d = hz[i * ny + j] - hz[(i - 1) * ny + j];
                    let p = &mut self.psi_eyx[m];
                    *p = b * *p + c * d;
                    ey[m] -= cey[m] * *p;
                }
            }
        }
    }

    fn inject(&mut self, c: Component, node: [usize; 3], current: f64) {
        let shape = self.f.shape_of(c);
        let n = flat(shape, node[0], node[1], node[2]);
        let eps = self.eps[c.axis()][n];
        self.f.component_mut(c)[n] += self.dt / eps * current;
    }

    fn energy(&self) -> f64 {
        energy_with(&self.f, &self.eps, &self.interior, self.dv)
    }
}
