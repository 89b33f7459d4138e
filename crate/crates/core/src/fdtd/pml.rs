use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Graded CPML absorber parameters (kappa = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PmlSpec {
    pub layers: usize,
    pub polynomial_order: u32,
    /// Normal-incidence round-trip reflection of the continuous profile.
    pub target_reflection: f64,
    /// Complex-frequency shift at the inner PML edge, tapering linearly to 0.
    pub alpha_max: f64,
}

impl Default for PmlSpec {
    fn default() -> Self {
        PmlSpec {
            layers: 12,
            polynomial_order: 3,
            target_reflection: 1e-6,
            alpha_max: 0.0,
        }
    }
}

impl PmlSpec {
    pub fn with_layers(layers: usize) -> Self {
        PmlSpec { layers, ..Self::default() }
    }

    /// `sigma_max = -(m + 1) ln R / (2 L)` in units of `c / a`.
    pub fn sigma_max(&self, cell: f64) -> f64 {
        let thickness = self.layers as f64 * cell;
        -(self.polynomial_order as f64 + 1.0) * self.target_reflection.ln() / (2.0 * thickness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Pml,
    Pec,
}

/// Recursive-convolution coefficients along one axis.
///
/// `*_c` live at cell centers (`n` entries), `*_e` at cell edges (`n + 1`).
/// A psi accumulator is advanced as `psi = b psi + c (difference)` and only
/// inside `slabs_*`; elsewhere `b = 1, c = 0`.
#[derive(Debug, Clone)]
pub(crate) struct AxisPml {
    pub b_c: Vec<f64>,
    pub c_c: Vec<f64>,
    pub b_e: Vec<f64>,
    pub c_e: Vec<f64>,
    pub slabs_c: Vec<Range<usize>>,
    pub slabs_e: Vec<Range<usize>>,
    /// First and one-past-last non-PML cell.
    pub interior: (usize, usize),
}

impl AxisPml {
    pub fn new(n: usize, cell: f64, dt: f64, spec: &PmlSpec, faces: [Boundary; 2]) -> Self {
        let layers = spec.layers;
        let low = if faces[0] == Boundary::Pml { layers } else { 0 };
        let high = if faces[1] == Boundary::Pml { layers } else { 0 };
        let mut p = AxisPml {
            b_c: vec![1.0; n],
            c_c: vec![0.0; n],
            b_e: vec![1.0; n + 1],
            c_e: vec![0.0; n + 1],
            slabs_c: Vec::new(),
            slabs_e: Vec::new(),
            interior: (low, n - high),
        };
        if layers == 0 || (low == 0 && high == 0) {
            return p;
        }
        let thickness = layers as f64 * cell;
        let sigma_max = spec.sigma_max(cell);
        let m = spec.polynomial_order as i32;
        let coeff = |depth: f64| -> (f64, f64) {
            let x = depth / thickness;
            let sigma = sigma_max * x.powi(m);
            let alpha = spec.alpha_max * (1.0 - x);
            let b = (-(sigma + alpha) * dt).exp();
            let c = if sigma > 0.0 { sigma / (sigma + alpha) * (b - 1.0) } else { 0.0 };
            (b, c)
        };
        if low > 0 {
            for i in 0..low {
                (p.b_c[i], p.c_c[i]) = coeff((low as f64 - i as f64 - 0.5) * cell);
            }
            for i in 1..low {
                (p.b_e[i], p.c_e[i]) = coeff((low - i) as f64 * cell);
            }
            p.slabs_c.push(0..low);
            p.slabs_e.push(1..low);
        }
        if high > 0 {
            let start = n - high;
            for i in start..n {
                (p.b_c[i], p.c_c[i]) = coeff((i as f64 + 0.5 - start as f64) * cell);
            }
            for i in start + 1..n {
                (p.b_e[i], p.c_e[i]) = coeff((i - start) as f64 * cell);
            }
            p.slabs_c.push(start..n);
            p.slabs_e.push(start + 1..n);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_grows_into_layer() {
        let spec = PmlSpec::with_layers(8);
        let p = AxisPml::new(40, 0.05, 0.025, &spec, [Boundary::Pml, Boundary::Pml]);
        assert_eq!(p.interior, (8, 32));
        // decay factor shrinks toward the outer walls, symmetric on both faces
        for i in 1..8 {
            assert!(p.b_c[i - 1] < p.b_c[i]);
            assert!((p.b_c[i] - p.b_c[39 - i]).abs() < 1e-15);
            assert!((p.b_e[i] - p.b_e[40 - i]).abs() < 1e-15);
        }
        assert_eq!(p.b_c[20], 1.0);
        assert_eq!(p.c_e[8], 0.0);
    }

    #[test]
    fn pec_faces_have_no_slabs() {
        let p = AxisPml::new(10, 0.1, 0.05, &PmlSpec::default(), [Boundary::Pec, Boundary::Pec]);
        assert!(p.slabs_c.is_empty() && p.slabs_e.is_empty());
        assert_eq!(p.interior, (0, 10));
    }
}
