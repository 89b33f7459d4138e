use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::roots::brent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Polarization {
    /// Electric field in the slab plane.
    TE,
    TM,
}

/// Transverse parameters of the fundamental even mode of a symmetric slab.
///
/// With `u = kappa d / 2` and `w = gamma d / 2`, the guidance condition is
/// `u tan u = rho w` where `rho = 1` for TE and `(n_core / n_clad)^2` for TM,
/// and `u^2 + w^2 = V^2`.
#[derive(Debug, Clone, Copy)]
struct SlabProblem {
    v: f64,
    rho: f64,
}

impl SlabProblem {
    fn new(n_core: f64, n_clad: f64, thickness: f64, wavelength: f64, polarization: Polarization) -> Self {
        let k0 = 2.0 * std::f64::consts::PI / wavelength;
        let v = 0.5 * k0 * thickness * (n_core * n_core - n_clad * n_clad).sqrt();
        let rho = match polarization {
            Polarization::TE => 1.0,
            Polarization::TM => (n_core / n_clad).powi(2),
        };
        SlabProblem { v, rho }
    }

    fn residual(&self, u: f64) -> f64 {
        u * u.tan() - self.rho * (self.v * self.v - u * u).max(0.0).sqrt()
    }
}

/// Residual of the symmetric-slab guidance condition at a candidate effective index.
///
/// Written as `cos(u) * (u tan u - rho w)` so it stays finite; zero at a guided mode.
pub fn slab_dispersion_residual(n_eff: f64, n_core: f64, n_clad: f64, thickness: f64, wavelength: f64, polarization: Polarization) -> f64 {
    let k0 = 2.0 * std::f64::consts::PI / wavelength;
    let u = 0.5 * k0 * thickness * (n_core * n_core - n_eff * n_eff).max(0.0).sqrt();
    let w = 0.5 * k0 * thickness * (n_eff * n_eff - n_clad * n_clad).max(0.0).sqrt();
    let rho = SlabProblem::new(n_core, n_clad, thickness, wavelength, polarization).rho;
    u * u.sin() - rho * w * u.cos()
}

/// Effective index of the fundamental guided mode of a symmetric slab.
///
/// `thickness` and `wavelength` share any length unit.
pub fn slab_effective_index(n_core: f64, n_clad: f64, thickness: f64, wavelength: f64, polarization: Polarization) -> Result<f64> {
    if !(n_core > n_clad && n_clad > 0.0) {
        return Err(invalid("slab effective index needs n_core > n_clad > 0"));
    }
    if !(thickness > 0.0 && wavelength > 0.0) {
        return Err(invalid("thickness and wavelength must be positive"));
    }
    let p = SlabProblem::new(n_core, n_clad, thickness, wavelength, polarization);
    let hi = p.v.min(std::f64::consts::FRAC_PI_2 * (1.0 - 1e-15));
    if !(hi > 0.0) {
        return Err(Error::NoGuidedMode("normalized frequency is zero".into()));
    }
    // the even fundamental mode of a symmetric slab has no cutoff; keep the
    // guard so a failed bracket surfaces as a missing mode
    let u = brent(|u| p.residual(u), 0.0, hi, 1e-15).map_err(|e| Error::NoGuidedMode(e.to_string()))?;
    let k0 = 2.0 * std::f64::consts::PI / wavelength;
    let kappa = 2.0 * u / thickness;
    let n_eff = (n_core * n_core - (kappa / k0).powi(2)).sqrt();
    if !(n_eff > n_clad && n_eff < n_core) {
        // only reachable through rounding at extreme thickness ratios
        return Ok(n_eff.clamp(n_clad, n_core));
    }
    Ok(n_eff)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thick_slab_limit() {
        let n = slab_effective_index(2.6, 1.0, 1e4, 1.0, Polarization::TE).unwrap();
        assert!((n - 2.6).abs() < 1e-3);
    }

    #[test]
    fn thin_slab_limit() {
        let n = slab_effective_index(2.6, 1.0, 1e-4, 1.0, Polarization::TE).unwrap();
        assert!((n - 1.0).abs() < 1e-3);
    }

    #[test]
    fn tm_below_te() {
        let te = slab_effective_index(2.6, 1.0, 240.0, 1100.0, Polarization::TE).unwrap();
        let tm = slab_effective_index(2.6, 1.0, 240.0, 1100.0, Polarization::TM).unwrap();
        assert!(tm < te && tm > 1.0);
    }

    #[test]
    fn residual_vanishes_at_solution() {
        for pol in [Polarization::TE, Polarization::TM] {
            for (d, lam) in [(240.0, 1100.0), (100.0, 1550.0), (500.0, 700.0)] {
                let n = slab_effective_index(2.6, 1.0, d, lam, pol).unwrap();
                assert!(slab_dispersion_residual(n, 2.6, 1.0, d, lam, pol).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_inverted_indices() {
        assert!(slab_effective_index(1.0, 2.6, 1.0, 1.0, Polarization::TE).is_err());
        assert!(slab_effective_index(2.6, 1.0, 0.0, 1.0, Polarization::TE).is_err());
    }
}
