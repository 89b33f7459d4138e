//! Cavity-QED figures of merit for a color center in a cavity.
//!
//! Rate conventions:
//!
//! - `gamma_0` in the indistinguishability and rate-budget formulas is the
//!   natural ZPL linewidth `1 / (2 pi tau)` in linear Hz, and the dephasing
//!   rate `gamma_tot` is in the same unit.
//! - The strong-coupling relation uses angular quantities: the cavity
//!   linewidth `kappa = omega / Q` and the population decay rate `1 / tau`.
//!   The coupling follows from the weak-coupling identity
//!   `F_P = 4 g^2 / (kappa gamma_pop)`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::roots::brent;
use crate::SPEED_OF_LIGHT;

/// Prefactor `3 / (4 pi^2)` of the Purcell formula.
pub const PURCELL_PREFACTOR: f64 = 3.0 / (4.0 * PI * PI);

/// Optical emitter parameters. SI units throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct EmitterSpec {
    pub name: String,
    /// meters
    pub zpl_wavelength: f64,
    /// seconds
    pub lifetime_tau: f64,
    pub debye_waller: f64,
    /// Hz (linear)
    pub dephasing_gamma_tot: f64,
    pub host_index_n: f64,
}

impl EmitterSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("emitter {}: {what} must be positive", self.name)))
            }
        };
        positive(self.zpl_wavelength, "zpl_wavelength")?;
        positive(self.lifetime_tau, "lifetime")?;
        positive(self.host_index_n, "host index")?;
        if !(self.debye_waller > 0.0 && self.debye_waller <= 1.0) {
            return Err(invalid(format!("emitter {}: Debye-Waller factor must be in (0, 1]", self.name)));
        }
        if !(self.dephasing_gamma_tot >= 0.0) {
            return Err(invalid(format!("emitter {}: dephasing must be non-negative", self.name)));
        }
        Ok(())
    }

    /// Natural ZPL linewidth `1 / (2 pi tau)`, Hz.
    pub fn natural_linewidth(&self) -> f64 {
        1.0 / (2.0 * PI * self.lifetime_tau)
    }

    /// Population decay rate `1 / tau`, s^-1.
    pub fn population_decay_rate(&self) -> f64 {
        1.0 / self.lifetime_tau
    }

    /// Angular frequency of the ZPL, rad/s.
    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / self.zpl_wavelength
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct EmitterRecord {
    name: String,
    zpl_wavelength_nm: f64,
    lifetime_ns: f64,
    debye_waller: f64,
    dephasing_hz: f64,
    host_index: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct EmitterFile {
    #[serde(default)]
    emitter: Vec<EmitterRecord>,
}

impl From<EmitterRecord> for EmitterSpec {
    fn from(r: EmitterRecord) -> Self {
        EmitterSpec {
            name: r.name,
            zpl_wavelength: r.zpl_wavelength_nm * 1e-9,
            lifetime_tau: r.lifetime_ns * 1e-9,
            debye_waller: r.debye_waller,
            dephasing_gamma_tot: r.dephasing_hz,
            host_index_n: r.host_index,
        }
    }
}

/// A set of named emitters loaded from a TOML `[[emitter]]` table.
#[derive(Debug, Clone, Default)]
pub struct EmitterDatabase {
    pub emitters: Vec<EmitterSpec>,
}

const BUILTIN_EMITTERS: &str = include_str!("../data/emitters.toml");

impl EmitterDatabase {
    /// The shipped database (3C and 4H divacancies).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_EMITTERS).expect("bundled emitter database is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: EmitterFile = toml::from_str(text).map_err(|e| invalid(format!("emitter database: {e}")))?;
        let emitters: Vec<EmitterSpec> = file.emitter.into_iter().map(EmitterSpec::from).collect();
        for e in &emitters {
            e.validate()?;
        }
        Ok(EmitterDatabase { emitters })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Option<&EmitterSpec> {
        self.emitters.iter().find(|e| e.name.eq_ignore_ascii_case(name))
    }
}

/// Cavity-side inputs of the Purcell formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityFigures {
    pub q: f64,
    /// Mode volume in units of `(lambda / n)^3`.
    pub v_normalized: f64,
    /// meters
    pub resonance_wavelength: f64,
    pub dipole_overlap_xi: f64,
}

impl CavityFigures {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.v_normalized > 0.0) {
            return Err(invalid("Q and V must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dipole_overlap_xi) {
            return Err(invalid("dipole overlap must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Cavity linewidth in wavelength, `lambda / Q`.
    pub fn linewidth_wavelength(&self) -> f64 {
        self.resonance_wavelength / self.q
    }
}

/// Purcell factor `F_P = 3/(4 pi^2) (Q / V) xi` with `V` in `(lambda/n)^3`.
pub fn purcell(cavity: &CavityFigures) -> f64 {
    PURCELL_PREFACTOR * cavity.q / cavity.v_normalized * cavity.dipole_overlap_xi
}

/// Indistinguishability `(F_P + 1) / (F_P + 1 + 2 gamma_tot / gamma_0)`.
pub fn indistinguishability(purcell_factor: f64, gamma_tot: f64, gamma_0: f64) -> Result<f64> {
    if !(gamma_0 > 0.0) {
        return Err(invalid("gamma_0 must be positive"));
    }
    if purcell_factor < 0.0 || gamma_tot < 0.0 {
        return Err(invalid("Purcell factor and dephasing must be non-negative"));
    }
    let bright = purcell_factor + 1.0;
    Ok(bright / (bright + 2.0 * gamma_tot / gamma_0))
}

/// Fraction of emission into the cavity mode, `F_P / (F_P + 1/DW)`.
pub fn beta_factor(purcell_factor: f64, debye_waller: f64) -> f64 {
    purcell_factor / (purcell_factor + 1.0 / debye_waller)
}

/// Emission rates of an emitter in a cavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBudget {
    pub gamma_0: f64,
    pub gamma_cav: f64,
    pub gamma_off: f64,
}

impl RateBudget {
    pub fn gamma_tot(&self) -> f64 {
        self.gamma_cav + self.gamma_off
    }

    /// `Gamma_tot / (Gamma_tot + 2 gamma_tot)` from the raw rates.
    pub fn indistinguishability(&self, dephasing: f64) -> f64 {
        let total = self.gamma_tot();
        total / (total + 2.0 * dephasing)
    }

    /// `DW Gamma_cav / (DW Gamma_cav + Gamma_off)` from the raw rates.
    pub fn beta(&self, debye_waller: f64) -> f64 {
        let cav = debye_waller * self.gamma_cav;
        cav / (cav + self.gamma_off)
    }
}

/// Rates with the cavity channel at `F_P gamma_0` and the rest at `gamma_0`.
pub fn rates_from_purcell(purcell_factor: f64, gamma_0: f64) -> RateBudget {
    RateBudget {
        gamma_0,
        gamma_cav: purcell_factor * gamma_0,
        gamma_off: gamma_0,
    }
}

/// Cavity energy decay rate `kappa = omega / Q`, rad/s.
pub fn cavity_kappa(q: f64, wavelength: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / wavelength / q
}

/// Emitter-cavity coupling `g = sqrt(F_P gamma_pop kappa) / 2`, rad/s.
pub fn coupling_g(purcell_factor: f64, emitter: &EmitterSpec, q: f64, wavelength: f64) -> f64 {
    let kappa = cavity_kappa(q, wavelength);
    (purcell_factor * emitter.population_decay_rate() * kappa).sqrt() * 0.5
}

/// Strong-coupling margin `g - |kappa - gamma_pop| / 4` at a given Q (positive = strong).
pub fn strong_coupling_margin(q: f64, v_normalized: f64, emitter: &EmitterSpec) -> f64 {
    let lambda = emitter.zpl_wavelength;
    let fp = purcell(&CavityFigures {
        q,
        v_normalized,
        resonance_wavelength: lambda,
        dipole_overlap_xi: 1.0,
    });
    let g = coupling_g(fp, emitter, q, lambda);
    g - (cavity_kappa(q, lambda) - emitter.population_decay_rate()).abs() / 4.0
}

/// Lowest Q at which `g = |kappa - gamma_pop| / 4` (with `xi = 1`).
///
/// Solved by bracketed root finding on the full expression. Returns
/// `f64::INFINITY` when the emitter does not decay (threshold unreachable).
pub fn strong_coupling_threshold_q(v_normalized: f64, emitter: &EmitterSpec) -> Result<f64> {
    if !(v_normalized > 0.0) {
        return Err(invalid("mode volume must be positive"));
    }
    let gamma = emitter.population_decay_rate();
    if gamma == 0.0 {
        return Ok(f64::INFINITY);
    }
    let omega = emitter.angular_frequency();
    // at kappa = gamma the margin is g > 0; Q -> 0 makes it negative
    let q_hi = omega / gamma;
    let mut q_lo = q_hi;
    while strong_coupling_margin(q_lo, v_normalized, emitter) >= 0.0 {
        q_lo *= 1e-3;
        if q_lo < 1e-300 {
            return Err(Error::NoBracket("strong-coupling margin never turns negative".into()));
        }
    }
    brent(|q| strong_coupling_margin(q, v_normalized, emitter), q_lo, q_hi, 1e-14)
}

/// Threshold in the `kappa >> gamma` limit: `Q*^2 = omega V pi^2 tau / 3`.
pub fn strong_coupling_threshold_q_closed_form(v_normalized: f64, emitter: &EmitterSpec) -> f64 {
    let omega = emitter.angular_frequency();
    (omega * v_normalized / (4.0 * emitter.population_decay_rate() * PURCELL_PREFACTOR)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdModel {
    /// Root of the full `g = |kappa - gamma| / 4` condition.
    Full,
    /// Closed form with `kappa >> gamma`.
    KappaDominated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPoint {
    pub v_normalized: f64,
    pub q_threshold: f64,
}

/// Strong-coupling threshold over a range of mode volumes.
pub fn threshold_curve(v_range: &[f64], emitter: &EmitterSpec, model: ThresholdModel) -> Result<Vec<ThresholdPoint>> {
    if v_range.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("mode volumes must be strictly increasing"));
    }
    v_range
        .iter()
        .map(|&v| {
            let q = match model {
                ThresholdModel::Full => strong_coupling_threshold_q(v, emitter)?,
                ThresholdModel::KappaDominated => {
                    if !(v > 0.0) {
                        return Err(invalid("mode volume must be positive"));
                    }
                    strong_coupling_threshold_q_closed_form(v, emitter)
                }
            };
            Ok(ThresholdPoint {
                v_normalized: v,
                q_threshold: q,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingRegime {
    Weak,
    /// Within `ONSET_BAND` of the threshold.
    Onset,
    Strong,
}

/// Relative distance from `Q*` reported as the onset of strong coupling.
pub const ONSET_BAND: f64 = 0.1;

/// Everything the cQED report prints for one cavity/emitter pair.
#[derive(Debug, Clone, Serialize)]
pub struct EmitterReport {
    pub emitter: String,
    pub q: f64,
    pub v_normalized: f64,
    pub wavelength_nm: f64,
    pub xi: f64,
    pub linewidth_nm: f64,
    pub purcell: f64,
    pub indistinguishability: f64,
    pub beta: f64,
    pub g_rad_per_s: f64,
    pub kappa_rad_per_s: f64,
    pub gamma0_hz: f64,
    pub threshold_q: f64,
    pub purcell_at_threshold: f64,
    pub indistinguishability_at_threshold: f64,
    pub beta_at_threshold: f64,
    pub regime: CouplingRegime,
}

pub fn emitter_report(q: f64, v_normalized: f64, xi: f64, emitter: &EmitterSpec) -> Result<EmitterReport> {
    emitter.validate()?;
    let lambda = emitter.zpl_wavelength;
    let cavity = CavityFigures {
        q,
        v_normalized,
        resonance_wavelength: lambda,
        dipole_overlap_xi: xi,
    };
    cavity.validate()?;
    let fp = purcell(&cavity);
    let gamma0 = emitter.natural_linewidth();
    let threshold_q = strong_coupling_threshold_q(v_normalized, emitter)?;
    let fp_star = purcell(&CavityFigures {
        q: threshold_q,
        dipole_overlap_xi: 1.0,
        ..cavity
    });
    let ratio = q / threshold_q;
    let regime = if (ratio - 1.0).abs() <= ONSET_BAND {
        CouplingRegime::Onset
    } else if ratio > 1.0 {
        CouplingRegime::Strong
    } else {
        CouplingRegime::Weak
    };
    Ok(EmitterReport {
        emitter: emitter.name.clone(),
        q,
        v_normalized,
        wavelength_nm: lambda * 1e9,
        xi,
        linewidth_nm: cavity.linewidth_wavelength() * 1e9,
        purcell: fp,
        indistinguishability: indistinguishability(fp, emitter.dephasing_gamma_tot, gamma0)?,
        beta: beta_factor(fp, emitter.debye_waller),
        g_rad_per_s: coupling_g(fp, emitter, q, lambda),
        kappa_rad_per_s: cavity_kappa(q, lambda),
        gamma0_hz: gamma0,
        threshold_q,
        purcell_at_threshold: fp_star,
        indistinguishability_at_threshold: indistinguishability(fp_star, emitter.dephasing_gamma_tot, gamma0)?,
        beta_at_threshold: beta_factor(fp_star, emitter.debye_waller),
        regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn divacancy() -> EmitterSpec {
        EmitterDatabase::builtin().get("divacancy-3c").unwrap().clone()
    }

    fn fig(q: f64, v: f64, xi: f64) -> CavityFigures {
        CavityFigures {
            q,
            v_normalized: v,
            resonance_wavelength: 1100e-9,
            dipole_overlap_xi: xi,
        }
    }

    #[test]
    fn purcell_zero_overlap() {
        assert_eq!(purcell(&fig(7134.0, 1.22, 0.0)), 0.0);
    }

    #[test]
    fn purcell_high_q_design() {
        let fp = purcell(&fig(610_000.0, 1.22, 1.0));
        // 0.0759909 * 500000
        assert!((fp - 37_995.4).abs() < 1.0, "{fp}");
    }

    #[test]
    fn no_dephasing_is_perfect() {
        assert_eq!(indistinguishability(443.0, 0.0, 8.4e6).unwrap(), 1.0);
    }

    #[test]
    fn zero_gamma0_rejected() {
        assert!(indistinguishability(443.0, 1e9, 0.0).is_err());
    }

    #[test]
    fn beta_limits() {
        assert_eq!(beta_factor(0.0, 0.07), 0.0);
        assert!(beta_factor(1e12, 0.07) > 0.999_999);
    }

    #[test]
    fn rates_with_no_purcell() {
        let r = rates_from_purcell(0.0, 5.0);
        assert_eq!(r.gamma_cav, 0.0);
        assert_eq!(r.gamma_tot(), 5.0);
    }

    #[test]
    fn zero_purcell_zero_coupling() {
        assert_eq!(coupling_g(0.0, &divacancy(), 7134.0, 1100e-9), 0.0);
    }

    #[test]
    fn threshold_closure() {
        let e = divacancy();
        let q = strong_coupling_threshold_q(1.22, &e).unwrap();
        let fp = purcell(&fig(q, 1.22, 1.0));
        let g = coupling_g(fp, &e, q, e.zpl_wavelength);
        let edge = (cavity_kappa(q, e.zpl_wavelength) - e.population_decay_rate()).abs() / 4.0;
        assert!((g - edge).abs() / edge < 1e-9);
        // kappa >> gamma: g is within gamma/kappa of kappa/4
        let kappa = cavity_kappa(q, e.zpl_wavelength);
        assert!((g - kappa / 4.0).abs() / (kappa / 4.0) < 1e-3);
    }

    #[test]
    fn threshold_matches_direct_solution() {
        // g does not depend on Q, so the root is kappa = gamma + 4 g
        let e = divacancy();
        let omega = e.angular_frequency();
        let g = 0.5 * (PURCELL_PREFACTOR / 1.22 * omega * e.population_decay_rate()).sqrt();
        let direct = omega / (e.population_decay_rate() + 4.0 * g);
        let q = strong_coupling_threshold_q(1.22, &e).unwrap();
        assert!((q - direct).abs() / direct < 1e-12);
    }

    #[test]
    fn nondecaying_emitter_never_strong() {
        let mut e = divacancy();
        e.lifetime_tau = f64::INFINITY;
        assert_eq!(strong_coupling_threshold_q(1.22, &e).unwrap(), f64::INFINITY);
    }

    #[test]
    fn curve_single_point_equals_scalar() {
        let e = divacancy();
        let c = threshold_curve(&[1.22], &e, ThresholdModel::Full).unwrap();
        assert_eq!(c[0].q_threshold, strong_coupling_threshold_q(1.22, &e).unwrap());
        assert!(threshold_curve(&[1.0, 0.5], &e, ThresholdModel::Full).is_err());
    }

    #[test]
    fn closed_form_scales_as_sqrt_v() {
        let e = divacancy();
        let c = threshold_curve(&[0.5, 1.0, 2.0], &e, ThresholdModel::KappaDominated).unwrap();
        for w in c.windows(2) {
            assert!((w[1].q_threshold / w[0].q_threshold - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn regime_flags() {
        let e = divacancy();
        assert_eq!(emitter_report(7134.0, 1.22, 1.0, &e).unwrap().regime, CouplingRegime::Weak);
        assert_eq!(emitter_report(11_000.0, 1.22, 1.0, &e).unwrap().regime, CouplingRegime::Onset);
        assert_eq!(emitter_report(50_000.0, 1.22, 1.0, &e).unwrap().regime, CouplingRegime::Strong);
    }

    #[test]
    fn database_parsing() {
        let db = EmitterDatabase::builtin();
        assert_eq!(db.emitters.len(), 2);
        assert!(db.get("DIVACANCY-4H").is_some());
        let bad = "[[emitter]]\nname='x'\nzpl_wavelength_nm=1\nlifetime_ns=1\ndebye_waller=2\ndephasing_hz=1\nhost_index=2";
        assert!(EmitterDatabase::parse(bad).is_err());
    }
}
