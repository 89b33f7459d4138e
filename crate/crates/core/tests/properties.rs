use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use phc_core::cqed::{
    beta_factor, indistinguishability, purcell, rates_from_purcell, strong_coupling_margin, strong_coupling_threshold_q, CavityFigures,
    EmitterDatabase,
};
use phc_core::geometry::{DielectricGrid, GridSpec};
use phc_core::modal::{harmonic_inversion_complex, mode_volume};
use phc_core::optimize::{maximize, Bounds, NelderMeadOptions};
use phc_core::spectra::{fit_fano, parse_spectrum, FanoParams, Spectrum};

fn cavity(q: f64, v: f64, xi: f64) -> CavityFigures {
    CavityFigures {
        q,
        v_normalized: v,
        resonance_wavelength: 1100e-9,
        dipole_overlap_xi: xi,
    }
}

proptest! {
    #[test]
    fn purcell_is_linear_in_q_and_xi_and_inverse_in_v(
        q in 10.0f64..1e6, v in 0.05f64..20.0, xi in 0.0f64..=1.0, c in 0.1f64..10.0,
    ) {
        let base = purcell(&cavity(q, v, xi));
        prop_assert!(base >= 0.0);
        prop_assert!((purcell(&cavity(c * q, v, xi)) - c * base).abs() <= 1e-12 * c * base.max(1.0));
        prop_assert!((purcell(&cavity(q, c * v, xi)) - base / c).abs() <= 1e-12 * base.max(1.0));
        prop_assert!(purcell(&cavity(q, v, xi)) <= purcell(&cavity(q, v, 1.0)));
    }

    #[test]
    fn indistinguishability_and_beta_bounded_and_monotone(
        fp in 0.0f64..1e5, dfp in 0.0f64..1e3, dephasing in 0.0f64..1e10, gamma_0 in 1e5f64..1e9, dw in 0.01f64..=1.0,
    ) {
        let i1 = indistinguishability(fp, dephasing, gamma_0).unwrap();
        let i2 = indistinguishability(fp + dfp, dephasing, gamma_0).unwrap();
        prop_assert!((0.0..=1.0).contains(&i1));
        prop_assert!(i2 >= i1);
        let (b1, b2) = (beta_factor(fp, dw), beta_factor(fp + dfp, dw));
        prop_assert!((0.0..1.0).contains(&b1));
        prop_assert!(b2 >= b1);
    }

    #[test]
    fn rate_budget_agrees_with_closed_forms(
        fp in 0.0f64..1e5, dephasing in 0.0f64..1e10, gamma_0 in 1e5f64..1e9, dw in 0.01f64..=1.0,
    ) {
        let rates = rates_from_purcell(fp, gamma_0);
        let closed = indistinguishability(fp, dephasing, gamma_0).unwrap();
        prop_assert!((rates.indistinguishability(dephasing) - closed).abs() <= 1e-12);
        prop_assert!((rates.beta(dw) - beta_factor(fp, dw)).abs() <= 1e-12);
    }

    #[test]
    fn threshold_separates_weak_from_strong(v in 0.1f64..10.0, f in 0.2f64..0.95) {
        let e = EmitterDatabase::builtin().get("divacancy-3c").unwrap().clone();
        let q = strong_coupling_threshold_q(v, &e).unwrap();
        prop_assert!(strong_coupling_margin(q * f, v, &e) < 0.0);
        prop_assert!(strong_coupling_margin(q / f, v, &e) > 0.0);
    }

    #[test]
    fn mode_volume_invariant_under_field_and_permittivity_scale(
        field in proptest::collection::vec(0.0f64..1.0, 48), eps in proptest::collection::vec(1.0f64..12.0, 48),
        c in 1e-3f64..1e3, n in 1.0f64..4.0,
    ) {
        prop_assume!(field.iter().any(|v| *v > 0.0));
        let mut grid = DielectricGrid::uniform(GridSpec::new_2d(10, 8, 6), 1.0);
        grid.permittivity = eps.clone();
        let base = mode_volume(&field, &grid, 2.0, Some(n)).unwrap();
        let scaled: Vec<f64> = field.iter().map(|v| v * c).collect();
        let by_field = mode_volume(&scaled, &grid, 2.0, Some(n)).unwrap();
        let mut eps_grid = grid.clone();
        eps_grid.permittivity.iter_mut().for_each(|e| *e *= c);
        let by_eps = mode_volume(&field, &eps_grid, 2.0, Some(n)).unwrap();
        for other in [&by_field, &by_eps] {
            prop_assert!((other.volume_physical - base.volume_physical).abs() <= 1e-12 * base.volume_physical);
        }
        // at most the whole domain, at least one cell
        prop_assert!(base.volume_physical <= 0.48 + 1e-12 && base.volume_physical >= 0.01 - 1e-15);
        let doubled = mode_volume(&field, &grid, 2.0, Some(2.0 * n)).unwrap();
        prop_assert!((doubled.volume_normalized - 4.0 * base.volume_normalized).abs() <= 1e-12 * doubled.volume_normalized);
    }

    #[test]
    fn optimizer_stays_inside_bounds(
        center in proptest::collection::vec(-2.0f64..2.0, 3), lo in -1.0f64..0.0, width in 0.1f64..2.0,
    ) {
        let bounds = Bounds::new(vec![lo; 3], vec![lo + width; 3]).unwrap();
        let options = NelderMeadOptions { budget: 60, ..NelderMeadOptions::default() };
        let f = |x: &[f64]| Ok(-x.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
        let start = vec![lo + width / 2.0; 3];
        let r = maximize(f, &start, &bounds, &options, None).unwrap();
        prop_assert!(r.evaluations <= 60);
        prop_assert!(r.trace.iter().all(|e| bounds.contains(&e.x)));
        prop_assert!(bounds.contains(&r.best_x));
        prop_assert!(r.best_value >= r.initial_value);
    }
}

fn fano_reference(q: f64) -> FanoParams {
    FanoParams {
        lambda_0: 1100.0,
        gamma: 1100.0 / 7134.0,
        q,
        amplitude: 1.0,
        offset: 0.1,
    }
}

fn wavelengths() -> Vec<f64> {
    (0..300).map(|i| 1099.2 + 1.6 * i as f64 / 299.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inversion_ignores_scale_and_phase(magnitude in -3.0f64..3.0, phase in -PI..PI) {
        let dt = 0.7;
        let base: Vec<Complex64> = (0..1024)
            .map(|k| {
                let t = k as f64 * dt;
                let m = |f: f64, q: f64, a: f64| a * (-PI * f / q * t).exp() * (2.0 * PI * f * t).cos();
                Complex64::new(m(0.21, 800.0, 1.0) + m(0.33, 3000.0, 0.2), 0.0)
            })
            .collect();
        let c = Complex64::from_polar(10f64.powf(magnitude), phase);
        let scaled: Vec<Complex64> = base.iter().map(|v| v * c).collect();
        let a = harmonic_inversion_complex(&base, dt, (0.1, 0.7), 2).unwrap();
        let b = harmonic_inversion_complex(&scaled, dt, (0.1, 0.7), 2).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (p, r) in a.iter().zip(&b) {
            prop_assert!((p.frequency - r.frequency).abs() <= 1e-10 * p.frequency);
            prop_assert!((p.q - r.q).abs() <= 1e-8 * p.q);
            prop_assert!((p.amplitude * c - r.amplitude).norm() <= 1e-8 * r.amplitude.norm());
        }
    }

    #[test]
    fn fano_fit_follows_affine_intensity_maps(q in 0.3f64..4.0, a in 0.1f64..50.0, b in 0.0f64..5.0) {
        let s = fano_reference(q).synthesize(&wavelengths()).unwrap();
        let mapped = Spectrum::new(
            s.wavelength_nm.clone(),
            s.intensity.iter().map(|y| a * y + b).collect(),
            None,
        )
        .unwrap();
        let (p, r) = (fit_fano(&s, None).unwrap(), fit_fano(&mapped, None).unwrap());
        prop_assert!((p.lambda_0 - r.lambda_0).abs() <= 1e-9 * p.lambda_0);
        prop_assert!((p.fwhm - r.fwhm).abs() <= 1e-7 * p.fwhm);
        prop_assert!((p.q_fano - r.q_fano).abs() <= 1e-6 * p.q_fano.abs().max(1.0));
        prop_assert!((a * p.amplitude - r.amplitude).abs() <= 1e-6 * r.amplitude);
        prop_assert!((a * p.offset + b - r.offset).abs() <= 1e-6 * r.offset.abs().max(a));
    }

    #[test]
    fn fano_fit_ignores_row_order(q in -3.0f64..3.0) {
        let s = fano_reference(q).synthesize(&wavelengths()).unwrap();
        let rows: Vec<String> = s
            .wavelength_nm
            .iter()
            .zip(&s.intensity)
            .map(|(l, y)| format!("{l:.17e},{y:.17e}"))
            .collect();
        let forward = format!("wavelength_nm,intensity\n{}\n", rows.join("\n"));
        let backward = format!(
            "wavelength_nm,intensity\n{}\n",
            rows.iter().rev().cloned().collect::<Vec<_>>().join("\n")
        );
        let f = fit_fano(&parse_spectrum(forward.as_bytes()).unwrap(), None).unwrap();
        let r = fit_fano(&parse_spectrum(backward.as_bytes()).unwrap(), None).unwrap();
        prop_assert_eq!(f, r);
    }
}
