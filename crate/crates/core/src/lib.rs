//! Design and analysis of two-dimensional photonic crystal slab cavities.
//!
//! The crate covers the full loop for Lx line-defect cavities in a
//! triangular air-hole lattice:
//!
//! - [`geometry`]: hole layouts for Lx and edge-tuned L3 cavities, rasterized
//!   permittivity grids, and the slab effective index used for 2D reduction.
//! - [`fdtd`]: a Yee-grid time-domain solver (2D TE and 3D) with CPML
//!   absorbing layers, soft dipole sources and field/energy monitors.
//! - [`modal`]: harmonic inversion of ring-down signals, energy ring-down Q,
//!   and mode volumes.
//! - [`bands`]: plane-wave expansion TE bands and band-gap search.
//! - [`cqed`]: Purcell factor, indistinguishability, beta factor and the
//!   strong-coupling threshold for color-center emitters.
//! - [`spectra`]: Fano-lineshape fitting of resonant-scattering spectra.
//! - [`optimize`]: bounded Nelder-Mead over edge-hole design vectors.
//! - [`pipeline`]: geometry to FDTD to resonance/mode-volume reports, and sweeps.
//!
//! Internally lengths are in units of the lattice constant `a` and `c = 1`,
//! so frequencies come out in `a / lambda`.
//!
//! A narrative guide with runnable snippets lives in the `book/` directory.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the bad range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bands;
pub mod config;
pub mod cqed;
pub mod error;
pub mod fdtd;
pub mod geometry;
pub mod gridio;
pub mod modal;
pub mod optimize;
pub mod pipeline;
pub mod roots;
pub mod spectra;

pub use error::{Error, ErrorClass, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub mod geometry {}
    #[doc = include_str!("../../../book/src/fdtd.md")]
    pub mod fdtd {}
    #[doc = include_str!("../../../book/src/modal.md")]
    pub mod modal {}
    #[doc = include_str!("../../../book/src/bands.md")]
    pub mod bands {}
    #[doc = include_str!("../../../book/src/cqed.md")]
    pub mod cqed {}
    #[doc = include_str!("../../../book/src/fano.md")]
    pub mod fano {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    pub mod optimization {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
