//! Triangular-lattice cavity layouts, rasterization and the slab effective index.

mod lattice;
mod raster;
mod slab;

pub use lattice::{enumerate_holes, presets, CavityDesign, Hole, HoleModification, LatticeSpec, ROW_SPACING};
pub use raster::{rasterize, DielectricGrid, GridSpec, Smoothing, MIN_RESOLUTION};
pub use slab::{slab_dispersion_residual, slab_effective_index, Polarization};
