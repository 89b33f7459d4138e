use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Row spacing of the triangular lattice in units of `a`.
pub const ROW_SPACING: f64 = 0.866_025_403_784_438_6; // sqrt(3)/2

fn default_background() -> f64 {
    1.0
}

/// Triangular air-hole lattice in a dielectric slab.
///
/// All ratios are relative to the lattice constant `a`. `lattice_constant_a`
/// is in meters, or `1.0` when working in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub lattice_constant_a: f64,
    pub slab_index_n: f64,
    pub slab_thickness_ratio: f64,
    pub hole_radius_ratio: f64,
    #[serde(default = "default_background")]
    pub background_index: f64,
}

impl LatticeSpec {
    pub fn normalized(slab_index_n: f64, slab_thickness_ratio: f64, hole_radius_ratio: f64) -> Self {
        LatticeSpec {
            lattice_constant_a: 1.0,
            slab_index_n,
            slab_thickness_ratio,
            hole_radius_ratio,
            background_index: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lattice_constant_a > 0.0 && self.lattice_constant_a.is_finite()) {
            return Err(invalid("lattice_constant_a must be positive"));
        }
        if !(self.hole_radius_ratio > 0.0 && self.hole_radius_ratio < 0.5) {
            return Err(invalid(format!(
                "hole_radius_ratio {} outside (0, 0.5): holes would overlap",
                self.hole_radius_ratio
            )));
        }
        if !(self.background_index >= 1.0) {
            return Err(invalid("background_index must be >= 1"));
        }
        if !(self.slab_index_n > self.background_index) {
            return Err(invalid("slab_index_n must exceed background_index"));
        }
        if !(self.slab_thickness_ratio > 0.0) {
            return Err(invalid("slab_thickness_ratio must be positive"));
        }
        Ok(())
    }

    /// Same lattice with a different slab index (used for the 2D effective-index reduction).
    pub fn with_slab_index(mut self, n: f64) -> Self {
        self.slab_index_n = n;
        self
    }

    pub fn slab_permittivity(&self) -> f64 {
        self.slab_index_n * self.slab_index_n
    }

    pub fn background_permittivity(&self) -> f64 {
        self.background_index * self.background_index
    }
}

/// Shift/shrink applied to the k-th hole from each end of the defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleModification {
    /// 1 = the hole terminating the defect row.
    pub index_from_cavity_edge: usize,
    /// Outward shift along x, in units of `a`.
    pub axial_shift_ratio: f64,
    /// New radius is `r - dr`, in units of `a`.
    pub radius_reduction_ratio: f64,
}

impl HoleModification {
    pub fn new(index_from_cavity_edge: usize, axial_shift_ratio: f64, radius_reduction_ratio: f64) -> Self {
        HoleModification {
            index_from_cavity_edge,
            axial_shift_ratio,
            radius_reduction_ratio,
        }
    }
}

fn default_extent() -> (usize, usize) {
    (20, 13)
}

/// An Lx line-defect cavity with optional mirror-symmetric edge-hole tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityDesign {
    pub defect_length_x: usize,
    #[serde(default)]
    pub modifications: Vec<HoleModification>,
    /// Lattice periods along x and number of hole rows along y.
    #[serde(default = "default_extent")]
    pub crystal_extent: (usize, usize),
}

impl CavityDesign {
    /// Unmodified Lx cavity with the default 20 x 13 crystal.
    pub fn lx(defect_length_x: usize) -> Self {
        CavityDesign {
            defect_length_x,
            modifications: Vec::new(),
            crystal_extent: default_extent(),
        }
    }

    pub fn with_modifications(mut self, modifications: Vec<HoleModification>) -> Self {
        self.modifications = modifications;
        self
    }

    pub fn with_extent(mut self, periods_x: usize, rows_y: usize) -> Self {
        self.crystal_extent = (periods_x, rows_y);
        self
    }

    /// Offset of the defect-row lattice sites: 0 for odd defects, 1/2 for even ones.
    fn row_offset(&self, row: i64) -> f64 {
        let parity = (row + self.defect_length_x as i64 % 2 + 1).rem_euclid(2);
        parity as f64 * 0.5
    }

    /// |x| of the k-th hole (1-based) counted outward from a cavity end, before shifting.
    pub fn edge_hole_position(&self, k: usize) -> f64 {
        // Even defects have sites at half-integers; both cases land on lattice sites.
        (self.defect_length_x + 2 * k - 1) as f64 * 0.5
    }

    pub fn validate(&self, lattice: &LatticeSpec) -> Result<()> {
        lattice.validate()?;
        if self.defect_length_x == 0 {
            return Err(invalid("defect_length_x must be >= 1"));
        }
        let (px, ry) = self.crystal_extent;
        if ry == 0 || ry % 2 == 0 {
            return Err(invalid(format!(
                "crystal_extent rows ({ry}) must be odd so the defect row is centered"
            )));
        }
        if (px as f64) * 0.5 < self.edge_hole_position(1) {
            return Err(invalid(format!(
                "crystal_extent periods ({px}) too small for an L{} defect",
                self.defect_length_x
            )));
        }
        let mut seen = Vec::new();
        for m in &self.modifications {
            let k = m.index_from_cavity_edge;
            if k == 0 {
                return Err(invalid("index_from_cavity_edge must be >= 1"));
            }
            if seen.contains(&k) {
                return Err(invalid(format!("duplicate modification for hole {k}")));
            }
            seen.push(k);
            if self.edge_hole_position(k) > px as f64 * 0.5 + 1e-9 {
                return Err(invalid(format!(
                    "modification index {k} exceeds the holes available in a {px}-period row"
                )));
            }
            let radius = lattice.hole_radius_ratio - m.radius_reduction_ratio;
            if !(radius > 0.0) {
                return Err(invalid(format!("modification {k} gives non-positive radius {radius}")));
            }
            if !m.axial_shift_ratio.is_finite() {
                return Err(invalid(format!("modification {k} has a non-finite shift")));
            }
        }
        Ok(())
    }
}

/// A circular hole, center and radius in units of `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Lists every hole of the cavity, in row-major order (rows bottom to top, x ascending).
///
/// Rows sit at `y = j * sqrt(3)/2`; the defect row `j = 0` loses its
/// `defect_length_x` central holes and the modified holes move outward.
pub fn enumerate_holes(lattice: &LatticeSpec, design: &CavityDesign) -> Result<Vec<Hole>> {
    design.validate(lattice)?;
    let (px, ry) = design.crystal_extent;
    let half_x = px as f64 * 0.5 + 1e-9;
    let half_rows = (ry / 2) as i64;
    let r = lattice.hole_radius_ratio;
    let omit = design.defect_length_x as f64 * 0.5;

    let mut holes = Vec::new();
    for j in -half_rows..=half_rows {
        let s = design.row_offset(j);
        let y = j as f64 * ROW_SPACING;
        let i_max = (half_x - s).floor() as i64;
        let i_min = -((half_x + s).floor() as i64);
        for i in i_min..=i_max {
            let x = i as f64 + s;
            if x.abs() > half_x {
                continue;
            }
            if j == 0 {
                if x.abs() < omit {
                    continue;
                }
                let modification = design
                    .modifications
                    .iter()
                    .find(|m| (design.edge_hole_position(m.index_from_cavity_edge) - x.abs()).abs() < 1e-9);
                if let Some(m) = modification {
                    let shifted = design.edge_hole_position(m.index_from_cavity_edge) + m.axial_shift_ratio;
                    holes.push(Hole {
                        x: shifted.copysign(x),
                        y,
                        radius: r - m.radius_reduction_ratio,
                    });
                    continue;
                }
            }
            holes.push(Hole { x, y, radius: r });
        }
    }
    Ok(holes)
}

/// Named designs from the optimized-L3 family, with their lattices.
pub mod presets {
    use super::*;

    pub const SLAB_INDEX: f64 = 2.6;
    pub const THICKNESS_RATIO: f64 = 0.6;

    /// Bare L3 with r/a = 0.29.
    pub fn l3() -> (LatticeSpec, CavityDesign) {
        (LatticeSpec::normalized(SLAB_INDEX, THICKNESS_RATIO, 0.29), CavityDesign::lx(3))
    }

    /// L3 with the end hole shifted by 0.21a.
    pub fn l3_s1() -> (LatticeSpec, CavityDesign) {
        let (lat, d) = l3();
        (lat, d.with_modifications(vec![HoleModification::new(1, 0.21, 0.0)]))
    }

    /// L3 with the end hole shifted by 0.21a and shrunk by 0.12a.
    pub fn l3_sr1() -> (LatticeSpec, CavityDesign) {
        let (lat, d) = l3();
        (lat, d.with_modifications(vec![HoleModification::new(1, 0.21, 0.12)]))
    }

    /// Three shifted and shrunk holes per side, r/a = 0.2553.
    pub fn l3_sr3() -> (LatticeSpec, CavityDesign) {
        let lat = LatticeSpec::normalized(SLAB_INDEX, THICKNESS_RATIO, 0.2553);
        let d = CavityDesign::lx(3).with_modifications(vec![
            HoleModification::new(1, 0.3482, 0.098),
            HoleModification::new(2, 0.2476, 0.0882),
            HoleModification::new(3, 0.0573, 0.0927),
        ]);
        (lat, d)
    }

    /// Bare Lx with r/a = 0.29.
    pub fn lx(x: usize) -> (LatticeSpec, CavityDesign) {
        (LatticeSpec::normalized(SLAB_INDEX, THICKNESS_RATIO, 0.29), CavityDesign::lx(x))
    }

    /// Looks up a preset by its conventional name (`l3`, `l3_s1`, `l3_sr1`, `l3_sr3`, `l5`, ...).
    pub fn by_name(name: &str) -> Option<(LatticeSpec, CavityDesign)> {
        let lower = name.to_ascii_lowercase().replace('-', "_");
        match lower.as_str() {
            "l3_s1" => Some(l3_s1()),
            "l3_sr1" => Some(l3_sr1()),
            "l3_sr3" => Some(l3_sr3()),
            other => {
                let x: usize = other.strip_prefix('l')?.parse().ok()?;
                (x >= 1).then(|| lx(x))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn find(holes: &[Hole], x: f64, y: f64) -> Option<Hole> {
        holes.iter().copied().find(|h| (h.x - x).abs() < 1e-12 && (h.y - y).abs() < 1e-12)
    }

    fn full_lattice_count(design: &CavityDesign) -> usize {
        let (px, ry) = design.crystal_extent;
        let half = (ry / 2) as i64;
        (-half..=half)
            .map(|j| {
                if (j + design.defect_length_x as i64 % 2 + 1).rem_euclid(2) == 0 {
                    px + 1
                } else {
                    px
                }
            })
            .sum()
    }

    #[test]
    fn s1_end_hole_shifted() {
        let (lat, d) = presets::l3_s1();
        let holes = enumerate_holes(&lat, &d).unwrap();
        for sign in [-1.0, 1.0] {
            let h = find(&holes, sign * 2.21, 0.0).expect("shifted hole");
            assert!((h.radius - 0.29).abs() < 1e-15);
        }
        assert!(find(&holes, 2.0, 0.0).is_none());
    }

    #[test]
    fn sr3_positions_and_radii() {
        let (lat, d) = presets::l3_sr3();
        let holes = enumerate_holes(&lat, &d).unwrap();
        let expected = [(2.3482, 0.1573), (3.2476, 0.1671), (4.0573, 0.1626)];
        for (x, r) in expected {
            for sign in [-1.0, 1.0] {
                let h = find(&holes, sign * x, 0.0).unwrap();
                assert!((h.radius - r).abs() < 1e-12, "{} vs {}", h.radius, r);
            }
        }
        // untouched neighbor
        assert!((find(&holes, 5.0, 0.0).unwrap().radius - 0.2553).abs() < 1e-15);
    }

    #[test]
    fn bare_l3_count() {
        let (lat, d) = presets::l3();
        let holes = enumerate_holes(&lat, &d).unwrap();
        assert_eq!(holes.len(), full_lattice_count(&d) - 3);
        for x in [-1.0, 0.0, 1.0] {
            assert!(find(&holes, x, 0.0).is_none());
        }
    }

    #[test]
    fn even_defect_omits_half_integer_sites() {
        let (lat, d) = presets::lx(4);
        let holes = enumerate_holes(&lat, &d).unwrap();
        assert_eq!(holes.len(), full_lattice_count(&d) - 4);
        assert!(find(&holes, 2.5, 0.0).is_some());
        assert!(find(&holes, 1.5, 0.0).is_none());
        assert!(find(&holes, 0.0, ROW_SPACING).is_some());
    }

    #[test]
    fn rejects_modification_past_extent() {
        let (lat, d) = presets::l3();
        let d = d.with_extent(8, 5).with_modifications(vec![HoleModification::new(4, 0.1, 0.0)]);
        assert!(enumerate_holes(&lat, &d).is_err());
    }

    #[test]
    fn rejects_nonpositive_radius() {
        let (lat, d) = presets::l3();
        let d = d.with_modifications(vec![HoleModification::new(1, 0.0, 0.29)]);
        assert!(enumerate_holes(&lat, &d).is_err());
    }

    #[test]
    fn rejects_bad_lattice() {
        let lat = LatticeSpec::normalized(2.6, 0.6, 0.5);
        assert!(enumerate_holes(&lat, &CavityDesign::lx(3)).is_err());
        let lat = LatticeSpec::normalized(0.9, 0.6, 0.2);
        assert!(lat.validate().is_err());
    }

    #[test]
    fn preset_lookup() {
        assert_eq!(presets::by_name("L3_sr3"), Some(presets::l3_sr3()));
        assert_eq!(presets::by_name("l7").unwrap().1.defect_length_x, 7);
        assert!(presets::by_name("foo").is_none());
    }
}
