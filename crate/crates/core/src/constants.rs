//! Physical constants (CODATA 2018, SI units).

use serde::{Deserialize, Serialize};

/// Unified atomic mass unit in kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of ⁸⁵Rb in atomic mass units.
pub const RB85_MASS_U: f64 = 84.9118;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Atom mass, kg.
    pub atom_mass: f64,
    /// Bohr radius, m.
    pub bohr_radius: f64,
}

impl PhysicalConstants {
    pub const RB85: PhysicalConstants = PhysicalConstants {
        hbar: 1.054_571_817e-34,
        k_b: 1.380_649e-23,
        atom_mass: RB85_MASS_U * ATOMIC_MASS_UNIT,
        bohr_radius: 5.291_772_109_03e-11,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::RB85
    }
}
