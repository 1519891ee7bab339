//! Semi-classical (Boltzmann) density of a few atoms in a 3D harmonic trap.
//!
//! n(r) = n₀ exp(−Σᵢ m ωᵢ² rᵢ² / 2k_BT), normalised so that ∫n d³r = N.
//! Integrals of powers of this profile have closed forms, which is all the
//! correlator and loss-rate code needs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::trap::TrapState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalCloud {
    pub atom_count: u32,
    /// K
    pub temperature: f64,
    /// Angular trap frequencies, rad/s.
    pub frequencies: [f64; 3],
    pub constants: PhysicalConstants,
}

impl ThermalCloud {
    pub fn new(atom_count: u32, temperature: f64, frequencies: [f64; 3]) -> Result<Self> {
        Self::with_constants(atom_count, temperature, frequencies, PhysicalConstants::RB85)
    }

    pub fn with_constants(
        atom_count: u32,
        temperature: f64,
        frequencies: [f64; 3],
        constants: PhysicalConstants,
    ) -> Result<Self> {
        if atom_count == 0 {
            return Err(Error::domain("thermal cloud needs at least one atom"));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::domain(format!("temperature must be positive, got {temperature}")));
        }
        if !frequencies.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::domain("trap frequencies must be positive"));
        }
        Ok(ThermalCloud { atom_count, temperature, frequencies, constants })
    }

    /// N atoms at the temperature and frequencies of `trap`.
    pub fn in_trap(trap: &TrapState, atom_count: u32, constants: PhysicalConstants) -> Result<Self> {
        Self::with_constants(atom_count, trap.temperature, trap.frequencies, constants)
    }

    fn k_t(&self) -> f64 {
        self.constants.k_b * self.temperature
    }

    /// Thermal width √(k_BT/(m ωᵢ²)) along each axis, m.
    pub fn widths(&self) -> [f64; 3] {
        let kt = self.k_t();
        let m = self.constants.atom_mass;
        self.frequencies.map(|w| (kt / (m * w * w)).sqrt())
    }

    /// Peak of the single-particle density n/N, m⁻³.
    fn peak_density_per_atom(&self) -> f64 {
        let [wx, wy, wz] = self.frequencies;
        let m = self.constants.atom_mass;
        wx * wy * wz * (m / (2.0 * PI * self.k_t())).powf(1.5)
    }

    /// Peak density n₀, m⁻³.
    pub fn peak_density(&self) -> f64 {
        f64::from(self.atom_count) * self.peak_density_per_atom()
    }

    /// ∫ ñ(r)^j d³r for the single-particle density ñ = n/N (independent of N).
    pub fn normalized_power_integral(&self, j: u32) -> Result<f64> {
        if !(1..=3).contains(&j) {
            return Err(Error::domain(format!("density power {j} not supported (1..=3)")));
        }
        Ok(self.peak_density_per_atom().powi(j as i32 - 1) * f64::from(j).powf(-1.5))
    }

    /// n(r), m⁻³.
    pub fn density_at(&self, r: [f64; 3]) -> f64 {
        let m = self.constants.atom_mass;
        let potential: f64 = self
            .frequencies
            .iter()
            .zip(r)
            .map(|(w, x)| 0.5 * m * w * w * x * x)
            .sum();
        self.peak_density() * (-potential / self.k_t()).exp()
    }

    /// ∫ n(r)^j d³r for j ∈ {1, 2, 3}; equals n₀^(j−1)·N·j^(−3/2).
    pub fn density_power_integral(&self, j: u32) -> Result<f64> {
        if !(1..=3).contains(&j) {
            return Err(Error::domain(format!("density power {j} not supported (1..=3)")));
        }
        let n0 = self.peak_density();
        Ok(n0.powi(j as i32 - 1) * f64::from(self.atom_count) * f64::from(j).powf(-1.5))
    }

    fn require_transverse_symmetry(&self) -> Result<f64> {
        let [wx, wy, _] = self.frequencies;
        if wx != wy {
            return Err(Error::domain(format!(
                "linear density needs equal transverse frequencies, got {wx} and {wy}"
            )));
        }
        Ok(wx)
    }

    /// Transversely integrated density on the axis, n₁D(0), m⁻¹.
    pub fn peak_linear_density(&self) -> Result<f64> {
        let w_perp = self.require_transverse_symmetry()?;
        let m = self.constants.atom_mass;
        Ok(self.peak_density() * 2.0 * PI * self.k_t() / (m * w_perp * w_perp))
    }

    /// n₁D(z), m⁻¹.
    pub fn linear_density_at(&self, z: f64) -> Result<f64> {
        let peak = self.peak_linear_density()?;
        let sz = self.widths()[2];
        Ok(peak * (-0.5 * (z / sz).powi(2)).exp())
    }
}
