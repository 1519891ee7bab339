//! Optical tweezer model in the harmonic approximation.
//!
//! Trap frequencies and the post-merge temperature both scale with the square
//! root of the beam power. A [`TrapConfig`] holds the reference measurements;
//! [`TrapState`] is the trap evaluated at one beam power.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};

/// Reference parameters of a tweezer, all in SI units.
///
/// `ref_frequencies` are ordinary frequencies (Hz); everything downstream
/// works with angular frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    /// Beam power at which `ref_frequencies` were measured, W.
    pub ref_power_freq: f64,
    /// Trap frequencies (x, y, z) at `ref_power_freq`, Hz.
    pub ref_frequencies: [f64; 3],
    /// Beam power at which `ref_temperature` was measured, W.
    pub ref_power_temp: f64,
    /// Temperature at `ref_power_temp`, K.
    pub ref_temperature: f64,
    pub wavelength: f64,
    pub waist: f64,
}

impl Default for TrapConfig {
    fn default() -> Self {
        TrapConfig {
            ref_power_freq: 0.110,
            ref_frequencies: [210e3, 210e3, 34e3],
            ref_power_temp: 0.005,
            ref_temperature: 17.8e-6,
            wavelength: 1064e-9,
            waist: 1.1e-6,
        }
    }
}

impl TrapConfig {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("ref_power_freq", self.ref_power_freq),
            ("ref_power_temp", self.ref_power_temp),
            ("ref_temperature", self.ref_temperature),
            ("wavelength", self.wavelength),
            ("waist", self.waist),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("trap {name} must be positive, got {v}")));
            }
        }
        let [fx, fy, fz] = self.ref_frequencies;
        if !self.ref_frequencies.iter().all(|f| f.is_finite() && *f > 0.0) {
            return Err(Error::domain("trap frequencies must be positive"));
        }
        if fx != fy {
            return Err(Error::domain(format!(
                "transverse trap frequencies must be equal, got {fx} and {fy}"
            )));
        }
        if fz >= fx {
            return Err(Error::domain(format!(
                "axial frequency {fz} must be below transverse frequency {fx}"
            )));
        }
        Ok(())
    }

    /// Ratio ω_z/ω⊥, in (0, 1) for a valid elongated tweezer.
    pub fn aspect_ratio(&self) -> f64 {
        self.ref_frequencies[2] / self.ref_frequencies[0]
    }
}

fn check_power(power: f64) -> Result<()> {
    if power.is_finite() && power > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("beam power must be positive, got {power} W")))
    }
}

/// Angular trap frequencies (rad/s) at `power` (W).
pub fn frequencies_at_power(cfg: &TrapConfig, power: f64) -> Result<[f64; 3]> {
    check_power(power)?;
    let scale = (power / cfg.ref_power_freq).sqrt();
    Ok(cfg.ref_frequencies.map(|f| TAU * f * scale))
}

/// Temperature (K) at `power` (W).
pub fn temperature_at_power(cfg: &TrapConfig, power: f64) -> Result<f64> {
    check_power(power)?;
    Ok(cfg.ref_temperature * (power / cfg.ref_power_temp).sqrt())
}

/// k_B·T / (ħ·ω_z). Independent of power since both scale as √P.
pub fn thermal_ratio(cfg: &TrapConfig, constants: &PhysicalConstants) -> Result<f64> {
    cfg.validate()?;
    thermal_ratio_at(cfg, constants, cfg.ref_power_freq)
}

/// k_B·T / (ħ·ω_z) evaluated explicitly at `power`.
pub fn thermal_ratio_at(cfg: &TrapConfig, constants: &PhysicalConstants, power: f64) -> Result<f64> {
    let omega = frequencies_at_power(cfg, power)?;
    let temperature = temperature_at_power(cfg, power)?;
    Ok(constants.k_b * temperature / (constants.hbar * omega[2]))
}

/// Transverse oscillator length √(ħ/(m ω⊥)).
pub fn oscillator_length(constants: &PhysicalConstants, omega: f64) -> f64 {
    (constants.hbar / (constants.atom_mass * omega)).sqrt()
}

/// The tweezer evaluated at one beam power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapState {
    /// W
    pub power: f64,
    /// Angular frequencies (x, y, z), rad/s.
    pub frequencies: [f64; 3],
    /// K
    pub temperature: f64,
    /// Transverse oscillator length, m.
    pub l_perp: f64,
}

impl TrapState {
    pub fn new(cfg: &TrapConfig, constants: &PhysicalConstants, power: f64) -> Result<Self> {
        cfg.validate()?;
        let frequencies = frequencies_at_power(cfg, power)?;
        let temperature = temperature_at_power(cfg, power)?;
        Ok(TrapState {
            power,
            frequencies,
            temperature,
            l_perp: oscillator_length(constants, frequencies[0]),
        })
    }

    pub fn omega_perp(&self) -> f64 {
        self.frequencies[0]
    }
}
