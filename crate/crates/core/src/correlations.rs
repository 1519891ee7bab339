//! Integrated j-body correlators and the loss-rate predictions built on them.
//!
//! Three models for the three-body rate Γ₃ are provided:
//!
//! * [`gamma3_thermal`]: independent, classically distributed atoms.
//! * [`gamma3_stg_thermal`]: the thermal result suppressed by the strong-coupling
//!   1D correlation factor g₃ evaluated at the peak linear density.
//! * [`gamma3_ground_state_1d`]: atoms in the transverse ground state with g₃
//!   evaluated along the axis.
//!
//! Two-body rates follow a phenomenological intensity power law, [`gamma2_scaling`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::thermal::ThermalCloud;
use crate::trap::{TrapConfig, TrapState};

/// cm⁶/s → m⁶/s
pub const CM6_TO_M6: f64 = 1e-12;

/// Loss strengths and interaction parameters, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroscopicConstants {
    /// s⁻¹
    pub kappa1: f64,
    /// m³/s
    pub kappa2: f64,
    /// m⁶/s
    pub kappa3: f64,
    /// s-wave scattering length, m.
    pub scattering_length: f64,
    /// Constant in the confinement-renormalised 1D coupling.
    pub lieb_liniger_c: f64,
}

impl Default for MicroscopicConstants {
    fn default() -> Self {
        MicroscopicConstants {
            kappa1: 0.0,
            kappa2: 0.0,
            kappa3: 0.093e-25 * CM6_TO_M6,
            scattering_length: -475.0 * PhysicalConstants::RB85.bohr_radius,
            lieb_liniger_c: 1.0326,
        }
    }
}

impl MicroscopicConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa1", self.kappa1), ("kappa2", self.kappa2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.kappa3.is_finite() && self.kappa3 > 0.0) {
            return Err(Error::domain(format!("kappa3 must be positive, got {}", self.kappa3)));
        }
        if !self.scattering_length.is_finite() {
            return Err(Error::domain("scattering length must be finite"));
        }
        if !(self.lieb_liniger_c > 1.0 && self.lieb_liniger_c < 1.1) {
            return Err(Error::domain(format!(
                "Lieb-Liniger constant C must lie in (1, 1.1), got {}",
                self.lieb_liniger_c
            )));
        }
        Ok(())
    }
}

/// Linear loss rates of the four-state population model, s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateCoefficients {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma2_tilde: f64,
    pub gamma3: f64,
}

impl RateCoefficients {
    pub fn new(gamma1: f64, gamma2: f64, gamma2_tilde: f64, gamma3: f64) -> Result<Self> {
        let r = RateCoefficients { gamma1, gamma2, gamma2_tilde, gamma3 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|g| g.is_finite() && *g >= 0.0) {
            Ok(())
        } else {
            Err(Error::domain(format!("rate coefficients must be finite and non-negative: {self:?}")))
        }
    }

    /// (Γ₁, Γ₂, Γ̃₂, Γ₃)
    pub fn as_array(&self) -> [f64; 4] {
        [self.gamma1, self.gamma2, self.gamma2_tilde, self.gamma3]
    }

    pub fn max_rate(&self) -> f64 {
        self.as_array().into_iter().fold(0.0, f64::max)
    }

    /// All rates multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        RateCoefficients {
            gamma1: self.gamma1 * factor,
            gamma2: self.gamma2 * factor,
            gamma2_tilde: self.gamma2_tilde * factor,
            gamma3: self.gamma3 * factor,
        }
    }
}

fn factorial(n: u32) -> u64 {
    (1..=u64::from(n)).product()
}

/// m(m−1)···(m−n+1)
fn falling_factorial(m: u32, n: u32) -> u64 {
    (0..n).map(|i| u64::from(m - i)).product()
}

fn check_orders(n: u32, m: u32) -> Result<()> {
    if !(1..=3).contains(&n) || !(1..=3).contains(&m) {
        return Err(Error::domain(format!("correlator order ({n}, {m}) outside 1..=3")));
    }
    Ok(())
}

/// ᵗʰC^n_m = n!·m(m−1)···(m−n+1)/mⁿ · ∫ n(r)ⁿ d³r for independent thermal atoms.
///
/// `cloud` must hold exactly `m` atoms. Vanishes for n > m.
pub fn thermal_correlator(cloud: &ThermalCloud, n: u32, m: u32) -> Result<f64> {
    check_orders(n, m)?;
    if cloud.atom_count != m {
        return Err(Error::domain(format!(
            "correlator for {m} atoms evaluated on a {}-atom cloud",
            cloud.atom_count
        )));
    }
    if n > m {
        return Ok(0.0);
    }
    let prefactor = (factorial(n) * falling_factorial(m, n)) as f64 / f64::from(m).powi(n as i32);
    Ok(prefactor * cloud.density_power_integral(n)?)
}

/// Γ₂ = 2κ₂ᵗʰC²₂ and Γ̃₂ = ⅔κ₂ᵗʰC²₃ for two- and three-atom clouds sharing the
/// single-particle profile of `profile`.
///
/// Both correlators are written as an integer multiple of ∫ñ², with ñ the
/// normalised single-particle density, so the two rates come out bit-identical.
pub fn thermal_pair_rates(profile: &ThermalCloud, kappa2: f64) -> Result<(f64, f64)> {
    let norm = profile.normalized_power_integral(2)?;
    // ᵗʰC^n_m = n!·m!/(m−n)! · ∫ñⁿ
    let c22 = factorial(2) * falling_factorial(2, 2);
    let c23 = factorial(2) * falling_factorial(3, 2);
    let gamma2 = (2 * c22) as f64 * kappa2 * norm;
    let gamma2_tilde = ((2 * c23) / 3) as f64 * kappa2 * norm;
    Ok((gamma2, gamma2_tilde))
}

fn require_triad(cloud: &ThermalCloud) -> Result<()> {
    if cloud.atom_count != 3 {
        return Err(Error::domain(format!(
            "three-body rate needs a 3-atom cloud, got {}",
            cloud.atom_count
        )));
    }
    Ok(())
}

/// Γ₃ = 2κ₃·ᵗʰC³₃ = 8κ₃n₀²/3^(3/2) for an uncorrelated thermal triad.
pub fn gamma3_thermal(cloud: &ThermalCloud, mc: &MicroscopicConstants) -> Result<f64> {
    require_triad(cloud)?;
    Ok(2.0 * mc.kappa3 * thermal_correlator(cloud, 3, 3)?)
}

/// Lieb-Liniger parameter γ = 2a / [n₁D l⊥² (1 − C a/l⊥)].
pub fn lieb_liniger_gamma(n1d_local: f64, mc: &MicroscopicConstants, l_perp: f64) -> Result<f64> {
    if !(n1d_local > 0.0) {
        return Err(Error::domain(format!("linear density must be positive, got {n1d_local}")));
    }
    coupling(mc, l_perp).map(|c| c / n1d_local)
}

/// 2a / [l⊥² (1 − C a/l⊥)], i.e. γ·n₁D.
fn coupling(mc: &MicroscopicConstants, l_perp: f64) -> Result<f64> {
    if !(l_perp > 0.0) {
        return Err(Error::domain(format!("l_perp must be positive, got {l_perp}")));
    }
    let a = mc.scattering_length;
    let denominator = 1.0 - mc.lieb_liniger_c * a / l_perp;
    if denominator.abs() < 1e-9 {
        return Err(Error::Singularity { denominator });
    }
    Ok(2.0 * a / (l_perp * l_perp * denominator))
}

/// Default bound on |γ| below which the strong-coupling g₃ is flagged.
pub const STRONG_COUPLING_GUARD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G3Factor {
    pub value: f64,
    /// Set when |γ| is at or below the strong-coupling guard.
    pub outside_validity: bool,
}

/// g₃ ≈ 16π⁶ / (15 γ⁶) with the default guard |γ| > 1.
pub fn g3_super_tg(gamma_ll: f64) -> G3Factor {
    g3_super_tg_with_guard(gamma_ll, STRONG_COUPLING_GUARD)
}

pub fn g3_super_tg_with_guard(gamma_ll: f64, guard: f64) -> G3Factor {
    G3Factor {
        value: g3_value(gamma_ll),
        outside_validity: !(gamma_ll.abs() > guard),
    }
}

fn g3_value(gamma_ll: f64) -> f64 {
    16.0 * PI.powi(6) / (15.0 * gamma_ll.powi(6))
}

/// Γ₃ with super-Tonks-Girardeau suppression at the peak linear density.
pub fn gamma3_stg_thermal(cloud: &ThermalCloud, mc: &MicroscopicConstants, l_perp: f64) -> Result<f64> {
    let gamma_ll = lieb_liniger_gamma(cloud.peak_linear_density()?, mc, l_perp)?;
    Ok(g3_super_tg(gamma_ll).value * gamma3_thermal(cloud, mc)?)
}

/// How g₃ enters the axial integral of the transverse-ground-state model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum G3Profile {
    /// g₃(γ(n₁D(z))) evaluated locally at every z.
    #[default]
    Local,
    /// g₃ fixed at its value for the peak linear density.
    Peak,
    /// g₃ = 1 (no correlations).
    Unity,
}

/// Γ₃ = 2κ₃ · 9/(4π⁴l⊥⁴) · ∫ g₃ n₁D(z)³ dz for atoms in the transverse ground state.
pub fn gamma3_ground_state_1d(
    cloud: &ThermalCloud,
    mc: &MicroscopicConstants,
    l_perp: f64,
    profile: G3Profile,
) -> Result<f64> {
    let peak = cloud.peak_linear_density()?;
    let g = coupling(mc, l_perp)?;
    let sigma_z = cloud.widths()[2];
    let g3_peak = g3_value(g / peak);
    let integrand = |z: f64| {
        let n = peak * (-0.5 * (z / sigma_z).powi(2)).exp();
        let g3 = match profile {
            G3Profile::Local if n > 0.0 => g3_value(g / n),
            G3Profile::Local => 0.0,
            G3Profile::Peak => g3_peak,
            G3Profile::Unity => 1.0,
        };
        g3 * n * n * n
    };
    let half = 12.0 * sigma_z;
    // Scale to O(1) for the quadrature tolerances.
    let scale = integrand(0.0).max(f64::MIN_POSITIVE) * sigma_z;
    let axial = integrate(|z| integrand(z) / scale, -half, half, 1e-14, 1e-11)? * scale;
    Ok(2.0 * mc.kappa3 * 9.0 / (4.0 * PI.powi(4) * l_perp.powi(4)) * axial)
}

/// Exponent 2m + 3/2 of Γ₂ ∝ ω⊥^(2m+3/2) when K₂ ∝ Iᵐ.
pub fn scaling_exponent(m: u32) -> Result<f64> {
    if m > 2 {
        return Err(Error::domain(format!("intensity power m = {m} not supported (0..=2)")));
    }
    Ok(2.0 * f64::from(m) + 1.5)
}

/// Γ₂ = A·ω⊥^(2m+3/2).
pub fn gamma2_scaling(amplitude: f64, m: u32, omega_perp: f64) -> Result<f64> {
    let exponent = scaling_exponent(m)?;
    if !(amplitude >= 0.0) {
        return Err(Error::domain(format!("amplitude must be non-negative, got {amplitude}")));
    }
    Ok(amplitude * omega_perp.powf(exponent))
}

/// All three Γ₃ models at one beam power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamma3Prediction {
    /// W
    pub power: f64,
    /// rad/s
    pub omega_perp: f64,
    pub peak_density: f64,
    pub peak_linear_density: f64,
    pub lieb_liniger_gamma: f64,
    pub g3_peak: f64,
    pub gamma3_thermal: f64,
    pub gamma3_stg: f64,
    pub gamma3_1d: f64,
}

pub fn predict_gamma3(
    trap: &TrapConfig,
    constants: &PhysicalConstants,
    mc: &MicroscopicConstants,
    power: f64,
    profile: G3Profile,
) -> Result<Gamma3Prediction> {
    mc.validate()?;
    let state = TrapState::new(trap, constants, power)?;
    let cloud = ThermalCloud::in_trap(&state, 3, *constants)?;
    let n1d = cloud.peak_linear_density()?;
    let gamma_ll = lieb_liniger_gamma(n1d, mc, state.l_perp)?;
    Ok(Gamma3Prediction {
        power,
        omega_perp: state.omega_perp(),
        peak_density: cloud.peak_density(),
        peak_linear_density: n1d,
        lieb_liniger_gamma: gamma_ll,
        g3_peak: g3_super_tg(gamma_ll).value,
        gamma3_thermal: gamma3_thermal(&cloud, mc)?,
        gamma3_stg: gamma3_stg_thermal(&cloud, mc, state.l_perp)?,
        gamma3_1d: gamma3_ground_state_1d(&cloud, mc, state.l_perp, profile)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(power: f64) -> (ThermalCloud, TrapState, MicroscopicConstants) {
        let c = PhysicalConstants::RB85;
        let s = TrapState::new(&TrapConfig::default(), &c, power).unwrap();
        (ThermalCloud::in_trap(&s, 3, c).unwrap(), s, MicroscopicConstants::default())
    }

    #[test]
    fn default_constants() {
        let mc = MicroscopicConstants::default();
        mc.validate().unwrap();
        assert_relative_eq!(mc.kappa3, 9.3e-39, max_relative = 1e-12);
        assert!(mc.scattering_length < 0.0);
    }

    #[test]
    fn correlator_prefactors() {
        let (cloud, _, _) = setup(0.110);
        let i3 = cloud.density_power_integral(3).unwrap();
        assert_eq!(thermal_correlator(&cloud, 3, 3).unwrap(), (4.0 / 3.0) * i3);
        assert_relative_eq!(thermal_correlator(&cloud, 1, 3).unwrap(), 3.0, max_relative = 1e-15);
        let two = ThermalCloud { atom_count: 2, ..cloud };
        let one = ThermalCloud { atom_count: 1, ..cloud };
        assert_relative_eq!(thermal_correlator(&two, 1, 2).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(thermal_correlator(&one, 1, 1).unwrap(), 1.0, max_relative = 1e-15);
        assert_eq!(thermal_correlator(&two, 3, 2).unwrap(), 0.0);
        assert_eq!(thermal_correlator(&one, 2, 1).unwrap(), 0.0);
        let c23 = thermal_correlator(&cloud, 2, 3).unwrap();
        let c22 = thermal_correlator(&two, 2, 2).unwrap();
        assert_relative_eq!(c23 / c22, 3.0, max_relative = 1e-14);
    }

    #[test]
    fn correlator_requires_matching_atom_count() {
        let (cloud, _, _) = setup(0.110);
        assert!(thermal_correlator(&cloud, 2, 2).is_err());
        assert!(thermal_correlator(&cloud, 0, 3).is_err());
        assert!(thermal_correlator(&cloud, 4, 4).is_err());
    }

    #[test]
    fn pair_rates_identical() {
        let (cloud, _, _) = setup(0.140);
        let kappa2 = 3.7e-17;
        let (g2, g2t) = thermal_pair_rates(&cloud, kappa2).unwrap();
        assert_eq!(g2, g2t);
        let two = ThermalCloud { atom_count: 2, ..cloud };
        let via_correlators_2 = 2.0 * kappa2 * thermal_correlator(&two, 2, 2).unwrap();
        let via_correlators_3 = 2.0 / 3.0 * kappa2 * thermal_correlator(&cloud, 2, 3).unwrap();
        assert_relative_eq!(g2, via_correlators_2, max_relative = 1e-14);
        assert_relative_eq!(g2t, via_correlators_3, max_relative = 1e-14);
    }

    #[test]
    fn gamma3_thermal_at_110_mw() {
        let (cloud, _, mc) = setup(0.110);
        let g = gamma3_thermal(&cloud, &mc).unwrap();
        assert!((g / 131.5 - 1.0).abs() < 0.01, "{g}");
        let n0 = cloud.peak_density();
        assert_relative_eq!(g, 8.0 * mc.kappa3 * n0 * n0 / 3f64.powf(1.5), max_relative = 1e-13);
        let zero = MicroscopicConstants { kappa3: 0.0, ..mc };
        assert_eq!(gamma3_thermal(&cloud, &zero).unwrap(), 0.0);
    }

    #[test]
    fn gamma3_thermal_scales_as_power_three_halves() {
        let (a, _, mc) = setup(0.110);
        let (b, _, _) = setup(0.200);
        let ratio = gamma3_thermal(&b, &mc).unwrap() / gamma3_thermal(&a, &mc).unwrap();
        assert_relative_eq!(ratio, (0.200f64 / 0.110).powf(1.5), max_relative = 1e-10);
    }

    #[test]
    fn gamma3_thermal_needs_three_atoms() {
        let (cloud, _, mc) = setup(0.110);
        assert!(gamma3_thermal(&ThermalCloud { atom_count: 2, ..cloud }, &mc).is_err());
    }

    #[test]
    fn lieb_liniger_reference_value() {
        let mc = MicroscopicConstants::default();
        let g = lieb_liniger_gamma(2.8e6, &mc, 23.8e-9).unwrap();
        assert!((g + 15.0).abs() < 0.2, "{g}");
        let half = lieb_liniger_gamma(5.6e6, &mc, 23.8e-9).unwrap();
        assert_relative_eq!(half, g / 2.0, max_relative = 1e-14);
        let free = MicroscopicConstants { scattering_length: 0.0, ..mc };
        assert_eq!(lieb_liniger_gamma(2.8e6, &free, 23.8e-9).unwrap(), 0.0);
        assert!(lieb_liniger_gamma(0.0, &mc, 23.8e-9).is_err());
    }

    #[test]
    fn lieb_liniger_resonance_pole() {
        let mc = MicroscopicConstants::default();
        let l_perp = 1.0e-8;
        let resonant = MicroscopicConstants { scattering_length: l_perp / mc.lieb_liniger_c, ..mc };
        assert!(matches!(
            lieb_liniger_gamma(1e6, &resonant, l_perp),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn g3_values() {
        let g = g3_super_tg(-15.0);
        assert!((g.value / 9.0e-5 - 1.0).abs() < 0.01, "{}", g.value);
        assert!(!g.outside_validity);
        assert_eq!(g3_super_tg(7.3).value, g3_super_tg(-7.3).value);
        assert_eq!(g3_super_tg(f64::INFINITY).value, 0.0);
        assert!(g3_super_tg(0.5).outside_validity);
        assert!(!g3_super_tg_with_guard(0.5, 0.1).outside_validity);
    }

    #[test]
    fn stg_at_110_mw() {
        let (cloud, s, mc) = setup(0.110);
        let stg = gamma3_stg_thermal(&cloud, &mc, s.l_perp).unwrap();
        assert!((stg / 1.18e-2 - 1.0).abs() < 0.02, "{stg}");
        assert!(stg <= gamma3_thermal(&cloud, &mc).unwrap());
    }

    #[test]
    fn ground_state_1d_with_unit_g3_matches_gaussian_moment() {
        let (cloud, s, mc) = setup(0.110);
        let got = gamma3_ground_state_1d(&cloud, &mc, s.l_perp, G3Profile::Unity).unwrap();
        let n1 = cloud.peak_linear_density().unwrap();
        let moment = n1 * n1 * 3.0 / 3f64.sqrt();
        let expect = 2.0 * mc.kappa3 * 9.0 / (4.0 * PI.powi(4) * s.l_perp.powi(4)) * moment;
        assert_relative_eq!(got, expect, max_relative = 1e-6);
    }

    #[test]
    fn ground_state_1d_ordering() {
        for power in [0.110, 0.140, 0.170, 0.200] {
            let (cloud, s, mc) = setup(power);
            let local = gamma3_ground_state_1d(&cloud, &mc, s.l_perp, G3Profile::Local).unwrap();
            let peak = gamma3_ground_state_1d(&cloud, &mc, s.l_perp, G3Profile::Peak).unwrap();
            let stg = gamma3_stg_thermal(&cloud, &mc, s.l_perp).unwrap();
            let th = gamma3_thermal(&cloud, &mc).unwrap();
            assert!(stg < local && local < th / 10.0, "{stg} {local} {th}");
            // local g₃ suppresses the tails more than the peak value
            assert!(local < peak);
        }
    }

    #[test]
    fn gamma2_law() {
        assert_eq!(scaling_exponent(2).unwrap(), 5.5);
        assert_eq!(scaling_exponent(1).unwrap(), 3.5);
        assert_eq!(scaling_exponent(0).unwrap(), 1.5);
        assert!(scaling_exponent(3).is_err());
        assert_eq!(gamma2_scaling(0.0, 2, 1.3e6).unwrap(), 0.0);
        assert_relative_eq!(gamma2_scaling(2.0, 2, 4.0).unwrap(), 2.0 * 4f64.powf(5.5));
        assert!(gamma2_scaling(-1.0, 1, 1.0).is_err());
    }
}
