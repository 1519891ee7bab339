//! JSON run configuration. Units live in the key names (`_mW`, `_kHz`,
//! `_uK`, ...) and are converted to SI here.

use std::f64::consts::TAU;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::correlations::{G3Profile, MicroscopicConstants, RateCoefficients, CM6_TO_M6};
use crate::dynamics::{default_initial_populations, PopulationVector};
use crate::error::{Error, Result};
use crate::inference::{DecompositionMethod, FitOptions};
use crate::lab::{ExperimentDesign, ReadoutModel};
use crate::trap::TrapConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSpec {
    #[serde(rename = "ref_power_freq_mW")]
    pub ref_power_freq_mw: f64,
    #[serde(rename = "ref_freqs_kHz")]
    pub ref_freqs_khz: [f64; 3],
    #[serde(rename = "ref_power_temp_mW")]
    pub ref_power_temp_mw: f64,
    #[serde(rename = "ref_temp_uK")]
    pub ref_temp_uk: f64,
    pub wavelength_nm: f64,
    pub waist_um: f64,
}

impl Default for TrapSpec {
    fn default() -> Self {
        TrapSpec::from(&TrapConfig::default())
    }
}

impl From<&TrapConfig> for TrapSpec {
    fn from(c: &TrapConfig) -> Self {
        TrapSpec {
            ref_power_freq_mw: c.ref_power_freq * 1e3,
            ref_freqs_khz: c.ref_frequencies.map(|f| f * 1e-3),
            ref_power_temp_mw: c.ref_power_temp * 1e3,
            ref_temp_uk: c.ref_temperature * 1e6,
            wavelength_nm: c.wavelength * 1e9,
            waist_um: c.waist * 1e6,
        }
    }
}

impl TrapSpec {
    pub fn to_trap_config(&self) -> Result<TrapConfig> {
        let c = TrapConfig {
            ref_power_freq: self.ref_power_freq_mw * 1e-3,
            ref_frequencies: self.ref_freqs_khz.map(|f| f * 1e3),
            ref_power_temp: self.ref_power_temp_mw * 1e-3,
            ref_temperature: self.ref_temp_uk * 1e-6,
            wavelength: self.wavelength_nm * 1e-9,
            waist: self.waist_um * 1e-6,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroscopicSpec {
    pub kappa1_per_s: f64,
    pub kappa2_cm3_per_s: f64,
    pub kappa3_cm6_per_s: f64,
    pub scattering_length_a0: f64,
    pub lieb_liniger_c: f64,
}

impl Default for MicroscopicSpec {
    fn default() -> Self {
        let m = MicroscopicConstants::default();
        MicroscopicSpec {
            kappa1_per_s: m.kappa1,
            kappa2_cm3_per_s: m.kappa2 * 1e6,
            kappa3_cm6_per_s: m.kappa3 / CM6_TO_M6,
            scattering_length_a0: m.scattering_length / PhysicalConstants::RB85.bohr_radius,
            lieb_liniger_c: m.lieb_liniger_c,
        }
    }
}

impl MicroscopicSpec {
    pub fn to_constants(&self, constants: &PhysicalConstants) -> Result<MicroscopicConstants> {
        let m = MicroscopicConstants {
            kappa1: self.kappa1_per_s,
            kappa2: self.kappa2_cm3_per_s * 1e-6,
            kappa3: self.kappa3_cm6_per_s * CM6_TO_M6,
            scattering_length: self.scattering_length_a0 * constants.bohr_radius,
            lieb_liniger_c: self.lieb_liniger_c,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub wait_times_s: Vec<f64>,
    pub shots_per_time: u32,
    pub initial_populations: PopulationVector,
    #[serde(rename = "power_mW")]
    pub power_mw: f64,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            wait_times_s: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
            shots_per_time: 600,
            initial_populations: default_initial_populations(),
            power_mw: 110.0,
        }
    }
}

impl From<&ExperimentDesign> for DesignSpec {
    fn from(d: &ExperimentDesign) -> Self {
        DesignSpec {
            wait_times_s: d.wait_times.clone(),
            shots_per_time: d.shots_per_time,
            initial_populations: d.initial_populations,
            power_mw: d.power * 1e3,
        }
    }
}

impl DesignSpec {
    pub fn to_design(&self) -> Result<ExperimentDesign> {
        let d = ExperimentDesign {
            wait_times: self.wait_times_s.clone(),
            shots_per_time: self.shots_per_time,
            initial_populations: self.initial_populations,
            power: self.power_mw * 1e-3,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSpec {
    pub fix_gamma1: bool,
    pub tie_gamma2: bool,
    pub method: DecompositionMethod,
    /// Histogram bins above this photon count are pooled; chosen from the
    /// readout model when absent.
    pub max_bin: Option<usize>,
}

impl FitSpec {
    pub fn options(&self) -> FitOptions {
        FitOptions { fix_gamma1: self.fix_gamma1, tie_gamma2: self.tie_gamma2, initials: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub trap: TrapSpec,
    pub microscopic: MicroscopicSpec,
    pub g3_profile: G3Profile,
    pub design: DesignSpec,
    pub readout: ReadoutModel,
    /// True rates for simulation, s⁻¹, at `design.power_mW`.
    pub rates_per_s: Option<RateCoefficients>,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    #[serde(rename = "powers_mW")]
    pub powers_mw: Vec<f64>,
    pub fit: FitSpec,
    /// Intensity exponent m of pair loss, Γ₂ ∝ ω⊥^(2m+3/2). Adds a Γ₂ column
    /// to predictions and sets how the pipeline scales Γ₂ across powers.
    pub gamma2_scaling_m: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trap: TrapSpec::default(),
            microscopic: MicroscopicSpec::default(),
            g3_profile: G3Profile::default(),
            design: DesignSpec::default(),
            readout: ReadoutModel::default(),
            rates_per_s: None,
            seed: None,
            output_dir: PathBuf::from("out"),
            powers_mw: vec![110.0, 140.0, 170.0, 200.0],
            fit: FitSpec::default(),
            gamma2_scaling_m: None,
        }
    }
}

impl RunConfig {
    /// Parses a config document. JSON syntax errors come back as
    /// [`Error::Parse`]; well-formed documents with wrong fields or values
    /// as [`Error::Domain`].
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::domain(format!("config: {e}")),
            _ => Error::Parse { line: e.line(), message: e.to_string() },
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.trap.to_trap_config()?;
        self.microscopic.to_constants(&PhysicalConstants::RB85)?;
        self.design.to_design()?;
        self.readout.validate()?;
        if let Some(r) = &self.rates_per_s {
            r.validate()?;
        }
        if let Some(m) = self.gamma2_scaling_m {
            crate::correlations::scaling_exponent(m)?;
        }
        if self.powers_mw.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::domain("powers_mW must be positive"));
        }
        Ok(())
    }

    pub fn trap_config(&self) -> Result<TrapConfig> {
        self.trap.to_trap_config()
    }

    pub fn microscopic_constants(&self) -> Result<MicroscopicConstants> {
        self.microscopic.to_constants(&PhysicalConstants::RB85)
    }

    pub fn experiment_design(&self) -> Result<ExperimentDesign> {
        self.design.to_design()
    }
}

/// rad/s → kHz
pub fn angular_to_khz(w: f64) -> f64 {
    w / TAU * 1e-3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_to_si() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.trap.ref_freqs_khz, [210.0, 210.0, 34.0]);
        let t = cfg.trap_config().unwrap();
        assert!((t.ref_temperature - 17.8e-6).abs() < 1e-18);
        let m = cfg.microscopic_constants().unwrap();
        let d = MicroscopicConstants::default();
        assert!((m.kappa3 / d.kappa3 - 1.0).abs() < 1e-12);
        assert!((m.scattering_length / d.scattering_length - 1.0).abs() < 1e-12);
        assert_eq!(cfg.experiment_design().unwrap().power, 0.11);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json_str(r#"{"seed": 7, "powers_mW": [110, 200]}"#).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.powers_mw, vec![110.0, 200.0]);
        assert_eq!(cfg.design, DesignSpec::default());
    }

    #[test]
    fn full_document() {
        let text = r#"{
            "trap": {"ref_power_freq_mW": 110, "ref_freqs_kHz": [210, 210, 34], "ref_power_temp_mW": 5,
                     "ref_temp_uK": 17.8, "wavelength_nm": 1064, "waist_um": 1.1},
            "design": {"wait_times_s": [0, 1, 2], "shots_per_time": 100, "power_mW": 140,
                       "initial_populations": {"r0": 0, "r1": 0, "r2": 1, "r3": 0}},
            "readout": {"mean_background": 5, "mean_per_atom": 30, "family": {"kind": "gaussian", "std_dev": 6}},
            "rates_per_s": {"gamma1": 0, "gamma2": 0.3, "gamma2_tilde": 0.3, "gamma3": 0.5},
            "g3_profile": "peak",
            "fit": {"fix_gamma1": true, "method": "least_squares"},
            "gamma2_scaling_m": 2
        }"#;
        let cfg = RunConfig::from_json_str(text).unwrap();
        assert_eq!(cfg.g3_profile, G3Profile::Peak);
        assert_eq!(cfg.fit.method, DecompositionMethod::LeastSquares);
        assert_eq!(cfg.experiment_design().unwrap().shots_per_time, 100);
    }

    #[test]
    fn syntax_and_semantic_errors_are_distinguished() {
        assert!(matches!(RunConfig::from_json_str("{\"seed\": "), Err(Error::Parse { .. })));
        assert!(matches!(RunConfig::from_json_str(r#"{"seed": "x"}"#), Err(Error::Domain(_))));
        assert!(matches!(RunConfig::from_json_str(r#"{"bogus": 1}"#), Err(Error::Domain(_))));
        let bad_trap = r#"{"trap": {"ref_power_freq_mW": -1, "ref_freqs_kHz": [210, 210, 34],
            "ref_power_temp_mW": 5, "ref_temp_uK": 17.8, "wavelength_nm": 1064, "waist_um": 1.1}}"#;
        assert!(matches!(RunConfig::from_json_str(bad_trap), Err(Error::Domain(_))));
        assert!(matches!(RunConfig::from_json_str(r#"{"gamma2_scaling_m": 5}"#), Err(Error::Domain(_))));
    }
}
