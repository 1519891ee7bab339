//! Few-atom inelastic loss in an optical tweezer: trap and thermal-gas
//! models, one-, two- and three-body loss rates, population dynamics, shot
//! simulation and rate inference from photon-count data.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constants;
pub mod correlations;
pub mod dynamics;
pub mod error;
pub mod inference;
pub mod io;
pub mod lab;
pub mod ode;
pub mod quadrature;
pub mod thermal;
pub mod trap;

pub use config::RunConfig;
pub use constants::PhysicalConstants;
pub use correlations::{G3Profile, Gamma3Prediction, MicroscopicConstants, RateCoefficients};
pub use dynamics::{PopulationVector, Trajectory};
pub use error::{Error, Result};
pub use inference::{
    DecompositionMethod, FitOptions, Observation, OccupancyEstimate, ParameterStatus, RateFit, ScalingFit,
    ScalingPoint,
};
pub use lab::{ExperimentDesign, PhotonHistogram, ReadoutFamily, ReadoutModel, ShotDataset, Templates};
pub use thermal::ThermalCloud;
pub use trap::{TrapConfig, TrapState};
