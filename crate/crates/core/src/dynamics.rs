//! Four-state population dynamics under one-, two- and three-body loss.
//!
//! States are ordered (3, 2, 1, 0) atoms throughout, matching the generator
//!
//! ```text
//! | −(Γ₃+3Γ̃₂+3Γ₁)       0           0    0 |
//! |      3Γ₁       −(Γ₂+2Γ₁)        0    0 |
//! |      3Γ̃₂           2Γ₁        −Γ₁   0 |
//! |      Γ₃             Γ₂          Γ₁   0 |
//! ```
//!
//! [`evolve_analytic`] uses the closed-form solution and falls back to the
//! adaptive integrator in [`evolve_numeric`] when two decay constants coincide.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::correlations::RateCoefficients;
use crate::error::{Error, Result};
use crate::ode::{self, Tolerances};

const SUM_TOLERANCE: f64 = 1e-9;
const NEGATIVE_CLAMP: f64 = 1e-12;
/// Relative size below which a closed-form denominator counts as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

/// Probabilities of observing 0..=3 atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationVector {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

impl PopulationVector {
    /// Builds from `[r3, r2, r1, r0]` and checks the simplex invariants.
    pub fn from_state_order(v: [f64; 4]) -> Result<Self> {
        let p = PopulationVector { r3: v[0], r2: v[1], r1: v[2], r0: v[3] };
        p.validate()?;
        Ok(p)
    }

    /// Builds from `[r0, r1, r2, r3]` and checks the simplex invariants.
    pub fn from_atom_order(v: [f64; 4]) -> Result<Self> {
        Self::from_state_order([v[3], v[2], v[1], v[0]])
    }

    /// A pure state with `n` atoms.
    pub fn pure(n: usize) -> Result<Self> {
        if n > 3 {
            return Err(Error::domain(format!("atom number {n} outside 0..=3")));
        }
        let mut v = [0.0; 4];
        v[n] = 1.0;
        Self::from_atom_order(v)
    }

    /// Projects an almost-normalised vector onto the simplex: components down
    /// to −1e-12 are clamped to zero, anything worse is an error.
    pub fn from_state_order_clamped(v: [f64; 4]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite() || *x < -NEGATIVE_CLAMP) {
            return Err(Error::domain(format!("population vector {v:?} has negative entries")));
        }
        let clamped = v.map(|x| x.max(0.0));
        Self::from_state_order(clamped)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.state_order();
        if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::domain(format!("populations must lie in [0, 1]: {v:?}")));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::domain(format!("populations sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `[r3, r2, r1, r0]`
    pub fn state_order(&self) -> [f64; 4] {
        [self.r3, self.r2, self.r1, self.r0]
    }

    /// `[r0, r1, r2, r3]`
    pub fn atom_order(&self) -> [f64; 4] {
        [self.r0, self.r1, self.r2, self.r3]
    }

    pub fn get(&self, atoms: usize) -> f64 {
        self.atom_order()[atoms]
    }
}

/// Measured loading after assembling a triad: (r₃, r₂, r₁, r₀) = (0.836, 0.022, 0.141, 0.001).
pub fn default_initial_populations() -> PopulationVector {
    PopulationVector { r3: 0.836, r2: 0.022, r1: 0.141, r0: 0.001 }
}

/// Dyad loading: two atoms with certainty.
pub fn dyad_initial_populations() -> PopulationVector {
    PopulationVector { r3: 0.0, r2: 1.0, r1: 0.0, r0: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// s, strictly increasing
    pub times: Vec<f64>,
    pub populations: Vec<PopulationVector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Generator G with dr/dt = G·r in state order (3, 2, 1, 0). Columns sum to zero.
pub fn generator_matrix(rates: &RateCoefficients) -> Matrix4<f64> {
    let RateCoefficients { gamma1: g1, gamma2: g2, gamma2_tilde: g2t, gamma3: g3 } = *rates;
    Matrix4::new(
        -(g3 + 3.0 * g2t + 3.0 * g1), 0.0, 0.0, 0.0,
        3.0 * g1, -(g2 + 2.0 * g1), 0.0, 0.0,
        3.0 * g2t, 2.0 * g1, -g1, 0.0,
        g3, g2, g1, 0.0,
    )
}

/// Which solution path produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    ClosedForm,
    /// Closed form was degenerate; the adaptive integrator was used.
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evolved {
    pub populations: PopulationVector,
    pub route: Route,
}

/// Closed-form solution applied to an arbitrary state-order vector, or `None`
/// when a denominator is degenerate.
pub fn closed_form(r: [f64; 4], rates: &RateCoefficients, t: f64) -> Option<[f64; 4]> {
    let RateCoefficients { gamma1: g1, gamma2: g2, gamma2_tilde: g2t, gamma3: g3 } = *rates;
    let scale = rates.max_rate();
    if scale == 0.0 {
        return Some(r);
    }
    let lambda3 = g3 + 3.0 * g2t + 3.0 * g1;
    let lambda2 = g2 + 2.0 * g1;
    let d32 = g3 + 3.0 * g2t - g2 + g1; // λ₃ − λ₂
    let d31 = g3 + 3.0 * g2t + 2.0 * g1; // λ₃ − Γ₁
    let d21 = g2 + g1; // λ₂ − Γ₁
    let threshold = DEGENERACY_THRESHOLD * scale;
    if [d32, d31, d21, lambda2, lambda3].iter().any(|d| d.abs() < threshold) {
        return None;
    }

    // Integration constants from r(0).
    let a = r[0];
    let r2_from_a = -3.0 * a * g1 / d32;
    let b = r[1] - r2_from_a;
    let alpha = 3.0 * a / d31 * (g2t - 2.0 * g1 * g1 / d32);
    let beta = 2.0 * b * g1 / d21;
    let c = r[2] + alpha + beta;
    let r0_from_a = (-g3 * a + 3.0 * a * g1 * g2 / d32 + g1 * alpha) / lambda3;
    let r0_from_b = (-g2 * b + g1 * beta) / lambda2;
    let d = r[3] - r0_from_a + c - r0_from_b;

    let e3 = (-lambda3 * t).exp();
    let e2 = (-lambda2 * t).exp();
    let e1 = (-g1 * t).exp();
    Some([
        a * e3,
        r2_from_a * e3 + b * e2,
        -alpha * e3 - beta * e2 + c * e1,
        r0_from_a * e3 - c * e1 + r0_from_b * e2 + d,
    ])
}

/// Propagates an arbitrary state-order vector to time `t`, preferring the
/// closed form.
pub fn propagate(r: [f64; 4], rates: &RateCoefficients, t: f64) -> Result<([f64; 4], Route)> {
    if let Some(v) = closed_form(r, rates, t) {
        return Ok((v, Route::ClosedForm));
    }
    let g = generator_matrix(rates);
    let ys = ode::solve(move |_, y: &[f64; 4]| mat_vec(&g, y), 0.0, r, &[t], Tolerances::default())?;
    Ok((ys[0], Route::Numeric))
}

fn mat_vec(g: &Matrix4<f64>, y: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            *o += g[(i, j)] * yj;
        }
    }
    out
}

fn check_inputs(rates: &RateCoefficients, t: f64) -> Result<()> {
    rates.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain(format!("time must be non-negative, got {t}")));
    }
    Ok(())
}

/// Populations at time `t` from the closed-form solution.
pub fn evolve_analytic(r_init: &PopulationVector, rates: &RateCoefficients, t: f64) -> Result<Evolved> {
    check_inputs(rates, t)?;
    let (v, route) = propagate(r_init.state_order(), rates, t)?;
    Ok(Evolved { populations: renormalise(v)?, route })
}

fn renormalise(v: [f64; 4]) -> Result<PopulationVector> {
    let clamped = v.map(|x| if (-NEGATIVE_CLAMP..0.0).contains(&x) { 0.0 } else { x });
    let sum: f64 = clamped.iter().sum();
    PopulationVector::from_state_order_clamped(clamped.map(|x| x / sum))
}

/// Adaptive Runge–Kutta solution of dr/dt = G·r on a strictly increasing grid.
pub fn evolve_numeric(r_init: &PopulationVector, rates: &RateCoefficients, times: &[f64]) -> Result<Trajectory> {
    // Populations near zero need an absolute tolerance well under the clamp.
    let tol = Tolerances { absolute: 1e-14, relative: 1e-11, ..Tolerances::default() };
    evolve_numeric_with(r_init, rates, times, tol)
}

pub fn evolve_numeric_with(
    r_init: &PopulationVector,
    rates: &RateCoefficients,
    times: &[f64],
    tol: Tolerances,
) -> Result<Trajectory> {
    rates.validate()?;
    match times.first() {
        Some(t0) if *t0 >= 0.0 => {}
        Some(t0) => return Err(Error::domain(format!("first time must be non-negative, got {t0}"))),
        None => return Ok(Trajectory { times: vec![], populations: vec![] }),
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("time grid must be strictly increasing"));
    }
    let g = generator_matrix(rates);
    let ys = ode::solve(move |_, y: &[f64; 4]| mat_vec(&g, y), 0.0, r_init.state_order(), times, tol)?;
    let populations = ys.into_iter().map(renormalise).collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { times: times.to_vec(), populations })
}

/// Closed-form trajectory on a grid (numeric fallback per point when degenerate).
pub fn trajectory_analytic(r_init: &PopulationVector, rates: &RateCoefficients, times: &[f64]) -> Result<Trajectory> {
    let populations = times
        .iter()
        .map(|&t| evolve_analytic(r_init, rates, t).map(|e| e.populations))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { times: times.to_vec(), populations })
}
