//! Shot-level Monte Carlo: loading, loss as a continuous-time Markov chain,
//! and photon-count readout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, DiscreteCDF};

use crate::correlations::RateCoefficients;
use crate::dynamics::PopulationVector;
use crate::error::{Error, Result};

/// Per-shot random stream, keyed by (master seed, wait-time index, shot index).
///
/// Every (time, shot) pair maps to its own ChaCha stream, so shots can be
/// generated in any order or in parallel with identical results.
pub fn shot_stream(master_seed: u64, time_index: u32, shot_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((u64::from(time_index) << 32) | u64::from(shot_index));
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    /// s, strictly increasing
    pub wait_times: Vec<f64>,
    pub shots_per_time: u32,
    pub initial_populations: PopulationVector,
    /// Beam power, W.
    pub power: f64,
}

impl ExperimentDesign {
    pub fn validate(&self) -> Result<()> {
        if self.wait_times.is_empty() {
            return Err(Error::domain("design needs at least one wait time"));
        }
        if self.wait_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::domain("wait times must be finite and non-negative"));
        }
        if self.wait_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("wait times must be strictly increasing"));
        }
        if self.shots_per_time == 0 {
            return Err(Error::domain("shots_per_time must be at least 1"));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::domain(format!("power must be positive, got {}", self.power)));
        }
        self.initial_populations.validate()
    }
}

/// Shape of the photon-count distribution for a given atom number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadoutFamily {
    Poisson,
    /// Normal with fixed width, rounded to the nearest count and clamped at zero.
    Gaussian { std_dev: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// photons
    pub mean_background: f64,
    /// photons
    pub mean_per_atom: f64,
    pub family: ReadoutFamily,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        ReadoutModel { mean_background: 10.0, mean_per_atom: 40.0, family: ReadoutFamily::Poisson }
    }
}

impl ReadoutModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_background.is_finite() && self.mean_background >= 0.0) {
            return Err(Error::domain("mean_background must be non-negative"));
        }
        if !(self.mean_per_atom.is_finite() && self.mean_per_atom > 0.0) {
            return Err(Error::domain("mean_per_atom must be positive"));
        }
        if let ReadoutFamily::Gaussian { std_dev } = self.family {
            if !(std_dev.is_finite() && std_dev > 0.0) {
                return Err(Error::domain("gaussian readout needs a positive std_dev"));
            }
        }
        Ok(())
    }

    pub fn mean(&self, atoms: usize) -> f64 {
        self.mean_background + atoms as f64 * self.mean_per_atom
    }

    /// Photon-count pmfs for 0..=3 atoms on bins 0..=max_bin; the last bin
    /// collects everything above.
    pub fn templates(&self, max_bin: usize) -> Result<Templates> {
        self.validate()?;
        let pmf = |atoms: usize| -> Vec<f64> {
            let mu = self.mean(atoms);
            // P(count <= c) for c in 0..max_bin; the remainder goes to the overflow bin.
            let cdf: Vec<f64> = match self.family {
                ReadoutFamily::Poisson if mu == 0.0 => vec![1.0; max_bin],
                ReadoutFamily::Poisson => {
                    let d = statrs::distribution::Poisson::new(mu).expect("positive mean");
                    (0..max_bin).map(|c| d.cdf(c as u64)).collect()
                }
                ReadoutFamily::Gaussian { std_dev } => {
                    let d = statrs::distribution::Normal::new(mu, std_dev).expect("positive width");
                    (0..max_bin).map(|c| d.cdf(c as f64 + 0.5)).collect()
                }
            };
            let mut out = Vec::with_capacity(max_bin + 1);
            let mut prev = 0.0;
            for c in cdf {
                out.push((c - prev).max(0.0));
                prev = c;
            }
            out.push((1.0 - prev).max(0.0));
            let total: f64 = out.iter().sum();
            out.iter_mut().for_each(|p| *p /= total);
            out
        };
        Templates::new([pmf(0), pmf(1), pmf(2), pmf(3)])
    }

    /// Bin count that leaves at most ~1e-12 of the 3-atom distribution in the overflow bin.
    pub fn default_max_bin(&self) -> usize {
        let mu = self.mean(3);
        let sd = match self.family {
            ReadoutFamily::Poisson => mu.sqrt(),
            ReadoutFamily::Gaussian { std_dev } => std_dev,
        };
        (mu + 8.0 * sd + 10.0).ceil() as usize
    }
}

/// Normalised photon-count distributions for 0..=3 atoms over a common set of bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pmf: [Vec<f64>; 4],
}

impl Templates {
    pub fn new(pmf: [Vec<f64>; 4]) -> Result<Self> {
        let bins = pmf[0].len();
        if bins == 0 {
            return Err(Error::domain("templates need at least one bin"));
        }
        for (k, p) in pmf.iter().enumerate() {
            if p.len() != bins {
                return Err(Error::domain("templates must share the same bins"));
            }
            if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::domain(format!("template {k} has negative or non-finite entries")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!("template {k} sums to {s}, not 1")));
            }
        }
        Ok(Templates { pmf })
    }

    /// Templates from raw per-atom-number histograms, normalised here.
    pub fn from_histograms(counts: [Vec<f64>; 4]) -> Result<Self> {
        let mut pmf = counts;
        for (k, p) in pmf.iter_mut().enumerate() {
            let s: f64 = p.iter().sum();
            if !(s > 0.0) {
                return Err(Error::domain(format!("template {k} is empty")));
            }
            p.iter_mut().for_each(|x| *x /= s);
        }
        Self::new(pmf)
    }

    pub fn bins(&self) -> usize {
        self.pmf[0].len()
    }

    pub fn pmf(&self, atoms: usize) -> &[f64] {
        &self.pmf[atoms]
    }
}

/// Counts per photon number; the last bin is an overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonHistogram {
    pub counts: Vec<u64>,
}

impl PhotonHistogram {
    pub fn from_photon_counts(photons: &[u32], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::domain("histogram needs at least one bin"));
        }
        let mut counts = vec![0u64; bins];
        for &p in photons {
            counts[(p as usize).min(bins - 1)] += 1;
        }
        Ok(PhotonHistogram { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Surviving atom number after evolving `n_initial` atoms for `t` seconds.
///
/// Three atoms leave state 3 at total rate Γ₃+3Γ̃₂+3Γ₁ (to 0, 1, 2 atoms with
/// weights Γ₃, 3Γ̃₂, 3Γ₁); two atoms at Γ₂+2Γ₁ (to 0, 1); one atom at Γ₁.
pub fn simulate_shot<R: Rng + ?Sized>(rates: &RateCoefficients, n_initial: usize, t: f64, rng: &mut R) -> usize {
    let RateCoefficients { gamma1: g1, gamma2: g2, gamma2_tilde: g2t, gamma3: g3 } = *rates;
    let mut n = n_initial.min(3);
    let mut clock = 0.0;
    loop {
        let branches: &[(f64, usize)] = match n {
            3 => &[(g3, 0), (3.0 * g2t, 1), (3.0 * g1, 2)],
            2 => &[(g2, 0), (2.0 * g1, 1)],
            1 => &[(g1, 0)],
            _ => return n,
        };
        let total: f64 = branches.iter().map(|b| b.0).sum();
        if total <= 0.0 {
            return n;
        }
        // Exp(1) via inversion; 1 - u lies in (0, 1].
        let u: f64 = rng.random();
        clock += -(1.0 - u).ln() / total;
        if clock > t {
            return n;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut next = branches[branches.len() - 1].1;
        for &(w, target) in branches {
            if pick < w {
                next = target;
                break;
            }
            pick -= w;
        }
        n = next;
    }
}

/// One photon count for `atoms` atoms.
pub fn sample_photons<R: Rng + ?Sized>(readout: &ReadoutModel, atoms: usize, rng: &mut R) -> u32 {
    let mu = readout.mean(atoms);
    match readout.family {
        ReadoutFamily::Poisson => {
            if mu <= 0.0 {
                return 0;
            }
            let d = Poisson::new(mu).expect("positive mean");
            d.sample(rng) as u32
        }
        ReadoutFamily::Gaussian { std_dev } => {
            let d = Normal::new(mu, std_dev).expect("positive width");
            d.sample(rng).round().max(0.0) as u32
        }
    }
}

/// Draws an atom number from `p` (atom order).
fn sample_atoms<R: Rng + ?Sized>(p: &PopulationVector, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let w = p.atom_order();
    for (k, wk) in w.iter().enumerate() {
        acc += wk;
        if u < acc {
            return k;
        }
    }
    // Rounding left a sliver above the cumulative sum: take the last populated state.
    (0..4).rev().find(|&k| w[k] > 0.0).unwrap_or(0)
}

/// Photon counts per wait time, with everything needed to regenerate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotDataset {
    pub seed: u64,
    pub design: ExperimentDesign,
    pub readout: ReadoutModel,
    pub true_rates: Option<RateCoefficients>,
    /// `records[i][s]` is the photon count of shot `s` at `design.wait_times[i]`.
    pub records: Vec<Vec<u32>>,
}

impl ShotDataset {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        self.readout.validate()?;
        if self.records.len() != self.design.wait_times.len() {
            return Err(Error::domain(format!(
                "{} record groups for {} wait times",
                self.records.len(),
                self.design.wait_times.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.len() != self.design.shots_per_time as usize {
                return Err(Error::domain(format!(
                    "wait time {i} has {} shots, design says {}",
                    r.len(),
                    self.design.shots_per_time
                )));
            }
        }
        Ok(())
    }

    pub fn total_shots(&self) -> usize {
        self.records.iter().map(Vec::len).sum()
    }
}

/// Runs every shot of `design`: load, wait, read out.
pub fn simulate_dataset(
    design: &ExperimentDesign,
    rates: &RateCoefficients,
    readout: &ReadoutModel,
    master_seed: u64,
) -> Result<ShotDataset> {
    design.validate()?;
    rates.validate()?;
    readout.validate()?;
    let records = design
        .wait_times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (0..design.shots_per_time)
                .into_par_iter()
                .map(|s| {
                    let mut rng = shot_stream(master_seed, i as u32, s);
                    let n0 = sample_atoms(&design.initial_populations, &mut rng);
                    let n = simulate_shot(rates, n0, t, &mut rng);
                    sample_photons(readout, n, &mut rng)
                })
                .collect()
        })
        .collect();
    Ok(ShotDataset { seed: master_seed, design: design.clone(), readout: *readout, true_rates: Some(*rates), records })
}
