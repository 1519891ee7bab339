//! From photon histograms to occupation probabilities, rate coefficients and
//! the intensity power law of pair loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correlations::{scaling_exponent, RateCoefficients};
use crate::dynamics::{closed_form, generator_matrix, PopulationVector};
use crate::error::{Error, Result};
use crate::lab::{PhotonHistogram, ShotDataset, Templates};

/// Templates closer than this in total-variation distance are treated as identical.
const IDENTICAL_TEMPLATES: f64 = 1e-12;
const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionMethod {
    #[default]
    MaximumLikelihood,
    LeastSquares,
}

/// Estimated probabilities of 0..=3 atoms behind one histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEstimate {
    /// Atom order (0, 1, 2, 3).
    pub weights: [f64; 4],
    pub standard_errors: [f64; 4],
    pub shots: u64,
    /// Set when two or more templates coincide; see `merged`.
    pub degenerate: bool,
    /// Groups of atom numbers whose templates coincide. Each member carries an
    /// equal share of the group weight (and of its uncertainty).
    pub merged: Vec<Vec<usize>>,
    /// Full covariance of `weights`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<[[f64; 4]; 4]>,
}

impl OccupancyEstimate {
    pub fn populations(&self) -> Result<PopulationVector> {
        PopulationVector::from_atom_order(self.weights)
    }
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Mixture weights of `templates` that best explain `hist`.
pub fn decompose_histogram(
    hist: &PhotonHistogram,
    templates: &Templates,
    method: DecompositionMethod,
) -> Result<OccupancyEstimate> {
    if hist.counts.len() != templates.bins() {
        return Err(Error::domain(format!(
            "histogram has {} bins, templates have {}",
            hist.counts.len(),
            templates.bins()
        )));
    }
    let shots = hist.total();
    if shots == 0 {
        return Err(Error::domain("histogram is empty"));
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in 0..4 {
        match groups
            .iter_mut()
            .find(|g| total_variation(templates.pmf(g[0]), templates.pmf(k)) < IDENTICAL_TEMPLATES)
        {
            Some(g) => g.push(k),
            None => groups.push(vec![k]),
        }
    }
    let basis: Vec<&[f64]> = groups.iter().map(|g| templates.pmf(g[0])).collect();
    let h: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();

    let w = match (groups.len(), method) {
        (1, _) => vec![1.0],
        (_, DecompositionMethod::MaximumLikelihood) => mixture_em(&h, &basis),
        (_, DecompositionMethod::LeastSquares) => mixture_least_squares(&h, &basis)?,
    };
    let cov = mixture_covariance(&h, &basis, &w);

    let mut weights = [0.0; 4];
    let mut covariance = [[0.0; 4]; 4];
    for (a, ga) in groups.iter().enumerate() {
        for &k in ga {
            weights[k] = w[a] / ga.len() as f64;
            for (b, gb) in groups.iter().enumerate() {
                for &l in gb {
                    covariance[k][l] = cov[(a, b)] / (ga.len() * gb.len()) as f64;
                }
            }
        }
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|x| *x /= sum);
    let standard_errors = [0, 1, 2, 3].map(|k| covariance[k][k].max(0.0).sqrt());
    let merged: Vec<Vec<usize>> = groups.into_iter().filter(|g| g.len() > 1).collect();
    Ok(OccupancyEstimate {
        weights,
        standard_errors,
        shots,
        degenerate: !merged.is_empty(),
        merged,
        covariance: Some(covariance),
    })
}

fn mixture_density(basis: &[&[f64]], w: &[f64], c: usize) -> f64 {
    basis.iter().zip(w).map(|(t, wk)| wk * t[c]).sum::<f64>().max(DENSITY_FLOOR)
}

/// Expectation-maximisation for multinomial mixture weights.
fn mixture_em(h: &[f64], basis: &[&[f64]]) -> Vec<f64> {
    let n: f64 = h.iter().sum();
    let g = basis.len();
    let mut w = vec![1.0 / g as f64; g];
    for _ in 0..100_000 {
        let mut next = vec![0.0; g];
        for (c, &hc) in h.iter().enumerate() {
            if hc == 0.0 {
                continue;
            }
            let f = mixture_density(basis, &w, c);
            for k in 0..g {
                next[k] += hc * w[k] * basis[k][c] / f;
            }
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s.max(n * DENSITY_FLOOR));
        let change = w.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        if change < 1e-14 {
            break;
        }
    }
    w
}

/// Least squares against the empirical pmf on the simplex: the best of the
/// equality-constrained solutions over every support that stays non-negative.
fn mixture_least_squares(h: &[f64], basis: &[&[f64]]) -> Result<Vec<f64>> {
    let n: f64 = h.iter().sum();
    let p: Vec<f64> = h.iter().map(|x| x / n).collect();
    let g = basis.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << g) {
        let support: Vec<usize> = (0..g).filter(|k| mask & (1 << k) != 0).collect();
        let s = support.len();
        // KKT system [TᵀT 1; 1ᵀ 0] [w; μ] = [Tᵀp; 1]
        let mut a = DMatrix::<f64>::zeros(s + 1, s + 1);
        let mut b = DVector::<f64>::zeros(s + 1);
        for (i, &ki) in support.iter().enumerate() {
            for (j, &kj) in support.iter().enumerate() {
                a[(i, j)] = basis[ki].iter().zip(basis[kj]).map(|(x, y)| x * y).sum();
            }
            a[(i, s)] = 1.0;
            a[(s, i)] = 1.0;
            b[i] = basis[ki].iter().zip(&p).map(|(x, y)| x * y).sum();
        }
        b[s] = 1.0;
        let Some(sol) = a.lu().solve(&b) else { continue };
        if (0..s).any(|i| !sol[i].is_finite() || sol[i] < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; g];
        for (i, &k) in support.iter().enumerate() {
            w[k] = sol[i].max(0.0);
        }
        let rss: f64 = (0..p.len())
            .map(|c| (p[c] - basis.iter().zip(&w).map(|(t, wk)| wk * t[c]).sum::<f64>()).powi(2))
            .sum();
        if best.as_ref().is_none_or(|(r, _)| rss < *r) {
            best = Some((rss, w));
        }
    }
    let (_, mut w) = best.ok_or_else(|| Error::domain("no feasible least-squares decomposition"))?;
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    Ok(w)
}

/// Covariance of the weights from the observed information of the
/// multinomial likelihood, parametrised by all weights except the largest.
fn mixture_covariance(h: &[f64], basis: &[&[f64]], w: &[f64]) -> DMatrix<f64> {
    let g = basis.len();
    let n: f64 = h.iter().sum();
    if g == 1 {
        return DMatrix::zeros(1, 1);
    }
    let reference = (0..g).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    let free: Vec<usize> = (0..g).filter(|&k| k != reference).collect();
    let mut info = DMatrix::<f64>::zeros(g - 1, g - 1);
    for (c, &hc) in h.iter().enumerate() {
        if hc == 0.0 {
            continue;
        }
        let f2 = mixture_density(basis, w, c).powi(2);
        let d: Vec<f64> = free.iter().map(|&k| basis[k][c] - basis[reference][c]).collect();
        for i in 0..g - 1 {
            for j in 0..g - 1 {
                info[(i, j)] += hc * d[i] * d[j] / f2;
            }
        }
    }
    let inv = info.try_inverse().filter(|m| (0..g - 1).all(|i| m[(i, i)].is_finite() && m[(i, i)] >= 0.0));
    let Some(inv) = inv else {
        // Multinomial covariance of directly observed categories.
        return DMatrix::from_fn(g, g, |a, b| if a == b { w[a] * (1.0 - w[a]) / n } else { -w[a] * w[b] / n });
    };
    // The reference weight is 1 − Σ others.
    let mut cov = DMatrix::zeros(g, g);
    for (i, &a) in free.iter().enumerate() {
        for (j, &b) in free.iter().enumerate() {
            cov[(a, b)] = inv[(i, j)];
        }
        let row: f64 = (0..g - 1).map(|j| inv[(i, j)]).sum();
        cov[(a, reference)] = -row;
        cov[(reference, a)] = -row;
    }
    cov[(reference, reference)] = inv.sum();
    cov
}

/// Decomposes every wait time of a dataset.
pub fn occupancy_series(
    dataset: &ShotDataset,
    templates: &Templates,
    method: DecompositionMethod,
) -> Result<Vec<Observation>> {
    dataset
        .design
        .wait_times
        .iter()
        .zip(&dataset.records)
        .map(|(&time, photons)| {
            let hist = PhotonHistogram::from_photon_counts(photons, templates.bins())?;
            Ok(Observation { time, occupancy: decompose_histogram(&hist, templates, method)? })
        })
        .collect()
}

/// One time point of an occupancy series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// s
    pub time: f64,
    pub occupancy: OccupancyEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    /// Hold Γ₁ at zero.
    pub fix_gamma1: bool,
    /// Force Γ̃₂ = Γ₂.
    pub tie_gamma2: bool,
    /// Known initial populations; fitted when absent.
    pub initials: Option<PopulationVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterStatus {
    Free,
    Fixed,
    /// Γ̃₂ tied to Γ₂.
    Tied,
    /// The data carry no information on this rate (e.g. Γ₃ without triads).
    Unidentifiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub value: f64,
    pub status: ParameterStatus,
    pub std_error: Option<f64>,
    /// 95 % interval, lower end clamped at zero.
    pub interval: Option<[f64; 2]>,
}

impl ParameterEstimate {
    pub fn identifiable(&self) -> bool {
        self.status != ParameterStatus::Unidentifiable
    }

    /// Half-width of the 95 % interval before clamping.
    pub fn half_width(&self) -> Option<f64> {
        self.std_error.map(|s| Z95 * s)
    }
}

/// Per-rate estimates in the order (Γ₁, Γ₂, Γ̃₂, Γ₃).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateErrors {
    pub gamma1: ParameterEstimate,
    pub gamma2: ParameterEstimate,
    pub gamma2_tilde: ParameterEstimate,
    pub gamma3: ParameterEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rates: RateCoefficients,
    pub fitted_initials: PopulationVector,
    pub errors: RateErrors,
    /// Atom order; absent when the initials were supplied.
    pub initial_std_errors: Option<[f64; 4]>,
    /// √χ² of the weighted residuals.
    pub residual_norm: f64,
    pub degrees_of_freedom: usize,
    pub options: FitOptions,
}

const Z95: f64 = 1.959_963_984_540_054;
const START_GRID: [f64; 3] = [1e-2, 1.0, 1e2];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Param(usize),
    Zero,
    SameAs(usize),
}

/// Maps the parameter vector onto rates and initial populations.
struct Layout {
    // Γ₁, Γ₂, Γ̃₂, Γ₃
    slots: [Slot; 4],
    n_rates: usize,
    initials: Option<[f64; 4]>,
}

impl Layout {
    fn new(options: &FitOptions) -> Self {
        let mut next = 0;
        let mut take = || {
            next += 1;
            Slot::Param(next - 1)
        };
        let g3 = take();
        let g2 = take();
        let g2t = if options.tie_gamma2 { g2 } else { take() };
        let g1 = if options.fix_gamma1 { Slot::Zero } else { take() };
        let g2t = match (options.tie_gamma2, g2) {
            (true, Slot::Param(i)) => Slot::SameAs(i),
            _ => g2t,
        };
        Layout { slots: [g1, g2, g2t, g3], n_rates: next, initials: options.initials.map(|p| p.state_order()) }
    }

    fn n_params(&self) -> usize {
        self.n_rates + if self.initials.is_some() { 0 } else { 4 }
    }

    fn rates(&self, x: &[f64]) -> RateCoefficients {
        let v = self.slots.map(|s| match s {
            Slot::Param(i) | Slot::SameAs(i) => x[i],
            Slot::Zero => 0.0,
        });
        RateCoefficients { gamma1: v[0], gamma2: v[1], gamma2_tilde: v[2], gamma3: v[3] }
    }

    /// Unnormalised initial vector in state order.
    fn initials(&self, x: &[f64]) -> [f64; 4] {
        self.initials.unwrap_or_else(|| [x[self.n_rates], x[self.n_rates + 1], x[self.n_rates + 2], x[self.n_rates + 3]])
    }
}

struct Problem {
    layout: Layout,
    times: Vec<f64>,
    // atom order per time
    data: Vec<[f64; 4]>,
    sigma: Vec<[f64; 4]>,
    covariance: Vec<Option<[[f64; 4]; 4]>>,
}

impl Problem {
    fn residuals(&self, x: &[f64]) -> Option<DVector<f64>> {
        let rates = self.layout.rates(x);
        let u = self.layout.initials(x);
        let mut r = DVector::zeros(4 * self.times.len());
        for (i, &t) in self.times.iter().enumerate() {
            let m = closed_form(u, &rates, t).unwrap_or_else(|| {
                // Coincident decay constants: exact propagator exp(G·t).
                let v = (generator_matrix(&rates) * t).exp() * nalgebra::Vector4::from(u);
                [v[0], v[1], v[2], v[3]]
            });
            // state order (3, 2, 1, 0) → atom order
            let m = [m[3], m[2], m[1], m[0]];
            for k in 0..4 {
                r[4 * i + k] = (m[k] - self.data[i][k]) / self.sigma[i][k];
            }
        }
        r.iter().all(|v| v.is_finite()).then_some(r)
    }
}

struct LmOutcome {
    x: Vec<f64>,
    cost: f64,
    converged: bool,
}

/// Jacobian by finite differences; one-sided (second order) next to the bound at zero.
fn jacobian<F: Fn(&[f64]) -> Option<DVector<f64>>>(f: &F, x: &[f64], r0: &DVector<f64>, typical: &[f64]) -> Option<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(typical[j]);
        let col = if x[j] - h >= 0.0 {
            xp[j] = x[j] + h;
            let up = f(&xp)?;
            xp[j] = x[j] - h;
            let down = f(&xp)?;
            (up - down) / (2.0 * h)
        } else {
            xp[j] = x[j] + h;
            let one = f(&xp)?;
            xp[j] = x[j] + 2.0 * h;
            let two = f(&xp)?;
            (one * 4.0 - two - r0 * 3.0) / (2.0 * h)
        };
        xp[j] = x[j];
        jac.set_column(j, &col);
    }
    Some(jac)
}

/// Levenberg–Marquardt on x ≥ 0: steps are projected onto the box and
/// variables pinned at zero with an outward gradient are frozen.
fn levenberg_marquardt<F: Fn(&[f64]) -> Option<DVector<f64>>>(f: &F, x0: &[f64], typical: &[f64]) -> LmOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let Some(mut r) = f(&x) else {
        return LmOutcome { x, cost: f64::INFINITY, converged: false };
    };
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let Some(jac) = jacobian(f, &x, &r, typical) else { break };
        let grad = jac.tr_mul(&r);
        let free: Vec<usize> = (0..n).filter(|&j| !(x[j] <= 0.0 && grad[j] > 0.0)).collect();
        if free.is_empty() {
            return LmOutcome { x, cost, converged: true };
        }
        let jtj = jac.tr_mul(&jac);
        let m = free.len();
        let diag_floor = 1e-12 * free.iter().map(|&j| jtj[(j, j)]).fold(0.0, f64::max).max(1e-300);
        let mut improved = false;
        let mut tiny_step = false;
        while lambda < 1e16 {
            let mut a = DMatrix::zeros(m, m);
            let mut b = DVector::zeros(m);
            for (p, &i) in free.iter().enumerate() {
                for (q, &j) in free.iter().enumerate() {
                    a[(p, q)] = jtj[(i, j)];
                }
                a[(p, p)] += lambda * jtj[(i, i)].max(diag_floor);
                b[p] = -grad[i];
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&b)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = x.clone();
            for (p, &j) in free.iter().enumerate() {
                trial[j] = (x[j] + delta[p]).max(0.0);
            }
            tiny_step = (0..n).all(|j| (trial[j] - x[j]).abs() <= 1e-13 * (x[j].abs() + 1e-6 * typical[j]));
            match f(&trial) {
                Some(rt) if 0.5 * rt.norm_squared() < cost => {
                    cost = 0.5 * rt.norm_squared();
                    r = rt;
                    x = trial;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    break;
                }
                _ => lambda *= 10.0,
            }
            if tiny_step {
                break;
            }
        }
        if !improved || tiny_step {
            // Nothing left to gain in the cost at working precision.
            if cost.is_finite() {
                polish(f, &mut x, &mut r, &mut cost, typical);
            }
            return LmOutcome { x, cost, converged: cost.is_finite() };
        }
    }
    LmOutcome { x, cost, converged: false }
}

/// Undamped Gauss–Newton steps from a converged point. Near the minimum the
/// cost is flat to rounding while the normal equations still pin the
/// parameters, so steps are accepted unless the cost clearly rises.
fn polish<F: Fn(&[f64]) -> Option<DVector<f64>>>(
    f: &F,
    x: &mut Vec<f64>,
    r: &mut DVector<f64>,
    cost: &mut f64,
    typical: &[f64],
) {
    for _ in 0..5 {
        let Some(jac) = jacobian(f, x, r, typical) else { return };
        let grad = jac.tr_mul(r);
        let free: Vec<usize> = (0..x.len()).filter(|&j| !(x[j] <= 0.0 && grad[j] > 0.0)).collect();
        let sub = DMatrix::from_fn(jac.nrows(), free.len(), |i, q| jac[(i, free[q])]);
        let Some(delta) = sub.tr_mul(&sub).cholesky().map(|c| c.solve(&(-sub.tr_mul(r)))) else { return };
        let mut trial = x.clone();
        for (p, &j) in free.iter().enumerate() {
            trial[j] = (x[j] + delta[p]).max(0.0);
        }
        let Some(rt) = f(&trial) else { return };
        let ct = 0.5 * rt.norm_squared();
        if ct > *cost * (1.0 + 1e-10) + 1e-300 {
            return;
        }
        let tiny = (0..x.len()).all(|j| (trial[j] - x[j]).abs() <= 1e-14 * (x[j].abs() + 1e-6 * typical[j]));
        *x = trial;
        *r = rt;
        *cost = ct;
        if tiny {
            return;
        }
    }
}

/// Weighted least-squares fit of the population model to an occupancy series.
pub fn fit_rates(series: &[Observation], options: &FitOptions) -> Result<RateFit> {
    if let Some(p) = &options.initials {
        p.validate()?;
    }
    let mut times: Vec<f64> = series.iter().map(|o| o.time).collect();
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::domain("observation times must be finite and non-negative"));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.len() < 2 {
        return Err(Error::domain("need at least two distinct wait times"));
    }
    let layout = Layout::new(options);
    let n_params = layout.n_params();
    let n_data = 4 * series.len();
    if n_data <= n_params {
        return Err(Error::domain(format!("{n_data} data points cannot constrain {n_params} parameters")));
    }
    let t_max = times[times.len() - 1];
    let rate_scale = 1.0 / t_max;

    let data: Vec<[f64; 4]> = series.iter().map(|o| o.occupancy.weights).collect();
    let sigma: Vec<[f64; 4]> = series
        .iter()
        .map(|o| {
            if o.occupancy.shots == 0 {
                return [1.0; 4];
            }
            let floor = 1.0 / o.occupancy.shots as f64;
            o.occupancy.standard_errors.map(|s| s.max(floor))
        })
        .collect();
    let problem = Problem { layout, times: series.iter().map(|o| o.time).collect(), data, sigma, covariance: series.iter().map(|o| o.occupancy.covariance).collect() };
    let f = |x: &[f64]| problem.residuals(x);

    let n_rates = problem.layout.n_rates;
    let mut typical = vec![rate_scale; n_rates];
    typical.extend(std::iter::repeat_n(1.0, n_params - n_rates));
    // First observation (earliest time) seeds the initial populations.
    let first = series
        .iter()
        .min_by(|a, b| a.time.total_cmp(&b.time))
        .map(|o| o.occupancy.weights)
        .unwrap_or([0.25; 4]);
    let u0 = [first[3], first[2], first[1], first[0]];

    let mut best: Option<LmOutcome> = None;
    let mut best_any = f64::INFINITY;
    for start in 0..START_GRID.len().pow(n_rates as u32) {
        let mut x0 = Vec::with_capacity(n_params);
        let mut code = start;
        let mut digits = vec![0; n_rates];
        for d in digits.iter_mut().rev() {
            *d = code % START_GRID.len();
            code /= START_GRID.len();
        }
        x0.extend(digits.iter().map(|&d| START_GRID[d]));
        if problem.layout.initials.is_none() {
            x0.extend(u0);
        }
        let out = levenberg_marquardt(&f, &x0, &typical);
        best_any = best_any.min(out.cost);
        if out.converged && best.as_ref().is_none_or(|b| out.cost < b.cost) {
            best = Some(out);
        }
    }
    let best = best.ok_or_else(|| Error::FitFailure {
        reason: "no start converged".into(),
        best_residual: (2.0 * best_any).sqrt(),
    })?;
    summarise(&problem, &f, best, &typical, rate_scale, options, n_data - n_params)
}

fn summarise<F: Fn(&[f64]) -> Option<DVector<f64>>>(
    problem: &Problem,
    f: &F,
    best: LmOutcome,
    typical: &[f64],
    rate_scale: f64,
    options: &FitOptions,
    dof: usize,
) -> Result<RateFit> {
    let x = &best.x;
    let layout = &problem.layout;
    let r = f(x).ok_or_else(|| Error::FitFailure { reason: "model failed at the optimum".into(), best_residual: f64::NAN })?;
    let jac = jacobian(f, x, &r, typical)
        .ok_or_else(|| Error::FitFailure { reason: "model failed near the optimum".into(), best_residual: r.norm() })?;
    let chi2 = r.norm_squared();

    // A rate is identifiable when moving it by one typical rate changes χ by at least one.
    let identifiable: Vec<bool> = (0..x.len())
        .map(|j| j >= layout.n_rates || jac.column(j).norm() * rate_scale >= 1.0)
        .collect();
    let kept: Vec<usize> = (0..x.len()).filter(|&j| identifiable[j]).collect();
    let sub = DMatrix::from_fn(jac.nrows(), kept.len(), |i, q| jac[(i, kept[q])]);
    let jtj = sub.tr_mul(&sub);
    let inv = match jtj.clone().try_inverse() {
        Some(m) => m,
        None => jtj.pseudo_inverse(1e-14).map_err(|e| Error::domain(e.to_string()))?,
    };
    let cov = if problem.covariance.iter().all(Option::is_some) {
        // Sandwich form: the weights are diagonal but the occupancy errors
        // at each time are correlated (they sum to zero).
        let mut meat = DMatrix::zeros(kept.len(), kept.len());
        for (i, c) in problem.covariance.iter().flatten().enumerate() {
            let rows = sub.rows(4 * i, 4);
            let s = DMatrix::from_fn(4, 4, |k, l| c[k][l] / (problem.sigma[i][k] * problem.sigma[i][l]));
            meat += rows.transpose() * s * rows;
        }
        &inv * meat * &inv
    } else {
        inv * (chi2 / dof as f64)
    };
    let mut se = vec![None; x.len()];
    for (q, &j) in kept.iter().enumerate() {
        se[j] = Some(cov[(q, q)].max(0.0).sqrt());
    }

    let rates = layout.rates(x);
    let estimate = |slot: Slot, value: f64| -> ParameterEstimate {
        let (status, idx) = match slot {
            Slot::Zero => (ParameterStatus::Fixed, None),
            Slot::SameAs(i) => (ParameterStatus::Tied, Some(i)),
            Slot::Param(i) if !identifiable[i] => (ParameterStatus::Unidentifiable, None),
            Slot::Param(i) => (ParameterStatus::Free, Some(i)),
        };
        let std_error = match status {
            ParameterStatus::Fixed => Some(0.0),
            _ => idx.and_then(|i| se[i]),
        };
        let interval = std_error.map(|s| [(value - Z95 * s).max(0.0), value + Z95 * s]);
        ParameterEstimate { value, status, std_error, interval }
    };
    let errors = RateErrors {
        gamma1: estimate(layout.slots[0], rates.gamma1),
        gamma2: estimate(layout.slots[1], rates.gamma2),
        gamma2_tilde: estimate(layout.slots[2], rates.gamma2_tilde),
        gamma3: estimate(layout.slots[3], rates.gamma3),
    };

    let u = layout.initials(x);
    let total: f64 = u.iter().sum();
    if !(total > 0.0) {
        return Err(Error::FitFailure { reason: "fitted initial populations vanish".into(), best_residual: chi2.sqrt() });
    }
    let fitted_initials = PopulationVector::from_state_order_clamped(u.map(|v| v / total))?;
    let initial_std_errors = layout.initials.is_none().then(|| {
        let s = |k: usize| se[layout.n_rates + k].unwrap_or(0.0) / total;
        // parameters are stored in state order
        [s(3), s(2), s(1), s(0)]
    });
    Ok(RateFit {
        rates,
        fitted_initials,
        errors,
        initial_std_errors,
        residual_norm: chi2.sqrt(),
        degrees_of_freedom: dof,
        options: *options,
    })
}

/// (ω⊥, Γ₂ ± σ) at one beam power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    /// rad/s
    pub omega_perp: f64,
    /// s⁻¹
    pub gamma2: f64,
    /// s⁻¹
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCandidate {
    pub m: u32,
    /// 2m + 3/2
    pub exponent: f64,
    /// s⁻¹·(rad/s)^−exponent
    pub amplitude: f64,
    pub weighted_rss: f64,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub selected_m: u32,
    pub amplitude: f64,
    pub exponent: f64,
    pub candidates: Vec<ScalingCandidate>,
}

/// Fits Γ₂ = A·ω⊥^(2m+3/2) for each candidate m and keeps the smallest
/// weighted residual sum (ties go to the smaller m).
pub fn fit_scaling(points: &[ScalingPoint], m_candidates: &[u32]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(Error::domain(format!("need at least two points, got {}", points.len())));
    }
    if m_candidates.is_empty() {
        return Err(Error::domain("no candidate exponents"));
    }
    for p in points {
        if !(p.omega_perp.is_finite() && p.omega_perp > 0.0) {
            return Err(Error::domain("trap frequencies must be positive"));
        }
        if !(p.sigma.is_finite() && p.sigma > 0.0) {
            return Err(Error::domain("uncertainties must be positive"));
        }
        if !p.gamma2.is_finite() {
            return Err(Error::domain("rates must be finite"));
        }
    }
    let mut omegas: Vec<f64> = points.iter().map(|p| p.omega_perp).collect();
    omegas.sort_by(f64::total_cmp);
    if omegas.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::domain("trap frequencies must be distinct"));
    }
    // Work in ω/ω_ref to keep ω^5.5 well scaled.
    let omega_ref = omegas[omegas.len() - 1];
    let mut candidates = Vec::with_capacity(m_candidates.len());
    for &m in m_candidates {
        let e = scaling_exponent(m)?;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for p in points {
            let w = p.sigma.powi(-2);
            let x = (p.omega_perp / omega_ref).powf(e);
            sxy += w * x * p.gamma2;
            sxx += w * x * x;
        }
        let a = sxy / sxx;
        let rss: f64 = points
            .iter()
            .map(|p| ((p.gamma2 - a * (p.omega_perp / omega_ref).powf(e)) / p.sigma).powi(2))
            .sum();
        candidates.push(ScalingCandidate {
            m,
            exponent: e,
            amplitude: a / omega_ref.powf(e),
            weighted_rss: rss,
            aic: rss + 2.0,
        });
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.weighted_rss.total_cmp(&b.weighted_rss).then(a.m.cmp(&b.m)))
        .copied()
        .expect("non-empty");
    Ok(ScalingFit { selected_m: best.m, amplitude: best.amplitude, exponent: best.exponent, candidates })
}
