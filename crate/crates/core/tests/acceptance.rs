//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints one PASS/FAIL line whether or not it passes.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use fewbody_core::correlations::{
    gamma3_ground_state_1d, gamma3_stg_thermal, gamma3_thermal, predict_gamma3, thermal_correlator,
    thermal_pair_rates,
};
use fewbody_core::dynamics::{default_initial_populations, dyad_initial_populations, evolve_analytic, evolve_numeric, Route};
use fewbody_core::inference::{fit_rates, fit_scaling, occupancy_series, RateFit};
use fewbody_core::lab::{shot_stream, simulate_dataset, simulate_shot};
use fewbody_core::trap::thermal_ratio;
use fewbody_core::{
    DecompositionMethod, ExperimentDesign, FitOptions, G3Profile, MicroscopicConstants, PhysicalConstants,
    PopulationVector, RateCoefficients, ReadoutModel, ScalingPoint, ThermalCloud, TrapConfig, TrapState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const POWERS_W: [f64; 4] = [0.110, 0.140, 0.170, 0.200];
const WAIT_TIMES: [f64; 8] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0];
const C: PhysicalConstants = PhysicalConstants::RB85;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn trap_state(power: f64) -> TrapState {
    TrapState::new(&TrapConfig::default(), &C, power).unwrap()
}

fn triad_cloud(power: f64) -> ThermalCloud {
    ThermalCloud::in_trap(&trap_state(power), 3, C).unwrap()
}

// Temperature from the 5 mW anchor and axial frequency from the 110 mW anchor,
// both scaled as sqrt(P) to 110 mW.
fn criterion_1() -> Outcome {
    let cfg = TrapConfig::default();
    let got = thermal_ratio(&cfg, &C).unwrap();
    let t = 17.8e-6 * (110.0f64 / 5.0).sqrt();
    let oracle = C.k_b * t / (C.hbar * 2.0 * PI * 34e3);
    let rel = (got / 51.37 - 1.0).abs();
    let pass = rel < 0.01 && (got / oracle - 1.0).abs() < 1e-12;
    outcome(pass, format!("kT/hw_z = {got:.4} (oracle {oracle:.4}), {:.2}% from 51.37", 100.0 * rel))
}

fn gaussian_peak_density(s: &TrapState, atoms: f64) -> f64 {
    let sigma: f64 = s.frequencies.iter().map(|w| (C.k_b * s.temperature / C.atom_mass).sqrt() / w).product();
    atoms / ((2.0 * PI).powf(1.5) * sigma)
}

fn criterion_2() -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for (p, derived) in [(0.110, 0.96e14), (0.200, 1.50e14)] {
        let n0 = triad_cloud(p).peak_density() * 1e-6;
        let oracle = gaussian_peak_density(&trap_state(p), 3.0) * 1e-6;
        // The stated range carries two significant figures.
        let quoted = (n0 / 1e13).round() / 10.0;
        pass &= (0.9..=1.5).contains(&quoted);
        pass &= (n0 / derived - 1.0).abs() < 0.10;
        pass &= (n0 / oracle - 1.0).abs() < 1e-12;
        parts.push(format!("{:.0} mW: {n0:.4e} cm^-3", p * 1e3));
    }
    outcome(pass, parts.join(", "))
}

fn gaussian_power_integral(cloud: &ThermalCloud, j: i32) -> f64 {
    let w = cloud.widths();
    let v = w[0] * w[1] * w[2];
    let n = f64::from(cloud.atom_count);
    n.powi(j) * ((2.0 * PI).powf(1.5) * v).powi(1 - j) / f64::from(j).powf(1.5)
}

fn criterion_3() -> Outcome {
    let c3 = triad_cloud(0.110);
    let mut c2 = c3;
    c2.atom_count = 2;
    let c33 = thermal_correlator(&c3, 3, 3).unwrap();
    let exact = 4.0 / 3.0 * c3.density_power_integral(3).unwrap();
    let oracle = 4.0 / 3.0 * gaussian_power_integral(&c3, 3);
    let ratio = thermal_correlator(&c3, 2, 3).unwrap() / thermal_correlator(&c2, 2, 2).unwrap();
    let (g2, g2t) = thermal_pair_rates(&c3, 1e-17).unwrap();
    let pass = (c33 / exact - 1.0).abs() < 1e-14
        && (c33 / oracle - 1.0).abs() < 1e-9
        && (ratio - 3.0).abs() < 1e-12
        && g2 == g2t;
    outcome(
        pass,
        format!("C33/(4/3 int n^3) - 1 = {:.1e}, C23/C22 = {ratio:.15}, G2 == G2~: {}", c33 / exact - 1.0, g2 == g2t),
    )
}

fn criterion_4() -> Outcome {
    let mc = MicroscopicConstants::default();
    let mut pass = true;
    let mut worst_ratio = f64::INFINITY;
    for p in POWERS_W {
        let s = trap_state(p);
        let cloud = triad_cloud(p);
        let th = gamma3_thermal(&cloud, &mc).unwrap();
        let stg = gamma3_stg_thermal(&cloud, &mc, s.l_perp).unwrap();
        let one_d = gamma3_ground_state_1d(&cloud, &mc, s.l_perp, G3Profile::Local).unwrap();
        pass &= stg < one_d && one_d < th;
        worst_ratio = worst_ratio.min(th / stg);
    }
    pass &= worst_ratio >= 1e3;
    let g3 = predict_gamma3(&TrapConfig::default(), &C, &mc, 0.110, G3Profile::Local).unwrap().g3_peak;
    pass &= (1e-5..=1e-4).contains(&g3);
    outcome(pass, format!("ordering holds: {pass}, min thermal/STG = {worst_ratio:.3e}, g3(110 mW) = {g3:.3e}"))
}

fn random_rates(rng: &mut ChaCha8Rng) -> RateCoefficients {
    let mut draw = || 10f64.powf(rng.random_range(-2.0..1.0));
    RateCoefficients::new(draw(), draw(), draw(), draw()).unwrap()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let init = default_initial_populations();
    let mut sets = 0;
    let mut worst = 0.0f64;
    let mut all_closed = true;
    while sets < 100 {
        let rates = random_rates(&mut rng);
        let min = rates.as_array().into_iter().fold(f64::INFINITY, f64::min);
        let tmax = 5.0 / min;
        let times: Vec<f64> = (0..=200).map(|i| tmax * f64::from(i) / 200.0).collect();
        // Skip sets too close to a degenerate denominator.
        if evolve_analytic(&init, &rates, tmax).unwrap().route != Route::ClosedForm {
            continue;
        }
        let numeric = evolve_numeric(&init, &rates, &times).unwrap();
        for (t, num) in times.iter().zip(&numeric.populations) {
            let a = evolve_analytic(&init, &rates, *t).unwrap();
            all_closed &= a.route == Route::ClosedForm;
            for (x, y) in a.populations.state_order().iter().zip(num.state_order()) {
                worst = worst.max((x - y).abs());
            }
        }
        sets += 1;
    }
    outcome(worst < 1e-8 && all_closed, format!("sup |analytic - numeric| = {worst:.2e} over {sets} rate sets"))
}

fn draw_initial(init: &PopulationVector, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let w = init.atom_order();
    let mut acc = 0.0;
    for (k, p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    3
}

fn criterion_6() -> Outcome {
    const SHOTS: usize = 100_000;
    let init = default_initial_populations();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_z = 0.0f64;
    let mut pass = true;
    for set in 0..10u32 {
        let rates = random_rates(&mut rng);
        let t = rng.random_range(0.2..2.0) / rates.max_rate();
        let mut counts = [0u64; 4];
        for shot in 0..SHOTS as u32 {
            let mut r = shot_stream(6_000 + u64::from(set), 0, shot);
            let n0 = draw_initial(&init, &mut r);
            counts[simulate_shot(&rates, n0, t, &mut r)] += 1;
        }
        let p = evolve_analytic(&init, &rates, t).unwrap().populations.atom_order();
        for k in 0..4 {
            let freq = counts[k] as f64 / SHOTS as f64;
            // A one-count floor keeps near-empty states from demanding exact zeros.
            let se = (p[k] * (1.0 - p[k])).max(1.0 / SHOTS as f64).sqrt() / (SHOTS as f64).sqrt();
            let z = (freq - p[k]).abs() / se;
            worst_z = worst_z.max(z);
            pass &= z <= 3.0;
        }
    }
    outcome(pass, format!("10 rate sets x 1e5 shots, largest |z| = {worst_z:.2}"))
}

fn simulate_and_fit(init: PopulationVector, rates: &RateCoefficients, seed: u64, options: &FitOptions) -> RateFit {
    let design =
        ExperimentDesign { wait_times: WAIT_TIMES.to_vec(), shots_per_time: 10_000, initial_populations: init, power: 0.110 };
    let readout = ReadoutModel::default();
    let ds = simulate_dataset(&design, rates, &readout, seed).unwrap();
    let templates = readout.templates(readout.default_max_bin()).unwrap();
    let series = occupancy_series(&ds, &templates, DecompositionMethod::MaximumLikelihood).unwrap();
    fit_rates(&series, options).unwrap()
}

fn covers(value: f64, interval: Option<[f64; 2]>) -> bool {
    interval.is_some_and(|[lo, hi]| lo <= value && value <= hi)
}

fn criterion_7() -> Outcome {
    let truth = RateCoefficients::new(0.0, 0.3, 0.3, 0.5).unwrap();
    let options = FitOptions { fix_gamma1: true, ..FitOptions::default() };
    let (mut cover3, mut cover2t, mut worst) = (0, 0, 0.0f64);
    for rep in 0..50u64 {
        let fit = simulate_and_fit(default_initial_populations(), &truth, 1000 + rep, &options);
        worst = worst.max((fit.rates.gamma3 / 0.5 - 1.0).abs()).max((fit.rates.gamma2_tilde / 0.3 - 1.0).abs());
        cover3 += usize::from(covers(0.5, fit.errors.gamma3.interval));
        cover2t += usize::from(covers(0.3, fit.errors.gamma2_tilde.interval));
    }
    let pass = worst < 0.10 && cover3 >= 45 && cover2t >= 45;
    outcome(
        pass,
        format!("max rel. error {:.2}%, 95% CI coverage G3 {cover3}/50, G2~ {cover2t}/50", 100.0 * worst),
    )
}

fn criterion_8() -> Outcome {
    let omegas: Vec<f64> = POWERS_W.iter().map(|&p| trap_state(p).omega_perp()).collect();
    let law = |m: i32| -> Vec<f64> {
        let e = 2.0 * f64::from(m) + 1.5;
        omegas.iter().map(|w| 0.3 * (w / omegas[0]).powf(e)).collect()
    };
    let quartic = law(2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut hits = 0;
    for _ in 0..100 {
        let points: Vec<ScalingPoint> = omegas
            .iter()
            .zip(&quartic)
            .map(|(&w, &g)| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                ScalingPoint { omega_perp: w, gamma2: g * (1.0 + 0.1 * noise), sigma: 0.1 * g }
            })
            .collect();
        hits += usize::from(fit_scaling(&points, &[0, 1, 2]).unwrap().selected_m == 2);
    }
    let mut exact = true;
    let mut worst_rss = 0.0f64;
    for m in 0..3 {
        let points: Vec<ScalingPoint> = omegas
            .iter()
            .zip(law(m))
            .map(|(&w, g)| ScalingPoint { omega_perp: w, gamma2: g, sigma: 0.1 * g })
            .collect();
        let fit = fit_scaling(&points, &[0, 1, 2]).unwrap();
        let rss = fit.candidates.iter().find(|c| c.m == fit.selected_m).unwrap().weighted_rss;
        worst_rss = worst_rss.max(rss);
        exact &= fit.selected_m == m as u32 && rss < 1e-20;
    }
    outcome(
        hits >= 95 && exact,
        format!("m=2 selected in {hits}/100 noisy replicates; noiseless self-selection {exact}, max rss {worst_rss:.1e}"),
    )
}

// One matched pair agrees only with ~95% probability, so the check is
// replicated like the coverage criterion. Pair k uses seeds 9001 + 2k, 9002 + 2k.
fn criterion_9() -> Outcome {
    let truth = RateCoefficients::new(0.0, 0.3, 0.3, 0.5).unwrap();
    let tied = FitOptions { fix_gamma1: true, tie_gamma2: true, initials: None };
    let free = FitOptions { fix_gamma1: true, ..FitOptions::default() };
    let mut agree = 0;
    let mut first = String::new();
    for k in 0..50u64 {
        let triad = simulate_and_fit(default_initial_populations(), &truth, 9_001 + 2 * k, &tied);
        let dyad = simulate_and_fit(dyad_initial_populations(), &truth, 9_002 + 2 * k, &free);
        let (a, b) = (&triad.errors.gamma2, &dyad.errors.gamma2);
        let (Some(h1), Some(h2)) = (a.half_width(), b.half_width()) else {
            return outcome(false, format!("pair {k}: missing interval on a Gamma2 estimate"));
        };
        let diff = (a.value - b.value).abs();
        let allowed = h1.hypot(h2);
        agree += usize::from(diff <= allowed);
        if k == 0 {
            first = format!("pair 0: triad {:.4}, dyad {:.4}, |diff| {diff:.4} vs {allowed:.4}", a.value, b.value);
        }
    }
    outcome(agree >= 45, format!("G2 agreement within combined 95% CI in {agree}/50 matched pairs; {first}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("temperature/frequency consistency", criterion_1),
        ("peak density", criterion_2),
        ("correlator prefactors", criterion_3),
        ("loss-model ordering and g3", criterion_4),
        ("analytic/numeric equivalence", criterion_5),
        ("CTMC/ODE agreement", criterion_6),
        ("round-trip recovery and coverage", criterion_7),
        ("scaling-law selection", criterion_8),
        ("dyad/triad consistency", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {name}: {} ({}) [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
