use fewbody_core::dynamics::{default_initial_populations, evolve_analytic, evolve_numeric};
use fewbody_core::inference::{fit_rates, occupancy_series};
use fewbody_core::io::{read_dataset, read_fit_report, write_dataset, write_json, FitReport};
use fewbody_core::lab::simulate_dataset;
use fewbody_core::{
    DecompositionMethod, ExperimentDesign, FitOptions, PopulationVector, RateCoefficients, ReadoutModel, RunConfig,
};
use proptest::prelude::*;

fn design(wait_times: Vec<f64>, shots: u32) -> ExperimentDesign {
    ExperimentDesign { wait_times, shots_per_time: shots, initial_populations: default_initial_populations(), power: 0.11 }
}

#[test]
fn dataset_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rates = RateCoefficients::new(0.05, 0.3, 0.3, 0.5).unwrap();
    // Wait times that do not print exactly in short decimal form.
    let d = design(vec![0.0, 0.1 + 0.2, 1.0 / 3.0, 3e-7 * 7.0 + 1.0], 40);
    let ds = simulate_dataset(&d, &rates, &ReadoutModel::default(), 17).unwrap();
    let env = dir.path().join("ds.json");
    write_dataset(&ds, &env).unwrap();
    let back = read_dataset(&env).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn default_config_drives_a_fit_and_report() {
    let mut cfg = RunConfig::from_json_str(r#"{"rates_per_s": {"gamma1": 0, "gamma2": 0.3, "gamma2_tilde": 0.3, "gamma3": 0.5}}"#)
        .unwrap();
    cfg.design.shots_per_time = 4000;
    cfg.validate().unwrap();
    let readout = cfg.readout;
    let ds = simulate_dataset(&cfg.experiment_design().unwrap(), &cfg.rates_per_s.unwrap(), &readout, 3).unwrap();
    let templates = readout.templates(readout.default_max_bin()).unwrap();
    let series = occupancy_series(&ds, &templates, DecompositionMethod::LeastSquares).unwrap();
    let fit = fit_rates(&series, &FitOptions { fix_gamma1: true, ..FitOptions::default() }).unwrap();
    assert!((fit.rates.gamma3 / 0.5 - 1.0).abs() < 0.15, "{:?}", fit.rates);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.json");
    let report = FitReport::new(&fit, "00", 110.0, 210.0);
    write_json(&report, &path).unwrap();
    assert_eq!(read_fit_report(&path).unwrap(), report);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn populations_stay_on_the_simplex(
        g in prop::array::uniform4(0.0f64..5.0),
        w in prop::array::uniform4(0.01f64..1.0),
        t in 0.0f64..20.0,
    ) {
        let sum: f64 = w.iter().sum();
        let init = PopulationVector::from_atom_order(w.map(|x| x / sum)).unwrap();
        let rates = RateCoefficients::new(g[0], g[1], g[2], g[3]).unwrap();
        let a = evolve_analytic(&init, &rates, t).unwrap().populations.atom_order();
        prop_assert!(a.iter().all(|x| *x >= 0.0));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Atoms are only ever lost: the mean count cannot grow.
        let mean = |v: [f64; 4]| v.iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>();
        prop_assert!(mean(a) <= mean(init.atom_order()) + 1e-9);
        if t > 0.0 {
            let n = evolve_numeric(&init, &rates, &[0.0, t]).unwrap().populations[1].atom_order();
            for k in 0..4 {
                prop_assert!((a[k] - n[k]).abs() < 1e-8);
            }
        }
    }
}
