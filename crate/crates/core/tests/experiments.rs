mod common;

use common::{every_field, rng};
use geoflow::experiments::{
    gen_flowmap_pairs, gen_planar_classification, gen_regression, gronwall_check, pendulum_energy, reference_flow, run_experiment,
    Experiment, ExperimentConfig, RegressionTarget, System,
};
use geoflow::linalg;
use geoflow::train::Targets;

#[test]
fn planar_data_examples() {
    let d = gen_planar_classification(1, 0.0, 0).unwrap();
    assert_eq!(d.inputs.len(), 2);
    let Targets::Labels(l) = &d.targets else { panic!("labels") };
    assert_ne!(l[0], l[1]);
    let a = gen_planar_classification(50, 0.2, 9).unwrap();
    assert_eq!(a, gen_planar_classification(50, 0.2, 9).unwrap());
    assert!(a.train.iter().all(|i| !a.test.contains(i)));
    assert_eq!(a.train.len() + a.test.len(), 100);
}

#[test]
fn regression_targets() {
    assert_eq!(RegressionTarget::F.eval(&[0.0]), 0.0);
    assert!((RegressionTarget::F.eval(&[1.0]) - 2.841470984807897).abs() < 1e-12);
    assert_eq!(RegressionTarget::G.eval(&[3.0, 4.0]) / 5.0, 1.0);
    let d = gen_regression(RegressionTarget::F, 40, 0.25, 1).unwrap();
    assert!(d.inputs.iter().all(|x| (-2.0..=2.0).contains(&x[0])));
}

#[test]
fn reference_dynamics() {
    let y0 = [0.7, 0.0, 0.3];
    assert_eq!(reference_flow(System::Sir, 1.0, &y0), y0.to_vec());
    let d = gen_flowmap_pairs(System::Sir, 1.0, 30, &[], 0.0, 2).unwrap();
    let Targets::Values(v) = &d.targets else { panic!("values") };
    for (x, y) in d.inputs.iter().zip(v) {
        assert!((x.iter().sum::<f64>() - y.iter().sum::<f64>()).abs() <= 1e-10);
    }
    let mut r = rng(3);
    for _ in 0..5 {
        let x = linalg::scaled(&linalg::randn(&mut r, 2), 1.0);
        let mut y = x.clone();
        for _ in 0..10 {
            y = reference_flow(System::X2, 0.1, &y);
        }
        assert!((pendulum_energy(&x) - pendulum_energy(&y)).abs() <= 1e-8);
    }
    assert!(gen_flowmap_pairs(System::X2, 0.0, 3, &System::X2.default_box(), 0.0, 0).is_err());
}

#[test]
fn gronwall_holds_for_lipschitz_fields() {
    let mut r = rng(4);
    let eps = 1e-2;
    for (name, f) in every_field(4, &mut r) {
        let lip = f.lipschitz_bound();
        if !lip.is_finite() {
            continue;
        }
        let delta = |z: &[f64]| z.iter().map(|v| eps * v.sin() / 2.0).collect::<Vec<_>>();
        for _ in 0..3 {
            let x = linalg::randn(&mut r, 4);
            for s in gronwall_check(&f, &delta, eps, lip, &x, &[0.25, 0.5, 1.0], 400) {
                assert!(s.holds(), "{name} at t = {}: {} > {}", s.t, s.deviation, s.bound);
            }
        }
    }
}

#[test]
fn config_presets_and_validation() {
    for e in Experiment::ALL {
        let cfg = ExperimentConfig::parse("", Some(e)).unwrap();
        assert_eq!(cfg.experiment, e);
        let back = ExperimentConfig::parse(&cfg.to_toml(), None).unwrap();
        assert_eq!(back, cfg);
    }
    let cfg = ExperimentConfig::parse("experiment = \"regression\"\n[optim]\nepochs = 7\n", None).unwrap();
    assert_eq!(cfg.optim.epochs, 7);
    assert!(ExperimentConfig::parse("[optim]\nbogus = 1\n", Some(Experiment::Regression)).is_err());
    assert!(ExperimentConfig::parse("[nope]\n", Some(Experiment::Regression)).is_err());
    assert!(ExperimentConfig::parse("[optim]\nlr = -1.0\n", Some(Experiment::Regression)).is_err());
    assert!(ExperimentConfig::parse("experiment = \"cifar\"\n", None).is_err());
    assert!(ExperimentConfig::parse("", None).is_err());
}

fn quick(e: Experiment, extra: &str) -> ExperimentConfig {
    let mut text = format!("experiment = \"{}\"\n", e.name());
    text.push_str(extra);
    ExperimentConfig::parse(&text, None).unwrap()
}

#[test]
fn every_experiment_writes_its_artifacts() {
    let cases: [(Experiment, &str, &[&str]); 5] = [
        (
            Experiment::ClassifyPlanar,
            "[optim]\nepochs = 2\n[dataset]\nn_per_class = 20\ngrid = 5\n",
            &["history.csv", "model.txt", "boundary.csv", "points.csv"],
        ),
        (
            Experiment::RobustPlanar,
            "[optim]\nepochs = 2\n[dataset]\nn_per_class = 20\ngrid = 5\n",
            &["accuracy_eps.csv", "certification.csv", "model_constrained.txt", "model_baseline.txt"],
        ),
        (Experiment::Regression, "[optim]\nepochs = 2\n[dataset]\nn = 40\ngrid = 11\n", &["history.csv", "curve.csv"]),
        (Experiment::SirFlowmap, "[optim]\nepochs = 2\n[dataset]\nn = 40\ngrid = 5\n", &["history.csv", "trajectory.csv"]),
        (Experiment::Flowmap, "[optim]\nepochs = 2\n[dataset]\nn = 40\ngrid = 5\n", &["history.csv", "phase.csv"]),
    ];
    for (e, extra, files) in cases {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(e, extra);
        let m = run_experiment(&cfg, dir.path()).unwrap();
        assert!(!m.0.is_empty());
        for f in files.iter().chain(&["config.toml", "metrics.csv"]) {
            assert!(dir.path().join(f).exists(), "{}: missing {f}", e.name());
        }
        let saved = ExperimentConfig::load(&dir.path().join("config.toml"), None).unwrap();
        assert_eq!(saved, cfg);
    }
}
