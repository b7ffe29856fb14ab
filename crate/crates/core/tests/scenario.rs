use sctm::env::replicate_rng;
use sctm::evaluation::{calibrate_threshold, BenchmarkSpec, UtilityFn};
use sctm::parallel::with_workers;
use sctm::scenario::{RuleConfig, Scenario, ScenarioConfig, BUNDLED};

#[test]
fn bundled_configs_round_trip() {
    for name in BUNDLED {
        let cfg = ScenarioConfig::bundled(name).unwrap();
        let again = ScenarioConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
}

#[test]
fn bundled_scenarios_validate_with_expected_shape() {
    let urban = Scenario::bundled("urban", None).unwrap();
    assert_eq!(urban.network().node_count(), 29);
    assert_eq!(urban.design().lower, vec![-50.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(urban.design().upper, vec![50.0, 0.025, 0.025, 100.0, 100.0]);
    assert_eq!(urban.config().run.horizon, 1250);

    let highway = Scenario::bundled("highway", None).unwrap();
    assert_eq!(highway.network().node_count(), 33);
    assert_eq!(highway.config().run.horizon, 500);
    let qb = highway.config().measure(Some("qb")).unwrap();
    let db = highway.config().design_for(qb).unwrap();
    assert_eq!((db.lower.clone(), db.upper.clone()), (vec![1.0, 1.0], vec![31.0, 31.0]));
    let da = highway.config().design_for(highway.config().measure(Some("qa")).unwrap()).unwrap();
    assert_eq!(da.upper, vec![61.0, 61.0]);

    Scenario::bundled("highway", Some("open")).unwrap();
    assert!(Scenario::bundled("highway", Some("nope")).is_err());

    for name in BUNDLED {
        let l = ScenarioConfig::bundled(name).unwrap().resolve_learning().unwrap();
        assert_eq!(l.space.dim(), 2);
        assert_eq!(l.loop_config.tau.len(), l.loop_config.iterations);
    }
    let l = ScenarioConfig::bundled("urban").unwrap().resolve_learning().unwrap();
    assert!((l.gamma - 60.0).abs() < 1e-6, "{}", l.gamma);
    assert!((l.loop_config.tau[0] - 0.5).abs() < 1e-9);
}

#[test]
fn malformed_configs_are_config_errors() {
    let text = sctm::scenario::bundled_source("urban").unwrap();
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["schema_version"] = 99.into();
    let e = ScenarioConfig::from_json(&v.to_string()).unwrap_err();
    assert!(e.is_config_error() || matches!(e, sctm::Error::Config(_)));

    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["run"]["bogus"] = 1.into();
    assert!(ScenarioConfig::from_json(&v.to_string()).unwrap_err().is_config_error());

    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["network"]["links"][0] = serde_json::json!([1, 999]);
    let cfg = ScenarioConfig::from_json(&v.to_string()).unwrap();
    assert!(Scenario::new(cfg, None).unwrap_err().is_config_error());

    let broken = &text[..text.len() / 2];
    let msg = ScenarioConfig::from_json(broken).unwrap_err().to_string();
    assert!(msg.contains("line"), "{msg}");
}

#[test]
fn closed_variant_reports_exact_conservation() {
    let s = Scenario::bundled("urban", None).unwrap().closed();
    let m = s.config().measure(None).unwrap().measure.clone();
    let out = s.replicates(&s.design().default, &RuleConfig::Dpf.build(s.network()), &m, 3, 4).unwrap();
    for o in out {
        assert_eq!(o.net_exchange, 0.0);
        assert!(o.conservation_residual().abs() < 1e-9);
        assert!((o.final_mass - o.initial_mass).abs() < 1e-9);
    }
}

#[test]
fn replicates_do_not_depend_on_worker_count() {
    let s = Scenario::bundled("highway", None).unwrap();
    let m = s.config().measure(None).unwrap().measure.clone();
    let rule = RuleConfig::Dpf.build(s.network());
    let k = [7.0, 13.0];
    let a = with_workers(Some(1), || s.replicates(&k, &rule, &m, 9, 6).unwrap());
    let b = with_workers(Some(3), || s.replicates(&k, &rule, &m, 9, 6).unwrap());
    let c = s.replicates(&k, &rule, &m, 9, 6).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn highway_velocity_is_free_flow() {
    // with a = 1 on both measured routes, free flow gives q_out / rho = 1 per route
    let s = Scenario::bundled("highway", None).unwrap();
    let m = s.config().measure(Some("qb")).unwrap().measure.clone();
    let rule = RuleConfig::Dpf.build(s.network());
    for k in [[5.0, 5.0], [25.0, 5.0]] {
        let q = s.statistic(&k, &rule, &m, 4, 0).unwrap();
        assert!((q - 2.0).abs() < 1e-6, "{k:?}: {q}");
    }
}

#[test]
fn integer_timings_match_in_expectation() {
    let s = Scenario::bundled("urban", None).unwrap();
    let k = [2.5, 0.01, 0.01, 20.3, 47.75];
    let n = 20_000;
    let (mut g, mut t) = (0.0, 0.0);
    for i in 0..n {
        let z = s.integerize(&k, &mut replicate_rng(1, i));
        assert!(z[3].fract() == 0.0 && z[4].fract() == 0.0);
        assert!(z[3] == 20.0 || z[3] == 21.0);
        g += z[3];
        t += z[4];
    }
    assert!((g / n as f64 - 20.3).abs() < 0.02);
    assert!((t / n as f64 - 47.75).abs() < 0.02);
}

#[test]
fn calibration_examples() {
    let id = UtilityFn::Identity;
    for (e, s) in [(60.0, 0.1), (55.0, 0.15), (50.0, 0.2)] {
        assert!((calibrate_threshold(&BenchmarkSpec::new(e, s).unwrap(), &id).unwrap() - e).abs() < 1e-8);
    }
    let betas: Vec<f64> = [0.1, 0.15, 0.2].iter().map(|&s| BenchmarkSpec::new(60.0, s).unwrap().beta().unwrap()).collect();
    assert!((betas[0] - 12.0).abs() < 1e-9);
    assert!((betas[1] - 5.055_555_555_6).abs() < 1e-8);
    assert!((betas[2] - 2.625).abs() < 1e-9);
    let sq: Vec<f64> = [50.0, 55.0, 60.0]
        .iter()
        .map(|&e| calibrate_threshold(&BenchmarkSpec::new(e, 0.1).unwrap(), &UtilityFn::SquareRoot).unwrap())
        .collect();
    assert!(sq[0] < sq[1] && sq[1] < sq[2]);
}
