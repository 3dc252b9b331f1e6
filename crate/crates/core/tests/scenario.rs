use std::fs;
use std::path::{Path, PathBuf};

use approx::assert_relative_eq;
use qverify_core::bath::exp_abs_double_integral;
use qverify_core::protocol::Verdict;
use qverify_core::scenario::{
    export_bath_samples, export_correlators, run_scenario, sweep_rows, write_bath_samples,
    write_correlators, write_outcome, RunOptions, Scenario, BATH_SAMPLES_FILE,
};
use qverify_core::Error;
use serde_json::json;

fn bundled(name: &str) -> (Scenario, PathBuf) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    (
        Scenario::load(&dir.join(format!("{name}.json"))).unwrap(),
        dir,
    )
}

fn run(s: &Scenario) -> qverify_core::scenario::Outcome {
    run_scenario(s, Path::new("."), RunOptions::default()).unwrap()
}

#[test]
fn bundled_scenarios_reach_their_verdicts() {
    let (s, _) = bundled("spin_boson_reliable");
    let out = run(&s);
    assert_eq!(out.reports[0].verdict, Verdict::Reliable);
    assert_eq!(out.horizons[0].horizon.time, Some(8.0));

    // starting above the equator, ⟨σ_z⟩ crosses zero near t = 0.94 and the
    // ratio there is unbounded, so the horizon stops before the first checkpoint
    let crossing = run(&s.with_parameter("a", 0.8).unwrap());
    assert_eq!(crossing.horizons[0].horizon.time, None);
    assert_eq!(crossing.reports[0].verdict, Verdict::Reliable);

    let (s, _) = bundled("decoherence_free_reject");
    let out = run(&s);
    assert_eq!(out.reports[0].verdict, Verdict::Unreliable);
    assert_ne!(out.reports[1].verdict, Verdict::Unreliable);
    assert!(out.reports[1].by_accident);

    let (s, _) = bundled("two_channel");
    let out = run(&s);
    assert_eq!(out.channel_pairs.len(), 4);
    assert!(out.reports[0].bound_ratio >= out.reports[0].ratio.unwrap());

    let (s, _) = bundled("oracle_spin_boson");
    let out = run(&s);
    assert_eq!(out.reports[0].verdict, Verdict::Reliable);
    assert_eq!(out.validation.len(), s.protocol.checkpoints);
    assert!(out
        .validation
        .iter()
        .all(|v| v.verdict_correct && v.pre_recurrence));
}

#[test]
fn exported_correlators_feed_the_data_source() {
    let (s, _) = bundled("spin_boson_reliable");
    let dir = tempfile::tempdir().unwrap();
    write_correlators(
        &export_correlators(&s, Path::new("."), RunOptions::default()).unwrap(),
        dir.path(),
    )
    .unwrap();
    let ideal = run(&s);

    let mut v = s.to_value();
    v["name"] = "from_data".into();
    v["protocol"]["source"] = "data".into();
    v["protocol"]["data"] = "correlators.csv".into();
    v["protocol"]["data_tag"] = "ideal".into();
    let data = Scenario::from_value(v).unwrap();
    let out = run_scenario(&data, dir.path(), RunOptions::default()).unwrap();
    let (a, b) = (&out.reports[0], &ideal.reports[0]);
    assert_relative_eq!(a.c2_re.unwrap(), b.c2_re.unwrap(), max_relative = 1e-12);
    assert_relative_eq!(a.c2_im.unwrap(), b.c2_im.unwrap(), epsilon = 1e-12);
    assert_relative_eq!(a.a_re, b.a_re, max_relative = 1e-12);
    assert_eq!(a.verdict, b.verdict);
}

#[test]
fn exported_bath_samples_refit_to_the_same_bath() {
    let (s, _) = bundled("spin_boson_reliable");
    let dir = tempfile::tempdir().unwrap();
    let samples = export_bath_samples(&s, Path::new("."), RunOptions::default())
        .unwrap()
        .unwrap();
    assert_eq!(samples.len(), s.grid.n_steps + 1);
    write_bath_samples(&samples, dir.path()).unwrap();
    assert_eq!(header(&dir.path().join(BATH_SAMPLES_FILE)), "tau,re,im");

    let mut v = s.to_value();
    v["bath"] = json!({"samples": {"path": BATH_SAMPLES_FILE, "window": [0.0, 2.0]}});
    let refit = Scenario::from_value(v).unwrap();
    let (a, b) = (
        run_scenario(&refit, dir.path(), RunOptions::default()).unwrap(),
        run(&s),
    );
    assert_relative_eq!(
        a.reports[0].ratio.unwrap(),
        b.reports[0].ratio.unwrap(),
        max_relative = 1e-9
    );

    let mut v = s.to_value();
    v["bath"] = json!({"samples": {"path": "missing.csv"}});
    let missing = Scenario::from_value(v).unwrap();
    match run_scenario(&missing, dir.path(), RunOptions::default()) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "bath.samples.path"),
        other => panic!(
            "expected a config error, got {:?}",
            other.map(|o| o.scenario)
        ),
    }
}

#[test]
fn ratio_is_linear_in_the_bath_strength() {
    let (s, _) = bundled("spin_boson_reliable");
    let one = run(&s.with_parameter("lambda", 0.05).unwrap());
    let two = run(&s.with_parameter("lambda", 0.1).unwrap());
    assert_relative_eq!(
        two.reports[0].ratio.unwrap(),
        2.0 * one.reports[0].ratio.unwrap(),
        max_relative = 1e-12
    );
}

fn frozen_spin() -> Scenario {
    Scenario::from_value(json!({
        "schema_version": 1,
        "name": "frozen",
        "system": {"eps": 0.0, "initial_state": {"a": 1.0}},
        "coupling": {"operator": "sigma_x"},
        "bath": {"exponential": [{"lambda": 0.01, "gamma": 2.0}]},
        "grid": {"t": 4.0, "n_steps": 400},
        "protocol": {"observables": ["sigma_z"], "checkpoints": 1}
    }))
    .unwrap()
}

#[test]
fn worst_case_ratio_grows_linearly_in_time() {
    // constant correlators: ratio = 4 λ B(t), B ≈ t/γ for γt ≫ 1
    let base = frozen_spin();
    let mut last = 0.0;
    for t in [4.0, 8.0, 16.0] {
        let out = run(&base
            .with_parameter("t", t)
            .unwrap()
            .with_parameter("grid.n_steps", 100.0 * t)
            .unwrap());
        let r = out.reports[0].ratio.unwrap();
        assert_relative_eq!(
            r,
            4.0 * exp_abs_double_integral(0.01, 2.0, t),
            max_relative = 1e-4
        );
        if last > 0.0 {
            assert_relative_eq!(r - last, 4.0 * 0.01 * t / 2.0 / 2.0, max_relative = 1e-3);
        }
        last = r;
    }
}

#[test]
fn oracle_residual_shrinks_faster_than_the_error() {
    let (s, _) = bundled("oracle_spin_boson");
    let rows = |g: f64| {
        let out = run(&s.with_parameter("g", g).unwrap());
        sweep_rows("g", g, &out).pop().unwrap()
    };
    let (a, b) = (rows(0.1), rows(0.05));
    assert_eq!(a.parameter, "g");
    let (da, db) = (a.delta.unwrap().abs(), b.delta.unwrap().abs());
    assert_relative_eq!(da / db, 4.0, max_relative = 0.1);
    let shrink = a.residual.unwrap() / b.residual.unwrap();
    assert!(shrink >= 8.0, "residual shrank by {shrink}");
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn output_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = bundled("decoherence_free_reject");
    write_outcome(&run(&s), dir.path()).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario"], "decoherence_free_reject");
    assert_eq!(report["reports"].as_array().unwrap().len(), 2);
    assert_eq!(
        header(&dir.path().join("timeseries.csv")),
        "observable,t,a_re,a_im,c2_re,c2_im,c2_bound,ratio,bound_ratio,verdict,delta_re"
    );
    assert!(header(&dir.path().join("correlators.csv")).starts_with("t1,t2,ordering_tag,re,im"));
    assert!(dir.path().join("correlators_projector_x.csv").exists());
    assert!(!dir.path().join("validation.csv").exists());

    let dir = tempfile::tempdir().unwrap();
    let (s, _) = bundled("oracle_spin_boson");
    write_outcome(&run(&s), dir.path()).unwrap();
    assert!(
        header(&dir.path().join("validation.csv")).starts_with("scenario_id,observable,t,delta")
    );
}

fn config_error(v: serde_json::Value) -> (String, String) {
    match Scenario::from_value(v) {
        Err(e @ Error::Config { .. }) => {
            assert!(e.is_schema_error());
            let Error::Config { path, message } = e else {
                unreachable!()
            };
            (path, message)
        }
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn schema_errors_name_the_field() {
    let good = frozen_spin().to_value();

    let mut v = good.clone();
    v["schema_version"] = 2.into();
    assert_eq!(config_error(v).0, "schema_version");

    let mut v = good.clone();
    v["grid"]["n_steps"] = 15.into();
    assert_eq!(config_error(v).0, "grid.n_steps");

    let mut v = good.clone();
    v["protocol"]["source"] = "oracle".into();
    assert_eq!(config_error(v).0, "oracle");

    let mut v = good.clone();
    v["protocol"]["source"] = "telepathy".into();
    assert_eq!(config_error(v).0, "protocol.source");

    let mut v = good.clone();
    v["bath"]["exponential"][0]["gamma"] = (-2.0).into();
    let (path, message) = config_error(v);
    assert_eq!(path, "bath.exponential[0].gamma");
    assert!(!message.is_empty());

    assert!(Scenario::from_json("{ not json")
        .unwrap_err()
        .is_schema_error());
    assert!(Scenario::load(Path::new("/nonexistent/scenario.json"))
        .unwrap_err()
        .is_schema_error());
}
