use approx::assert_relative_eq;
use num_complex::Complex64;
use qverify_core::bath::BathCorrelator;
use qverify_core::dynamics::{Dynamics, LindbladModel, TimeGrid};
use qverify_core::estimator::SourceTag;
use qverify_core::estimator::{c2_integral, ConstantCorrelators};
use qverify_core::hilbert::{pauli, DensityMatrix, Pauli};
use qverify_core::model::SystemModel;
use qverify_core::protocol::{
    bounded_verdict, flag_by_accident, full_verdict, reliable_time_horizon, run_protocol,
    run_protocol_bounded_on_model, run_protocol_multichannel, stationary_ratio_series, Channel,
    MultiChannelConfig, ReliabilityReport, Verdict, GUARD_BAND,
};
use qverify_core::Error;

fn decaying() -> (Dynamics, DensityMatrix) {
    (
        Dynamics::Lindblad(LindbladModel::spin_decay(1.0, 0.5).unwrap()),
        DensityMatrix::spin_mixed(0.8).unwrap(),
    )
}

#[test]
fn verdict_rules() {
    let eta = 0.1;
    assert_eq!(full_verdict(0.2, 0.0, true, eta), Verdict::Unreliable);
    assert_eq!(full_verdict(0.05, 0.001, false, eta), Verdict::Reliable);
    assert_eq!(full_verdict(0.05, 0.02, false, eta), Verdict::Inconclusive);
    assert_eq!(full_verdict(0.05, 0.02, true, eta), Verdict::Reliable);
    assert_eq!(bounded_verdict(0.1, 0.01, eta), Verdict::Reliable);
    assert_eq!(bounded_verdict(0.2, 0.0, eta), Verdict::Inconclusive);
    assert_eq!(
        bounded_verdict(GUARD_BAND * eta, 0.0, eta),
        Verdict::Inconclusive
    );
    assert_eq!(
        bounded_verdict(GUARD_BAND * eta + 1e-9, 0.0, eta),
        Verdict::Unreliable
    );
}

#[test]
fn weak_and_strong_baths() {
    let (sys, rho) = decaying();
    let (a, o) = (pauli(Pauli::Z), pauli(Pauli::X));
    let grid = TimeGrid::new(0.0, 8.0, 200).unwrap();
    let weak = BathCorrelator::exponential(0.05, 10.0).unwrap();
    let strong = BathCorrelator::exponential(2.0, 10.0).unwrap();
    let r = run_protocol(&sys, &rho, &a, &o, &weak, &grid, 0.1).unwrap();
    assert_eq!(r.verdict, Verdict::Reliable);
    assert!(r.bound_ratio >= r.ratio.unwrap());
    assert!(r.markov_c2().is_some());
    let r = run_protocol(&sys, &rho, &a, &o, &strong, &grid, 0.1).unwrap();
    assert_eq!(r.verdict, Verdict::Unreliable);
    assert!(r.bound_ratio >= r.ratio.unwrap());

    // the bounded protocol never passes what the full one rejects
    let b = run_protocol_bounded_on_model(
        &sys,
        &rho,
        &a,
        &o,
        &strong,
        &grid,
        0.1,
        SourceTag::Ideal,
        "z",
    )
    .unwrap();
    assert_ne!(b.verdict, Verdict::Reliable);
    assert_relative_eq!(b.bound_ratio, r.bound_ratio, max_relative = 1e-12);
}

#[test]
fn eta_must_lie_in_the_unit_interval() {
    let (sys, rho) = decaying();
    let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
    let bath = BathCorrelator::exponential(0.05, 10.0).unwrap();
    for eta in [0.0, 1.0, -0.1, f64::NAN] {
        let r = run_protocol(
            &sys,
            &rho,
            &pauli(Pauli::Z),
            &pauli(Pauli::X),
            &bath,
            &grid,
            eta,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))), "η = {eta}");
    }
}

#[test]
fn vanishing_expectation_is_inconclusive() {
    let sys = SystemModel::spin(0.0).unwrap().dynamics().unwrap();
    let rho = DensityMatrix::spin_mixed(0.5).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
    let bath = BathCorrelator::exponential(1e-6, 10.0).unwrap();
    let r = run_protocol(
        &sys,
        &rho,
        &pauli(Pauli::Z),
        &pauli(Pauli::X),
        &bath,
        &grid,
        0.1,
    )
    .unwrap();
    assert!(r.a_value().norm() <= r.abs_floor);
    assert_eq!(r.verdict, Verdict::Inconclusive);
}

#[test]
fn correlated_channels_need_every_cross_bath() {
    let (sys, rho) = decaying();
    let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
    let ch = |p| Channel {
        operator: pauli(p),
        bath: BathCorrelator::exponential(0.05, 5.0).unwrap(),
    };
    let cross = BathCorrelator::exponential(0.01, 5.0).unwrap();
    let cfg = MultiChannelConfig::correlated(
        vec![ch(Pauli::X), ch(Pauli::Z)],
        vec![(0, 1, cross.clone())],
    )
    .unwrap();
    let r = run_protocol_multichannel(
        &sys,
        &rho,
        &pauli(Pauli::Z),
        &cfg,
        &grid,
        0.1,
        SourceTag::Ideal,
    );
    assert!(matches!(r, Err(Error::MissingCrossCorrelator(1, 0))));

    let cfg = MultiChannelConfig::correlated(
        vec![ch(Pauli::X), ch(Pauli::Z)],
        vec![(0, 1, cross.clone()), (1, 0, cross)],
    )
    .unwrap();
    let r = run_protocol_multichannel(
        &sys,
        &rho,
        &pauli(Pauli::Z),
        &cfg,
        &grid,
        0.1,
        SourceTag::Ideal,
    )
    .unwrap();
    assert_eq!(r.pairs.len(), 4);
    assert_eq!(r.report.channel_pairs, 4);
    let sum: f64 = r.pairs.iter().map(|p| p.c2_re).sum();
    assert_relative_eq!(sum, r.report.c2_total().unwrap().re, max_relative = 1e-12);
}

#[test]
fn stationary_series_matches_truncated_grids() {
    let one = Complex64::new(1.0, 0.0);
    let values = [one * 0.9, one * 0.3, one * -0.2, one * -0.4];
    let bath = BathCorrelator::exponential(0.2, 0.7).unwrap();
    let full = TimeGrid::new(0.0, 4.0, 40).unwrap();
    let series =
        stationary_ratio_series(&ConstantCorrelators::new(full, values, one), &bath).unwrap();
    for k in [16, 24, 40] {
        let sub =
            ConstantCorrelators::new(TimeGrid::new(0.0, full.time(k), k).unwrap(), values, one);
        let c2 = c2_integral(&sub, &bath).unwrap();
        assert_relative_eq!(series[k - 1].t, full.time(k));
        assert_relative_eq!(series[k - 1].ratio, c2.total.norm(), max_relative = 1e-12);
        assert!(series[k - 1].bound_ratio >= series[k - 1].ratio);
    }
}

#[test]
fn horizon_grows_with_the_threshold() {
    let (sys, rho) = decaying();
    let bath = BathCorrelator::exponential(0.3, 2.0).unwrap();
    let run = |eta| {
        reliable_time_horizon(
            &sys,
            &rho,
            &pauli(Pauli::Z),
            &pauli(Pauli::X),
            &bath,
            0.0,
            6.0,
            6,
            60,
            eta,
        )
        .unwrap()
        .0
    };
    let mut last: Option<f64> = None;
    for eta in [0.02, 0.05, 0.1, 0.3, 0.6] {
        let h = run(eta);
        assert_eq!(h.samples.len(), 6);
        assert!(h.time >= last, "η = {eta}: {:?} < {last:?}", h.time);
        last = h.time;
    }
}

fn report(verdict: Verdict, ratio: f64) -> ReliabilityReport {
    let (sys, rho) = decaying();
    let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
    let bath = BathCorrelator::exponential(0.05, 10.0).unwrap();
    let mut r = run_protocol(
        &sys,
        &rho,
        &pauli(Pauli::Z),
        &pauli(Pauli::X),
        &bath,
        &grid,
        0.1,
    )
    .unwrap();
    r.verdict = verdict;
    r.ratio = Some(ratio);
    r
}

#[test]
fn passing_alongside_a_failure_is_flagged() {
    let mut rs = vec![
        report(Verdict::Reliable, 0.01),
        report(Verdict::Unreliable, 0.5),
    ];
    flag_by_accident(&mut rs);
    assert!(rs[0].by_accident);
    assert!(!rs[1].by_accident);
    let mut rs = vec![
        report(Verdict::Reliable, 0.01),
        report(Verdict::Reliable, 0.02),
    ];
    flag_by_accident(&mut rs);
    assert!(rs.iter().all(|r| !r.by_accident));
}

#[test]
fn reports_serialise_flat() {
    let r = report(Verdict::Reliable, 0.01);
    let v = serde_json::to_value(&r).unwrap();
    for (k, field) in v.as_object().unwrap() {
        assert!(!field.is_object() && !field.is_array(), "{k} is nested");
    }
    assert_eq!(v["verdict"], "reliable");
    let mut buf = Vec::new();
    ReliabilityReport::write_csv(&[r.clone(), r], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("observable,mode,source_tag,t0,t,n_steps"));
    assert_eq!(lines.count(), 2);
}
