use approx::assert_relative_eq;
use num_complex::Complex64;
use qverify_core::bath::{exp_abs_double_integral, BathCorrelator};
use qverify_core::dynamics::{Dynamics, LindbladModel, TimeGrid};
use qverify_core::estimator::{
    c2_integral, c2_longtime_markovian, c2_upper_bound, evaluate, ConstantCorrelators,
    CorrelatorGrid, CorrelatorSource, ModelCorrelators, PairSpec, SourceTag,
};
use qverify_core::hilbert::{pauli, DensityMatrix, Pauli};
use qverify_core::model::SystemModel;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

#[test]
fn frozen_spin_has_the_closed_form_correction() {
    // H = 0, Ô = σₓ, Â = σ_z: OAO = −⟨σ_z⟩, AOO = OOA = ⟨σ_z⟩, so the
    // integrand is −4⟨σ_z⟩ Re C(τ).
    let a0 = 0.8;
    let (lambda, gamma, t) = (0.3, 2.0, 4.0);
    let dynamics = SystemModel::spin(0.0).unwrap().dynamics().unwrap();
    let rho = DensityMatrix::spin_mixed(a0).unwrap();
    let grid = TimeGrid::new(0.0, t, 400).unwrap();
    let src = ModelCorrelators::new(
        &dynamics,
        &rho,
        &[pauli(Pauli::X)],
        &pauli(Pauli::Z),
        &grid,
        SourceTag::Ideal,
    )
    .unwrap();
    let bath = BathCorrelator::exponential(lambda, gamma).unwrap();
    let c2 = c2_integral(&src, &bath).unwrap();
    let sz = 2.0 * a0 - 1.0;
    let want = -4.0 * sz * exp_abs_double_integral(lambda, gamma, t);
    assert_relative_eq!(c2.total.re, want, max_relative = 1e-4);
    assert!(c2.total.im.abs() < 1e-12);
    assert!(c2.estimated_quadrature_error < 1e-3 * want.abs());
    assert!(!c2.resolution_flag);
}

fn decaying_source(grid: &TimeGrid, observable: Pauli) -> (Dynamics, ModelCorrelators) {
    let dynamics = Dynamics::Lindblad(LindbladModel::spin_decay(1.0, 0.5).unwrap());
    let rho = DensityMatrix::spin_mixed(0.8).unwrap();
    let src = ModelCorrelators::new(
        &dynamics,
        &rho,
        &[pauli(Pauli::X)],
        &pauli(observable),
        grid,
        SourceTag::Ideal,
    )
    .unwrap();
    (dynamics, src)
}

#[test]
fn materialised_grid_reproduces_the_model_integral() {
    let grid = TimeGrid::new(0.0, 3.0, 60).unwrap();
    let (_, src) = decaying_source(&grid, Pauli::Z);
    let bath = BathCorrelator::exponential(0.1, 3.0).unwrap();
    let direct = c2_integral(&src, &bath).unwrap();
    let materialised = CorrelatorGrid::from_source(&src).unwrap();
    let via_grid = c2_integral(&materialised, &bath).unwrap();
    assert!((direct.total - via_grid.total).norm() < 1e-15 * direct.total.norm().max(1.0));

    let mut buf = Vec::new();
    materialised.write_csv(&mut buf).unwrap();
    let back = CorrelatorGrid::read_csv(buf.as_slice(), SourceTag::Ideal).unwrap();
    assert_eq!(back, materialised);
}

#[test]
fn identity_coupling_gives_no_correction() {
    let grid = TimeGrid::new(0.0, 2.0, 32).unwrap();
    let dynamics = Dynamics::Lindblad(LindbladModel::spin_decay(1.0, 0.5).unwrap());
    let rho = DensityMatrix::spin_mixed(0.8).unwrap();
    let src = ModelCorrelators::new(
        &dynamics,
        &rho,
        &[pauli(Pauli::Identity)],
        &pauli(Pauli::Z),
        &grid,
        SourceTag::Ideal,
    )
    .unwrap();
    let g = CorrelatorGrid::from_source(&src).unwrap();
    let a = g.a_value();
    for i in 0..=32 {
        for j in 0..=i {
            for v in g.get(i, j).unwrap() {
                assert!((v - a).norm() < 1e-12);
            }
        }
    }
    let bath = BathCorrelator::exponential(0.5, 1.0).unwrap();
    assert_eq!(c2_integral(&src, &bath).unwrap().total.norm(), 0.0);
}

#[test]
fn coarse_grids_raise_the_resolution_flag() {
    let bath = BathCorrelator::exponential(1.0, 40.0).unwrap();
    let (coarse_grid, fine_grid) = (
        TimeGrid::new(0.0, 2.0, 16).unwrap(),
        TimeGrid::new(0.0, 2.0, 1600).unwrap(),
    );
    let (_, coarse) = decaying_source(&coarse_grid, Pauli::Z);
    let (_, fine) = decaying_source(&fine_grid, Pauli::Z);
    assert!(c2_integral(&coarse, &bath).unwrap().resolution_flag);
    assert!(!c2_integral(&fine, &bath).unwrap().resolution_flag);
}

#[test]
fn upper_bound_dominates_and_the_markov_form_agrees_for_fast_baths() {
    let grid = TimeGrid::new(0.0, 6.0, 600).unwrap();
    let (dynamics, src) = decaying_source(&grid, Pauli::Z);
    let bath = BathCorrelator::exponential(0.02, 20.0).unwrap();
    let ev = evaluate(&src, &[PairSpec::diagonal(0, &bath)]).unwrap();
    let bound = c2_upper_bound(&ev.maxima[0], &bath, 0.0, 6.0);
    assert!(bound >= ev.breakdown.total.norm());
    let rho = DensityMatrix::spin_mixed(0.8).unwrap();
    let markov = c2_longtime_markovian(
        &dynamics,
        &rho,
        &pauli(Pauli::X),
        &pauli(Pauli::Z),
        &bath,
        &grid,
    )
    .unwrap();
    assert_relative_eq!(ev.breakdown.total.re, markov.re, max_relative = 0.05);
}

#[test]
fn independent_channels_add() {
    let grid = TimeGrid::new(0.0, 3.0, 48).unwrap();
    let dynamics = Dynamics::Lindblad(LindbladModel::spin_decay(1.0, 0.5).unwrap());
    let rho = DensityMatrix::spin_mixed(0.8).unwrap();
    let a = pauli(Pauli::Z);
    let (x, y) = (pauli(Pauli::X), pauli(Pauli::Y));
    let bx = BathCorrelator::exponential(0.05, 4.0).unwrap();
    let by = BathCorrelator::exponential(0.02, 2.0).unwrap();
    let both = ModelCorrelators::new(
        &dynamics,
        &rho,
        &[x.clone(), y.clone()],
        &a,
        &grid,
        SourceTag::Ideal,
    )
    .unwrap();
    let ev = evaluate(
        &both,
        &[PairSpec::diagonal(0, &bx), PairSpec::diagonal(1, &by)],
    )
    .unwrap();
    let only = |o, b: &BathCorrelator| {
        let s = ModelCorrelators::new(&dynamics, &rho, &[o], &a, &grid, SourceTag::Ideal).unwrap();
        c2_integral(&s, b).unwrap().total
    };
    let sum = only(x, &bx) + only(y, &by);
    assert!((ev.breakdown.total - sum).norm() < 1e-14);
    assert_eq!(ev.per_pair.len(), 2);
}

#[test]
fn constant_correlators_integrate_to_the_area() {
    let grid = TimeGrid::new(0.0, 5.0, 100).unwrap();
    // q0 − q3 = 1, q1 − q2 = 0 against C ≡ λ
    let src = ConstantCorrelators::new(grid, [c(1.5), c(0.2), c(0.2), c(0.5)], c(1.0));
    let bath = BathCorrelator::exponential(0.3, 1e-9).unwrap();
    let c2 = c2_integral(&src, &bath).unwrap();
    assert_relative_eq!(c2.total.re, 0.3 * 12.5, max_relative = 1e-6);
}
