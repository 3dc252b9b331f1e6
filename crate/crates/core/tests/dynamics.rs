use approx::assert_abs_diff_eq;
use num_complex::Complex64;
use qverify_core::dynamics::{heisenberg_correlator, regression_correlator};
use qverify_core::dynamics::{
    ideal_expectation, spin_propagator_analytic, three_time_correlator, unitary_propagator,
    Dynamics, LindbladModel, Ordering, PiecewiseHamiltonian, TimeGrid,
};
use qverify_core::hilbert::{pauli, sigma_minus, CMatrix, DensityMatrix, Pauli, QOperator};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `exp(−i θ n·σ)` for a unit vector `n`.
fn rotation(n: [f64; 3], theta: f64) -> CMatrix {
    let s = pauli(Pauli::X).matrix() * c(n[0], 0.0)
        + pauli(Pauli::Y).matrix() * c(n[1], 0.0)
        + pauli(Pauli::Z).matrix() * c(n[2], 0.0);
    CMatrix::identity(2, 2) * c(theta.cos(), 0.0) - s * c(0.0, theta.sin())
}

#[test]
fn piecewise_propagator_is_the_product_of_rotations() {
    let h1 = pauli(Pauli::X).scale(0.7);
    let h2 = pauli(Pauli::Z).scale(-1.3);
    let h = PiecewiseHamiltonian::new(vec![(0.0, 1.0, h1), (1.0, 2.5, h2)]).unwrap();
    let u = unitary_propagator(&h, 0.25, 2.0).unwrap();
    let expected = rotation([0.0, 0.0, 1.0], -1.3 * 1.0) * rotation([1.0, 0.0, 0.0], 0.7 * 0.75);
    assert_abs_diff_eq!((u.matrix() - expected).norm(), 0.0, epsilon = 1e-13);
}

#[test]
fn lindblad_decay_follows_the_closed_form() {
    let (eps, gamma) = (1.3, 0.4);
    let model = Dynamics::Lindblad(LindbladModel::spin_decay(eps, gamma).unwrap());
    let psi = nalgebra::DVector::from_vec(vec![c(0.8, 0.0), c(0.0, 0.6)]);
    let rho = DensityMatrix::pure(qverify_core::hilbert::CompositeSpace::qubit(), &psi).unwrap();
    for t in [0.3, 1.7, 5.0] {
        let got = model.evolve(&rho, 0.0, t).unwrap();
        let want = spin_propagator_analytic(eps, gamma, &rho, t).unwrap();
        // populations e^{−Γt}, coherence e^{−Γt/2 − iεt}
        assert_abs_diff_eq!(
            got.matrix()[(0, 0)].re,
            0.64 * (-gamma * t).exp(),
            epsilon = 1e-9
        );
        let coh = c(0.0, -0.48) * c(-0.5 * gamma * t, -eps * t).exp();
        assert_abs_diff_eq!((got.matrix()[(0, 1)] - coh).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!((got.matrix() - want.matrix()).norm(), 0.0, epsilon = 1e-9);
    }
}

#[test]
fn ideal_expectation_relaxes_to_the_ground_state() {
    let gamma = 0.5;
    let model = Dynamics::Lindblad(LindbladModel::spin_decay(1.0, gamma).unwrap());
    let rho = DensityMatrix::spin_mixed(0.8).unwrap();
    let grid = TimeGrid::new(0.0, 4.0, 16).unwrap();
    for (t, v) in ideal_expectation(&model, &rho, &pauli(Pauli::Z), &grid).unwrap() {
        assert_abs_diff_eq!(v.re, -1.0 + 1.6 * (-gamma * t).exp(), epsilon = 1e-9);
    }
}

#[test]
fn two_time_regression_correlator_of_a_decaying_spin() {
    // ⟨σ⁺(t) σ⁻(0)⟩ from |↑⟩ = e^{iεt − Γt/2}
    let (eps, gamma) = (0.9, 0.3);
    let model = Dynamics::Lindblad(LindbladModel::spin_decay(eps, gamma).unwrap());
    let up = DensityMatrix::spin_mixed(1.0).unwrap();
    let id = pauli(Pauli::Identity);
    let sp = sigma_minus().dagger();
    for t in [0.5, 2.0, 4.0] {
        let v = three_time_correlator(
            &model,
            &up,
            0.0,
            &id,
            &sp,
            &sigma_minus(),
            0.0,
            t,
            0.0,
            Ordering::Aoo12,
        )
        .unwrap();
        let want = c(-0.5 * gamma * t, eps * t).exp();
        assert_abs_diff_eq!((v - want).norm(), 0.0, epsilon = 1e-9);
    }
}

#[test]
fn heisenberg_and_regression_agree_on_closed_systems() {
    let h = PiecewiseHamiltonian::constant(
        pauli(Pauli::Z)
            .scale(0.6)
            .add(&pauli(Pauli::X).scale(0.25))
            .unwrap(),
    )
    .unwrap();
    let model = Dynamics::Unitary(h.clone());
    let rho = DensityMatrix::spin_mixed(0.7).unwrap();
    let (o, a) = (pauli(Pauli::X), pauli(Pauli::Z));
    let (t1, t, t2) = (1.4, 2.0, 0.3);
    for ord in Ordering::ALL {
        let hz = heisenberg_correlator(&h, &rho, 0.0, &o, &a, &o, t1, t, t2, ord).unwrap();
        let rg = regression_correlator(&model, &rho, 0.0, &o, &a, &o, t1, t, t2, ord).unwrap();
        assert_abs_diff_eq!((hz - rg).norm(), 0.0, epsilon = 1e-12);
        let dispatched =
            three_time_correlator(&model, &rho, 0.0, &o, &a, &o, t1, t, t2, ord).unwrap();
        assert_abs_diff_eq!((hz - dispatched).norm(), 0.0, epsilon = 1e-12);
    }
}

#[test]
fn correlators_outside_the_window_are_rejected() {
    let model = Dynamics::Unitary(PiecewiseHamiltonian::constant(pauli(Pauli::Z)).unwrap());
    let rho = DensityMatrix::spin_mixed(0.5).unwrap();
    let x = pauli(Pauli::X);
    let r = three_time_correlator(
        &model,
        &rho,
        0.0,
        &x,
        &x,
        &x,
        2.0,
        1.0,
        0.5,
        Ordering::Oao12,
    );
    assert!(r.is_err());
}

#[test]
fn grids_and_hamiltonian_validation() {
    let g = TimeGrid::new(1.0, 3.0, 8).unwrap();
    assert_eq!(g.time(8), 3.0);
    assert_abs_diff_eq!(g.dt(), 0.25);
    assert!(TimeGrid::new(1.0, 1.0, 8).is_err());
    let non_hermitian = QOperator::from_matrix(sigma_minus().matrix().clone(), false).unwrap();
    assert!(PiecewiseHamiltonian::constant(non_hermitian).is_err());
}
