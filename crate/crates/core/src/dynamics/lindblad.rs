use std::sync::Arc;

use dashmap::DashMap;
use num_complex::Complex64;

use super::{PiecewiseHamiltonian, TimeGrid};
use crate::error::{Error, Result};
use crate::hilbert::{
    hermitian_part, pauli, sigma_minus, CMatrix, CompositeSpace, DensityMatrix, Pauli, QOperator,
    ONE, ZERO,
};

/// Largest `h · ‖𝓛‖₁` used for the default fixed step.
pub const MAX_STEP_NORM: f64 = 0.01;

const PROBE_TOL: f64 = 1e-6;

/// Superoperator of `ρ ↦ −i[H, ρ] + Σ r (LρL† − ½{L†L, ρ})` acting on
/// column-major `vec(ρ)`.
pub fn liouvillian(h: &CMatrix, jumps: &[(CMatrix, f64)]) -> CMatrix {
    let d = h.nrows();
    let id = CMatrix::identity(d, d);
    let mi = Complex64::new(0.0, -1.0);
    let mut l = (id.kronecker(h) - h.transpose().kronecker(&id)) * mi;
    for (op, rate) in jumps {
        let r = Complex64::new(*rate, 0.0);
        let ldl = op.adjoint() * op;
        let half = Complex64::new(0.5, 0.0);
        l += (op.conjugate().kronecker(op)
            - id.kronecker(&ldl) * half
            - ldl.transpose().kronecker(&id) * half)
            * r;
    }
    l
}

fn one_norm(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Fourth-order Taylor polynomial of `exp(h𝓛)`; one classical RK4 step for a
/// constant generator.
fn rk4_step(l: &CMatrix, h: f64) -> CMatrix {
    let n = l.nrows();
    let hl = l * Complex64::new(h, 0.0);
    let mut term = CMatrix::identity(n, n);
    let mut out = term.clone();
    for k in 1..=4 {
        term = &term * &hl * Complex64::new(1.0 / k as f64, 0.0);
        out += &term;
    }
    out
}

fn matrix_power(base: &CMatrix, mut m: usize) -> CMatrix {
    let n = base.nrows();
    let mut result = CMatrix::identity(n, n);
    let mut b = base.clone();
    while m > 0 {
        if m & 1 == 1 {
            result = &b * &result;
        }
        m >>= 1;
        if m > 0 {
            b = &b * &b;
        }
    }
    result
}

fn vec_of(x: &CMatrix) -> CMatrix {
    let n = x.nrows();
    CMatrix::from_column_slice(n * n, 1, x.as_slice())
}

fn unvec(v: &CMatrix, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

/// Markovian reduced dynamics with a piecewise-constant Hamiltonian.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    hamiltonian: PiecewiseHamiltonian,
    jumps: Vec<(QOperator, f64)>,
    generators: Vec<CMatrix>,
    step_limits: Vec<f64>,
    cache: Arc<DashMap<(usize, u64), Arc<CMatrix>>>,
}

impl LindbladModel {
    pub fn new(hamiltonian: PiecewiseHamiltonian, jumps: Vec<(QOperator, f64)>) -> Result<Self> {
        for (k, (op, rate)) in jumps.iter().enumerate() {
            if !(rate.is_finite() && *rate >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "jump operator {k} has rate {rate}, expected a nonnegative number"
                )));
            }
            if op.space() != hamiltonian.space() {
                return Err(Error::DimensionMismatch {
                    expected: hamiltonian.dim(),
                    found: op.dim(),
                });
            }
        }
        let raw: Vec<(CMatrix, f64)> = jumps
            .iter()
            .map(|(op, r)| (op.matrix().clone(), *r))
            .collect();
        let generators: Vec<CMatrix> = (0..hamiltonian.n_segments())
            .map(|k| liouvillian(hamiltonian.segment_operator(k).matrix(), &raw))
            .collect();
        let step_limits = generators
            .iter()
            .map(|g| {
                let norm = one_norm(g);
                if norm > 0.0 {
                    MAX_STEP_NORM / norm
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        Ok(Self {
            hamiltonian,
            jumps,
            generators,
            step_limits,
            cache: Arc::new(DashMap::new()),
        })
    }

    /// `H = ½ε σ_z` with spontaneous decay `L = σ⁻` at rate `gamma`.
    pub fn spin_decay(eps: f64, gamma: f64) -> Result<Self> {
        let h = PiecewiseHamiltonian::constant(pauli(Pauli::Z).scale(0.5 * eps))?;
        Self::new(h, vec![(sigma_minus(), gamma)])
    }

    pub fn hamiltonian(&self) -> &PiecewiseHamiltonian {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[(QOperator, f64)] {
        &self.jumps
    }

    pub fn space(&self) -> &CompositeSpace {
        self.hamiltonian.space()
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Generator of segment `k` as a `d² × d²` matrix.
    pub fn generator(&self, k: usize) -> &CMatrix {
        &self.generators[k]
    }

    /// Default fixed step used inside segment `k`.
    pub fn default_step(&self, k: usize) -> f64 {
        self.step_limits[k]
    }

    fn piece_propagator(&self, k: usize, tau: f64, step: f64) -> CMatrix {
        let n = self.dim() * self.dim();
        if tau <= 0.0 {
            return CMatrix::identity(n, n);
        }
        let m = if step.is_finite() {
            (tau / step).ceil().max(1.0) as usize
        } else {
            1
        };
        let h = tau / m as f64;
        matrix_power(&rk4_step(&self.generators[k], h), m)
    }

    fn cached_piece(&self, k: usize, tau: f64) -> Arc<CMatrix> {
        let key = (k, tau.to_bits());
        if let Some(p) = self.cache.get(&key) {
            return Arc::clone(p.value());
        }
        let p = Arc::new(self.piece_propagator(k, tau, self.step_limits[k]));
        Arc::clone(self.cache.entry(key).or_insert(p).value())
    }

    /// Superoperator propagating `vec(ρ)` from `from` to `to`.
    pub fn propagator(&self, from: f64, to: f64) -> Result<Arc<CMatrix>> {
        let pieces = self.hamiltonian.pieces(from, to)?;
        match pieces.as_slice() {
            [] => {
                let n = self.dim() * self.dim();
                Ok(Arc::new(CMatrix::identity(n, n)))
            }
            [(k, tau)] => Ok(self.cached_piece(*k, *tau)),
            _ => {
                let n = self.dim() * self.dim();
                let mut p = CMatrix::identity(n, n);
                for (k, tau) in pieces {
                    p = self.cached_piece(k, tau).as_ref() * p;
                }
                Ok(Arc::new(p))
            }
        }
    }

    pub(crate) fn apply(&self, x: &CMatrix, from: f64, to: f64) -> Result<CMatrix> {
        Ok(apply_superop(self.propagator(from, to)?.as_ref(), x))
    }

    pub(crate) fn apply_adjoint(&self, a: &CMatrix, from: f64, to: f64) -> Result<CMatrix> {
        Ok(apply_superop_adjoint(
            self.propagator(from, to)?.as_ref(),
            a,
        ))
    }

    /// Propagator for grid step `i → i + 1`; steps inside one segment share a
    /// cache entry keyed by the nominal `dt`.
    pub(crate) fn grid_step(&self, grid: &TimeGrid, i: usize) -> Result<Arc<CMatrix>> {
        let (a, b) = (grid.time(i), grid.time(i + 1));
        let pieces = self.hamiltonian.pieces(a, b)?;
        match pieces.as_slice() {
            [(k, _)] => Ok(self.cached_piece(*k, grid.dt())),
            _ => self.propagator(a, b),
        }
    }

    /// Suggested stable step for the stiffest segment.
    fn suggested_step(&self) -> f64 {
        self.step_limits
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `unvec(S · vec(x))`.
pub(crate) fn apply_superop(s: &CMatrix, x: &CMatrix) -> CMatrix {
    unvec(&(s * vec_of(x)), x.nrows())
}

/// Adjoint action: `Tr[apply_superop(s, x) · a] = Tr[x · apply_superop_adjoint(s, a)]`.
pub(crate) fn apply_superop_adjoint(s: &CMatrix, a: &CMatrix) -> CMatrix {
    unvec(&s.tr_mul(&vec_of(&a.transpose())), a.nrows()).transpose()
}

/// Worst deviation when `p` acts on the matrix units `|r⟩⟨c|`: images must keep
/// their trace and stay bounded by one entrywise.
fn probe(p: &CMatrix, d: usize) -> f64 {
    let mut worst = 0.0_f64;
    for (k, col) in p.column_iter().enumerate() {
        let target = if k % d == k / d { ONE } else { ZERO };
        let tr: Complex64 = (0..d).map(|r| col[r * d + r]).sum();
        let big = col.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        worst = worst.max((tr - target).norm()).max(big - 1.0);
    }
    worst
}

fn finish(rho: &DensityMatrix, m: CMatrix) -> Result<DensityMatrix> {
    DensityMatrix::with_tolerance(rho.space().clone(), m, 1e-8)
}

/// Applies the Lindblad semigroup with the model's default fixed RK4 step.
pub fn evolve_reduced(
    model: &LindbladModel,
    rho: &DensityMatrix,
    from: f64,
    to: f64,
) -> Result<DensityMatrix> {
    if rho.space() != model.space() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho.dim(),
        });
    }
    let m = model.apply(rho.matrix(), from, to)?;
    finish(rho, m)
}

/// Like [`evolve_reduced`] with a caller-chosen step; rejects steps whose
/// propagator drifts in trace or amplifies states.
pub fn evolve_reduced_with_step(
    model: &LindbladModel,
    rho: &DensityMatrix,
    from: f64,
    to: f64,
    step: f64,
) -> Result<DensityMatrix> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step {step} must be positive"
        )));
    }
    if rho.space() != model.space() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho.dim(),
        });
    }
    let d = model.dim();
    let mut p = CMatrix::identity(d * d, d * d);
    for (k, tau) in model.hamiltonian.pieces(from, to)? {
        p = model.piece_propagator(k, tau, step) * p;
    }
    let drift = probe(&p, d);
    if !(drift <= PROBE_TOL) {
        return Err(Error::StepInstability {
            drift,
            suggested_dt: model.suggested_step(),
        });
    }
    finish(rho, unvec(&(p * vec_of(rho.matrix())), d))
}

/// Closed-form reduced propagator of a decaying spin with `H = ½ε σ_z`.
pub fn spin_propagator_analytic(
    eps: f64,
    gamma: f64,
    rho0: &DensityMatrix,
    dt: f64,
) -> Result<DensityMatrix> {
    if rho0.dim() != 2 || rho0.space().n_factors() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: rho0.dim(),
        });
    }
    let r = rho0.matrix();
    let pop = if dt.is_infinite() {
        0.0
    } else {
        (-gamma * dt).exp()
    };
    let coh = if dt.is_infinite() {
        ZERO
    } else {
        Complex64::new(-0.5 * gamma * dt, -eps * dt).exp()
    };
    let up = r[(0, 0)] * pop;
    let updown = r[(0, 1)] * coh;
    let m = CMatrix::from_row_slice(2, 2, &[up, updown, updown.conj(), ONE - up]);
    let m = hermitian_part(&m);
    DensityMatrix::new(rho0.space().clone(), m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{max_abs, trace_product};

    fn coherent_state() -> DensityMatrix {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.7, 0.0),
                Complex64::new(0.2, 0.3),
                Complex64::new(0.2, -0.3),
                Complex64::new(0.3, 0.0),
            ],
        );
        DensityMatrix::from_matrix(m).unwrap()
    }

    #[test]
    fn generator_is_trace_preserving() {
        let m = LindbladModel::spin_decay(1.0, 0.3).unwrap();
        let g = m.generator(0);
        // Tr[𝓛(ρ)] for each basis element: row sums over diagonal entries vanish.
        for c in 0..4 {
            let tr = g[(0, c)] + g[(3, c)];
            assert!(tr.norm() < 1e-14);
        }
    }

    #[test]
    fn decay_population_and_coherence() {
        let (eps, gamma) = (1.0, 0.4);
        let m = LindbladModel::spin_decay(eps, gamma).unwrap();
        let up = DensityMatrix::spin_mixed(1.0).unwrap();
        let out = evolve_reduced(&m, &up, 0.0, 3.0).unwrap();
        assert!((out.matrix()[(0, 0)].re - (-gamma * 3.0f64).exp()).abs() < 1e-6);

        let rho = coherent_state();
        let t = 2.5;
        let out = evolve_reduced(&m, &rho, 1.0, 1.0 + t).unwrap();
        let expected = rho.matrix()[(0, 1)] * Complex64::new(-0.5 * gamma * t, -eps * t).exp();
        assert!((out.matrix()[(0, 1)] - expected).norm() < 1e-6);
    }

    #[test]
    fn analytic_limits() {
        let rho = coherent_state();
        let same = spin_propagator_analytic(1.0, 0.2, &rho, 0.0).unwrap();
        assert!(max_abs(&(same.matrix() - rho.matrix())) < 1e-15);
        let relaxed = spin_propagator_analytic(1.0, 0.2, &rho, f64::INFINITY).unwrap();
        let down = CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]);
        assert!(max_abs(&(relaxed.matrix() - down)) < 1e-15);
    }

    #[test]
    fn adjoint_matches_forward_trace() {
        let m = LindbladModel::spin_decay(0.8, 0.5).unwrap();
        let rho = coherent_state();
        let a = pauli(Pauli::X).matrix() + pauli(Pauli::Z).matrix() * Complex64::new(0.3, 0.0);
        let fwd = m.apply(rho.matrix(), 0.0, 1.7).unwrap();
        let back = m.apply_adjoint(&a, 0.0, 1.7).unwrap();
        let lhs = trace_product(&fwd, &a);
        let rhs = trace_product(rho.matrix(), &back);
        assert!((lhs - rhs).norm() < 1e-13);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let m = LindbladModel::spin_decay(40.0, 1.0).unwrap();
        let rho = coherent_state();
        match evolve_reduced_with_step(&m, &rho, 0.0, 5.0, 0.5) {
            Err(Error::StepInstability { suggested_dt, .. }) => {
                assert!(suggested_dt < 0.5);
                assert!(evolve_reduced_with_step(&m, &rho, 0.0, 5.0, suggested_dt).is_ok());
            }
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_rates() {
        let h = PiecewiseHamiltonian::constant(pauli(Pauli::Z)).unwrap();
        assert!(LindbladModel::new(h, vec![(sigma_minus(), -0.1)]).is_err());
    }
}
