//! Exact evolution of system plus discretized bath, the ground truth the
//! second-order estimate is checked against.

use std::io::Write;

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{BathCorrelation, DiscretizedBath};
use crate::dynamics::{Ordering, TimeGrid};
use crate::error::{Error, Result};
use crate::estimator::{fourth_order_operators, CorrelatorSource, Quad, SourceTag, Traversal};
use crate::hilbert::{
    boson_annihilation, embed, extend_right, CMatrix, CompositeSpace, DensityMatrix, QOperator,
};
use crate::protocol::{ReliabilityReport, Verdict};

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Spectral decomposition `H = V diag(E) V†` with a state expressed in the
/// eigenbasis.
#[derive(Debug, Clone)]
struct Spectrum {
    energies: Vec<f64>,
    vectors: CMatrix,
}

impl Spectrum {
    fn new(h: &CMatrix) -> Self {
        let eig = SymmetricEigen::new(h.clone());
        Self {
            energies: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    fn to_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        self.vectors.adjoint() * m * &self.vectors
    }

    /// `e^{iE_a τ}`.
    fn phases(&self, tau: f64) -> DVector<Complex64> {
        DVector::from_iterator(
            self.energies.len(),
            self.energies
                .iter()
                .map(|e| Complex64::from_polar(1.0, e * tau)),
        )
    }

    /// Heisenberg operator `X(τ)_ab = e^{i(E_a − E_b)τ} X_ab` in the eigenbasis.
    fn heisenberg(&self, x: &CMatrix, tau: f64) -> CMatrix {
        let p = self.phases(tau);
        CMatrix::from_fn(x.nrows(), x.ncols(), |a, b| p[a] * x[(a, b)] * p[b].conj())
    }

    /// `Tr[ρ X(τ)]` for eigenbasis `rho`, `x`.
    fn expectation(&self, rho: &CMatrix, x: &CMatrix, tau: f64) -> Complex64 {
        let p = self.phases(tau);
        let n = x.nrows();
        let mut acc = ZERO;
        for b in 0..n {
            for a in 0..n {
                acc += rho[(b, a)] * p[a] * x[(a, b)] * p[b].conj();
            }
        }
        acc
    }
}

/// System coupled to a discretized bath through `g Ô ⊗ X̂`.
#[derive(Debug, Clone)]
pub struct FullModel {
    system_space: CompositeSpace,
    space: CompositeSpace,
    bath: DiscretizedBath,
    g: f64,
    hamiltonian: CMatrix,
    spectrum: Spectrum,
    rho: CMatrix,
    system_spectrum: Spectrum,
    system_rho: CMatrix,
}

/// Truncated thermal (or vacuum) state of one mode.
fn mode_state(occupation: f64, truncation: usize) -> Result<DensityMatrix> {
    if occupation <= 0.0 {
        return DensityMatrix::basis(truncation, 0);
    }
    let q = occupation / (occupation + 1.0);
    let weights: Vec<f64> = (0..truncation).map(|k| q.powi(k as i32)).collect();
    let z: f64 = weights.iter().sum();
    let pops: Vec<f64> = weights.iter().map(|w| w / z).collect();
    DensityMatrix::diagonal(CompositeSpace::single(truncation)?, &pops)
}

impl FullModel {
    /// `system_h`, `coupling` and `rho_system` act on the system factor; the
    /// bath starts in its per-mode thermal (or vacuum) state.
    pub fn new(
        system_h: &QOperator,
        coupling: &QOperator,
        rho_system: &DensityMatrix,
        bath: &DiscretizedBath,
        g: f64,
    ) -> Result<Self> {
        Self::with_cap(
            system_h,
            coupling,
            rho_system,
            bath,
            g,
            DEFAULT_DIMENSION_CAP,
        )
    }

    pub fn with_cap(
        system_h: &QOperator,
        coupling: &QOperator,
        rho_system: &DensityMatrix,
        bath: &DiscretizedBath,
        g: f64,
        cap: usize,
    ) -> Result<Self> {
        let system_space = system_h.space().clone();
        if coupling.space() != &system_space || rho_system.space() != &system_space {
            return Err(Error::DimensionMismatch {
                expected: system_space.total_dim(),
                found: coupling.dim().max(rho_system.dim()),
            });
        }
        if !g.is_finite() {
            return Err(Error::InvalidArgument(
                "coupling scale must be finite".into(),
            ));
        }
        let bath_space = CompositeSpace::new(bath.dims())?;
        let space = system_space.tensor(&bath_space);
        let dim = space.total_dim();
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }
        let mut h = extend_right(system_h, &bath_space).into_matrix();
        let mut x = CMatrix::zeros(bath_space.total_dim(), bath_space.total_dim());
        let mut bath_h = x.clone();
        for (k, mode) in bath.modes().iter().enumerate() {
            let c = embed(&boson_annihilation(mode.truncation)?, k, &bath_space)?;
            let cd = c.matrix().adjoint();
            bath_h += &cd * c.matrix() * Complex64::new(mode.energy, 0.0);
            x += (&cd + c.matrix()) * Complex64::new(mode.coupling, 0.0);
        }
        let sys_n = system_space.total_dim();
        h += CMatrix::identity(sys_n, sys_n).kronecker(&bath_h);
        h += coupling.matrix().kronecker(&x) * Complex64::new(g, 0.0);

        let mut rho = rho_system.clone();
        for mode in bath.modes() {
            rho = rho.tensor(&mode_state(mode.occupation, mode.truncation)?);
        }
        let spectrum = Spectrum::new(&h);
        let rho = spectrum.to_eigenbasis(rho.matrix());
        let system_spectrum = Spectrum::new(system_h.matrix());
        let system_rho = system_spectrum.to_eigenbasis(rho_system.matrix());
        Ok(Self {
            system_space,
            space,
            bath: bath.clone(),
            g,
            hamiltonian: h,
            spectrum,
            rho,
            system_spectrum,
            system_rho,
        })
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn system_space(&self) -> &CompositeSpace {
        &self.system_space
    }

    pub fn total_dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn bath(&self) -> &DiscretizedBath {
        &self.bath
    }

    pub fn coupling_scale(&self) -> f64 {
        self.g
    }

    /// Full Hamiltonian in the product basis.
    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn recurrence_time(&self) -> f64 {
        self.bath.recurrence_time()
    }

    /// `op ⊗ 1` on the full space.
    pub fn lift(&self, op: &QOperator) -> Result<QOperator> {
        if op.space() != &self.system_space {
            return Err(Error::DimensionMismatch {
                expected: self.system_space.total_dim(),
                found: op.dim(),
            });
        }
        let bath_space = CompositeSpace::new(self.bath.dims())?;
        Ok(extend_right(op, &bath_space))
    }

    fn eigen_op(&self, op: &QOperator) -> Result<CMatrix> {
        Ok(self.spectrum.to_eigenbasis(self.lift(op)?.matrix()))
    }

    /// `Tr[ρ(τ) M]` for an arbitrary full-space matrix, `τ = t − t0`.
    pub fn full_space_expectation(&self, m: &CMatrix, tau: f64) -> Complex64 {
        self.spectrum
            .expectation(&self.rho, &self.spectrum.to_eigenbasis(m), tau)
    }

    /// Norm `Tr ρ(τ)` of the evolved state.
    pub fn trace_at(&self, tau: f64) -> Complex64 {
        let n = self.total_dim();
        self.full_space_expectation(&CMatrix::identity(n, n), tau)
    }
}

/// `⟨Â ⊗ 1⟩` under the full evolution, with the initial product state at `grid.t0`.
pub fn full_expectation(
    model: &FullModel,
    a: &QOperator,
    grid: &TimeGrid,
) -> Result<Vec<(f64, Complex64)>> {
    let ae = model.eigen_op(a)?;
    Ok(grid
        .times()
        .into_iter()
        .map(|t| (t, model.spectrum.expectation(&model.rho, &ae, t - grid.t0)))
        .collect())
}

impl FullModel {
    /// `⟨Â(t)⟩₀` of the uncoupled system.
    pub fn ideal_expectation(&self, a: &QOperator, tau: f64) -> Result<Complex64> {
        if a.space() != &self.system_space {
            return Err(Error::DimensionMismatch {
                expected: self.system_space.total_dim(),
                found: a.dim(),
            });
        }
        let ae = self.system_spectrum.to_eigenbasis(a.matrix());
        Ok(self.system_spectrum.expectation(&self.system_rho, &ae, tau))
    }
}

/// `Δ(t) = ⟨Â(t)⟩ − ⟨Â(t)⟩₀` on the grid.
pub fn actual_error(
    model: &FullModel,
    a: &QOperator,
    grid: &TimeGrid,
) -> Result<Vec<(f64, Complex64)>> {
    let full = full_expectation(model, a, grid)?;
    full.into_iter()
        .map(|(t, v)| Ok((t, v - model.ideal_expectation(a, t - grid.t0)?)))
        .collect()
}

/// Exact three-time correlator of the coupled model; `o1` at `t1`, `o2` at `t2`,
/// initial product state at `t0`.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_correlator(
    model: &FullModel,
    t0: f64,
    o1: &QOperator,
    a: &QOperator,
    o2: &QOperator,
    t1: f64,
    t: f64,
    t2: f64,
    ordering: Ordering,
) -> Result<Complex64> {
    if t1.min(t2) < t0 || t1.max(t2) > t || t1 < t2 {
        return Err(Error::TimeOrdering(format!(
            "need {t0} ≤ t₂ = {t2} ≤ t₁ = {t1} ≤ t = {t}"
        )));
    }
    let s = &model.spectrum;
    let x1 = s.heisenberg(&model.eigen_op(o1)?, t1 - t0);
    let xa = s.heisenberg(&model.eigen_op(a)?, t - t0);
    let x2 = s.heisenberg(&model.eigen_op(o2)?, t2 - t0);
    let product = match ordering {
        Ordering::Oao12 => &x1 * &xa * &x2,
        Ordering::Oao21 => &x2 * &xa * &x1,
        Ordering::Ooa21 => &x2 * &x1 * &xa,
        Ordering::Aoo12 => &xa * &x1 * &x2,
    };
    Ok(crate::hilbert::trace_product(&model.rho, &product))
}

/// Correlators of the coupled model on a simplex grid: the data a real device
/// would deliver in the measurement step.
pub struct PerturbedCorrelators<'m> {
    model: &'m FullModel,
    grid: TimeGrid,
    ops: Vec<CMatrix>,
    a_t: CMatrix,
    phases: Vec<DVector<Complex64>>,
    a_value: Complex64,
    strings: [Complex64; 5],
}

impl<'m> PerturbedCorrelators<'m> {
    pub fn new(
        model: &'m FullModel,
        channels: &[QOperator],
        a: &QOperator,
        grid: &TimeGrid,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one coupling operator is required".into(),
            ));
        }
        let s = &model.spectrum;
        let ops: Vec<CMatrix> = channels
            .iter()
            .map(|o| model.eigen_op(o))
            .collect::<Result<_>>()?;
        let tau = grid.span();
        let ae = model.eigen_op(a)?;
        let a_t = s.heisenberg(&ae, tau);
        let a_value = crate::hilbert::trace_product(&model.rho, &a_t);
        let full_o = model.lift(&channels[0])?;
        let full_a = model.lift(a)?;
        let strings = fourth_order_operators(full_o.matrix(), full_a.matrix())
            .map(|m| model.full_space_expectation(&m, tau));
        let phases = grid
            .times()
            .into_iter()
            .map(|t| s.phases(t - grid.t0))
            .collect();
        Ok(Self {
            model,
            grid: *grid,
            ops,
            a_t,
            phases,
            a_value,
            strings,
        })
    }
}

impl CorrelatorSource for PerturbedCorrelators<'_> {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn tag(&self) -> SourceTag {
        SourceTag::PerturbedMeasured
    }

    fn n_channels(&self) -> usize {
        self.ops.len()
    }

    fn a_value(&self) -> Complex64 {
        self.a_value
    }

    fn fourth_order_strings(&self) -> Option<[Complex64; 5]> {
        Some(self.strings)
    }

    fn traversal(&self) -> Traversal {
        Traversal::Columns
    }

    fn line(&self, k: usize, pairs: &[(usize, usize)], out: &mut [Vec<Quad>]) -> Result<()> {
        // Column j = k. With O₂ = O_early(t_j) and O₁ = O_late(t_i), every
        // ordering is Tr[O₁ N] for a j-dependent N; Tr[O₁ N] = pᵀ (Õ ∘ Nᵀ) p̄.
        let j = k;
        let n = self.grid.n_steps;
        let d = self.model.total_dim();
        let rho = &self.model.rho;
        let a_t = &self.a_t;
        let m = n + 1 - j;
        let mut p = CMatrix::zeros(d, m);
        let mut pbar = CMatrix::zeros(d, m);
        for (c, i) in (j..=n).enumerate() {
            for a in 0..d {
                p[(a, c)] = self.phases[i][a];
                pbar[(a, c)] = self.phases[i][a].conj();
            }
        }
        for (slot, &(late, early)) in pairs.iter().enumerate() {
            let pj = &self.phases[j];
            let oe = &self.ops[early];
            let o2 = CMatrix::from_fn(d, d, |a, b| pj[a] * oe[(a, b)] * pj[b].conj());
            let left = &o2 * rho;
            let right = rho * &o2;
            let ns = [a_t * &left, &right * a_t, a_t * &right, &left * a_t];
            let ol = &self.ops[late];
            let mut g = CMatrix::zeros(4 * d, d);
            for (q, nq) in ns.iter().enumerate() {
                for b in 0..d {
                    for a in 0..d {
                        g[(q * d + a, b)] = ol[(a, b)] * nq[(b, a)];
                    }
                }
            }
            let mut r = CMatrix::zeros(4 * d, m);
            r.gemm(ONE, &g, &pbar, ZERO);
            let buf = &mut out[slot];
            buf.clear();
            for c in 0..m {
                let mut quad = [ZERO; 4];
                for (q, v) in quad.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for a in 0..d {
                        acc += p[(a, c)] * r[(q * d + a, c)];
                    }
                    *v = acc;
                }
                buf.push(quad);
            }
        }
        Ok(())
    }
}

/// One row of the validation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub scenario_id: String,
    pub observable: String,
    pub t: f64,
    pub delta: f64,
    pub c2: f64,
    pub residual: f64,
    pub relative_error: f64,
    pub verdict: Verdict,
    pub verdict_correct: bool,
    pub recurrence_time: f64,
    pub pre_recurrence: bool,
}

impl ValidationRecord {
    pub fn write_csv<W: Write>(records: &[ValidationRecord], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares a report with the exact error of the coupled model at `report.t`.
/// A `reliable` verdict is correct when `|Δ|/|⟨Â⟩| ≤ 2η`; other verdicts
/// claim nothing and always count as correct.
pub fn validate_estimate(
    model: &FullModel,
    a: &QOperator,
    report: &ReliabilityReport,
    scenario_id: &str,
) -> Result<ValidationRecord> {
    let tau = report.t - report.t0;
    let ae = model.eigen_op(a)?;
    let full = model.spectrum.expectation(&model.rho, &ae, tau);
    let delta = full - model.ideal_expectation(a, tau)?;
    let c2 = report.c2_total().unwrap_or(ZERO);
    let relative_error = if full.norm() > 0.0 {
        delta.norm() / full.norm()
    } else if delta.norm() == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let verdict_correct = match report.verdict {
        Verdict::Reliable => relative_error <= 2.0 * report.threshold_eta,
        Verdict::Unreliable | Verdict::Inconclusive => true,
    };
    let recurrence = model.recurrence_time();
    Ok(ValidationRecord {
        scenario_id: scenario_id.to_string(),
        observable: report.observable.clone(),
        t: report.t,
        delta: delta.re,
        c2: c2.re,
        residual: (delta - c2).norm(),
        relative_error,
        verdict: report.verdict,
        verdict_correct,
        recurrence_time: recurrence,
        pre_recurrence: tau < recurrence,
    })
}

/// `Δ(t)` and `|Δ(t)|/|⟨Â(t)⟩|` at every grid point, in parallel.
pub fn error_series(
    model: &FullModel,
    a: &QOperator,
    grid: &TimeGrid,
) -> Result<Vec<(f64, Complex64, Complex64)>> {
    let ae = model.eigen_op(a)?;
    grid.times()
        .into_par_iter()
        .map(|t| {
            let tau = t - grid.t0;
            let full = model.spectrum.expectation(&model.rho, &ae, tau);
            Ok((t, full, full - model.ideal_expectation(a, tau)?))
        })
        .collect()
}

/// Second-order correlator of the bath modes as seen by the oracle.
pub fn oracle_bath_correlator(model: &FullModel) -> impl BathCorrelation + '_ {
    ScaledBath {
        bath: &model.bath,
        g2: model.g * model.g,
    }
}

struct ScaledBath<'b> {
    bath: &'b DiscretizedBath,
    g2: f64,
}

impl BathCorrelation for ScaledBath<'_> {
    fn value(&self, tau: f64) -> Complex64 {
        self.bath.value(tau) * self.g2
    }

    fn abs_double_integral_bound(&self, t0: f64, t: f64) -> f64 {
        self.bath.abs_double_integral_bound(t0, t) * self.g2
    }

    fn markov_kernel(&self) -> Option<Complex64> {
        None
    }

    fn time_scale(&self) -> f64 {
        self.bath.time_scale()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::BathMode;
    use crate::hilbert::{pauli, Pauli};

    fn small() -> (QOperator, DiscretizedBath) {
        let h = pauli(Pauli::Z).scale(0.5);
        let bath = DiscretizedBath::new(vec![
            BathMode {
                energy: 0.9,
                coupling: 0.1,
                truncation: 3,
                occupation: 0.0,
            },
            BathMode {
                energy: 1.1,
                coupling: 0.1,
                truncation: 3,
                occupation: 0.0,
            },
        ])
        .unwrap();
        (h, bath)
    }

    #[test]
    fn decoupled_model_matches_ideal() {
        let (h, bath) = small();
        let rho = DensityMatrix::spin_mixed(0.8).unwrap();
        let model = FullModel::new(&h, &pauli(Pauli::X), &rho, &bath, 0.0).unwrap();
        let grid = TimeGrid::new(0.0, 5.0, 10).unwrap();
        for (_, d) in actual_error(&model, &pauli(Pauli::Z), &grid).unwrap() {
            assert!(d.norm() < 1e-10);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let (h, bath) = small();
        let rho = DensityMatrix::spin_mixed(0.8).unwrap();
        let r = FullModel::with_cap(&h, &pauli(Pauli::X), &rho, &bath, 1.0, 10);
        assert!(matches!(r, Err(Error::DimensionCap { dim: 18, cap: 10 })));
    }

    #[test]
    fn thermal_mode_state_is_normalised() {
        let s = mode_state(0.5, 4).unwrap();
        let tr: f64 = (0..4).map(|k| s.matrix()[(k, k)].re).sum();
        assert!((tr - 1.0).abs() < 1e-14);
        assert!(s.matrix()[(0, 0)].re > s.matrix()[(1, 1)].re);
    }
}
