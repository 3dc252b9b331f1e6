//! Time evolution of the ideal simulator.

mod correlator;
mod lindblad;

use std::sync::OnceLock;

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{expectation, CMatrix, CompositeSpace, DensityMatrix, QOperator};

pub use correlator::{
    heisenberg_correlator, regression_correlator, three_time_correlator, Ordering,
};
pub(crate) use lindblad::{apply_superop, apply_superop_adjoint};
pub use lindblad::{
    evolve_reduced, evolve_reduced_with_step, liouvillian, spin_propagator_analytic, LindbladModel,
    MAX_STEP_NORM,
};

/// Uniform grid `t0, t0 + dt, …, t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t.is_finite()) || t <= t0 {
            return Err(Error::InvalidArgument(format!(
                "grid needs finite t0 < t (got t0 = {t0}, t = {t})"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one step".into(),
            ));
        }
        Ok(Self { t0, t, n_steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t - self.t0) / self.n_steps as f64
    }

    pub fn span(&self) -> f64 {
        self.t - self.t0
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid point `i`; the last point is exactly `t`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t
        } else {
            self.t0 + self.span() * (i as f64 / self.n_steps as f64)
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }

    /// Same interval at a different resolution.
    pub fn with_steps(&self, n_steps: usize) -> Result<Self> {
        Self::new(self.t0, self.t, n_steps)
    }
}

#[derive(Debug)]
struct Segment {
    start: f64,
    end: f64,
    h: QOperator,
    eig: OnceLock<(Vec<f64>, CMatrix)>,
}

impl Segment {
    fn eigen(&self) -> &(Vec<f64>, CMatrix) {
        self.eig.get_or_init(|| {
            let e = SymmetricEigen::new(self.h.matrix().clone());
            (e.eigenvalues.iter().copied().collect(), e.eigenvectors)
        })
    }

    /// `exp(−i H τ)`.
    fn exp(&self, tau: f64) -> CMatrix {
        let (vals, vecs) = self.eigen();
        let phases = DVector::from_iterator(
            vals.len(),
            vals.iter().map(|&e| Complex64::from_polar(1.0, -e * tau)),
        );
        let mut left = vecs.clone();
        for (c, p) in phases.iter().enumerate() {
            for x in left.column_mut(c).iter_mut() {
                *x *= p;
            }
        }
        left * vecs.adjoint()
    }
}

/// Piecewise-constant Hamiltonian on contiguous time segments.
#[derive(Debug)]
pub struct PiecewiseHamiltonian {
    space: CompositeSpace,
    segments: Vec<Segment>,
}

impl Clone for PiecewiseHamiltonian {
    fn clone(&self) -> Self {
        Self {
            space: self.space.clone(),
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    start: s.start,
                    end: s.end,
                    h: s.h.clone(),
                    eig: s.eig.clone(),
                })
                .collect(),
        }
    }
}

impl PiecewiseHamiltonian {
    /// Segments as `(t_start, t_end, H)`, sorted and contiguous.
    pub fn new(segments: Vec<(f64, f64, QOperator)>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidArgument("no Hamiltonian segments".into()))?;
        let space = first.2.space().clone();
        let mut prev_end: Option<f64> = None;
        let mut out = Vec::with_capacity(segments.len());
        for (k, (start, end, h)) in segments.into_iter().enumerate() {
            if !(start < end) {
                return Err(Error::InvalidArgument(format!(
                    "segment {k} has start {start} not below end {end}"
                )));
            }
            if let Some(p) = prev_end {
                if start != p {
                    return Err(Error::InvalidArgument(format!(
                        "segment {k} starts at {start} but the previous one ends at {p}"
                    )));
                }
            }
            if h.space() != &space {
                return Err(Error::DimensionMismatch {
                    expected: space.total_dim(),
                    found: h.dim(),
                });
            }
            if !h.is_hermitian_hint() {
                return Err(Error::InvalidArgument(format!(
                    "segment {k} Hamiltonian is not flagged Hermitian"
                )));
            }
            prev_end = Some(end);
            out.push(Segment {
                start,
                end,
                h,
                eig: OnceLock::new(),
            });
        }
        Ok(Self {
            space,
            segments: out,
        })
    }

    /// A single Hermitian `H` valid at all times.
    pub fn constant(h: QOperator) -> Result<Self> {
        Self::new(vec![(f64::NEG_INFINITY, f64::INFINITY, h)])
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_operator(&self, k: usize) -> &QOperator {
        &self.segments[k].h
    }

    pub fn segment_bounds(&self, k: usize) -> (f64, f64) {
        (self.segments[k].start, self.segments[k].end)
    }

    pub fn is_time_independent(&self) -> bool {
        self.segments.len() == 1
    }

    /// Pieces `(segment index, duration)` covering `[from, to]` in time order.
    pub(crate) fn pieces(&self, from: f64, to: f64) -> Result<Vec<(usize, f64)>> {
        if to < from {
            return Err(Error::TimeOrdering(format!(
                "propagation from {from} to an earlier time {to}"
            )));
        }
        let lo = self.segments[0].start;
        let hi = self.segments[self.segments.len() - 1].end;
        let slack = 1e-12 * from.abs().max(to.abs()).max(1.0);
        if from < lo - slack || to > hi + slack {
            return Err(Error::UncoveredInterval { from, to });
        }
        let mut out = Vec::new();
        if from == to {
            return Ok(out);
        }
        for (k, s) in self.segments.iter().enumerate() {
            let a = from.max(s.start);
            let b = to.min(s.end);
            let last = k + 1 == self.segments.len();
            let b = if last { to.max(b) } else { b };
            let a = if k == 0 { a.min(from) } else { a };
            if b > a {
                out.push((k, b - a));
            }
        }
        Ok(out)
    }

    pub(crate) fn segment_exp(&self, k: usize, tau: f64) -> CMatrix {
        self.segments[k].exp(tau)
    }
}

/// `U(to, from)` as the ordered product of segment exponentials.
pub fn unitary_propagator(h: &PiecewiseHamiltonian, from: f64, to: f64) -> Result<QOperator> {
    let n = h.dim();
    let mut u = CMatrix::identity(n, n);
    for (k, tau) in h.pieces(from, to)? {
        u = h.segment_exp(k, tau) * u;
    }
    QOperator::new(h.space().clone(), u, false)
}

/// Ideal (uncoupled) simulator dynamics.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Unitary(PiecewiseHamiltonian),
    Lindblad(LindbladModel),
}

impl Dynamics {
    pub fn space(&self) -> &CompositeSpace {
        match self {
            Dynamics::Unitary(h) => h.space(),
            Dynamics::Lindblad(m) => m.space(),
        }
    }

    pub fn dim(&self) -> usize {
        self.space().total_dim()
    }

    pub fn is_unitary(&self) -> bool {
        matches!(self, Dynamics::Unitary(_))
    }

    /// Evolves a (not necessarily positive) operator `x` forward from `from` to `to`.
    pub(crate) fn evolve_matrix(&self, x: &CMatrix, from: f64, to: f64) -> Result<CMatrix> {
        match self {
            Dynamics::Unitary(h) => {
                let u = unitary_propagator(h, from, to)?;
                Ok(u.matrix() * x * u.matrix().adjoint())
            }
            Dynamics::Lindblad(m) => m.apply(x, from, to),
        }
    }

    /// Evolves `x` across grid step `i → i + 1`.
    pub(crate) fn grid_step_matrix(
        &self,
        x: &CMatrix,
        grid: &TimeGrid,
        i: usize,
    ) -> Result<CMatrix> {
        match self {
            Dynamics::Unitary(_) => self.evolve_matrix(x, grid.time(i), grid.time(i + 1)),
            Dynamics::Lindblad(m) => Ok(apply_superop(m.grid_step(grid, i)?.as_ref(), x)),
        }
    }

    /// Adjoint of [`Dynamics::grid_step_matrix`].
    pub(crate) fn grid_adjoint_step_matrix(
        &self,
        a: &CMatrix,
        grid: &TimeGrid,
        i: usize,
    ) -> Result<CMatrix> {
        match self {
            Dynamics::Unitary(_) => self.adjoint_matrix(a, grid.time(i), grid.time(i + 1)),
            Dynamics::Lindblad(m) => Ok(apply_superop_adjoint(m.grid_step(grid, i)?.as_ref(), a)),
        }
    }

    /// Heisenberg/adjoint evolution: `Tr[evolve(X) · A] = Tr[X · adjoint(A)]`.
    pub(crate) fn adjoint_matrix(&self, a: &CMatrix, from: f64, to: f64) -> Result<CMatrix> {
        match self {
            Dynamics::Unitary(h) => {
                let u = unitary_propagator(h, from, to)?;
                Ok(u.matrix().adjoint() * a * u.matrix())
            }
            Dynamics::Lindblad(m) => m.apply_adjoint(a, from, to),
        }
    }

    pub fn evolve(&self, rho: &DensityMatrix, from: f64, to: f64) -> Result<DensityMatrix> {
        match self {
            Dynamics::Unitary(h) => {
                let u = unitary_propagator(h, from, to)?;
                let m = u.matrix() * rho.matrix() * u.matrix().adjoint();
                DensityMatrix::new(rho.space().clone(), m)
            }
            Dynamics::Lindblad(m) => evolve_reduced(m, rho, from, to),
        }
    }
}

impl From<PiecewiseHamiltonian> for Dynamics {
    fn from(h: PiecewiseHamiltonian) -> Self {
        Dynamics::Unitary(h)
    }
}

impl From<LindbladModel> for Dynamics {
    fn from(m: LindbladModel) -> Self {
        Dynamics::Lindblad(m)
    }
}

/// `⟨Â(t)⟩₀` at every grid point, with `rho0` taken at `grid.t0`.
pub fn ideal_expectation(
    model: &Dynamics,
    rho0: &DensityMatrix,
    a: &QOperator,
    grid: &TimeGrid,
) -> Result<Vec<(f64, Complex64)>> {
    if rho0.space() != model.space() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho0.dim(),
        });
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut rho = rho0.matrix().clone();
    out.push((grid.t0, expectation(rho0, a)?));
    for i in 1..=grid.n_steps {
        rho = model.grid_step_matrix(&rho, grid, i - 1)?;
        let value = crate::hilbert::trace_product(&rho, a.matrix());
        out.push((grid.time(i), value));
    }
    Ok(out)
}
