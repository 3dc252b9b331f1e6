use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{unitary_propagator, Dynamics, TimeGrid};
use crate::error::{Error, Result};
use crate::hilbert::{trace_product, CMatrix, DensityMatrix, QOperator};

/// The four correlators at one simplex point, indexed by [`crate::dynamics::Ordering`].
pub type Quad = [Complex64; 4];

/// Where the correlators came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    Ideal,
    PerturbedMeasured,
    Synthetic,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Ideal => "ideal",
            SourceTag::PerturbedMeasured => "perturbed-measured",
            SourceTag::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Ideal, Self::PerturbedMeasured, Self::Synthetic]
            .into_iter()
            .find(|t| t.as_str() == s)
    }
}

/// How a source prefers to hand out simplex points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traversal {
    /// Line `k` fixes the early index `j = k` and runs `i = k..=n`.
    Columns,
    /// Line `k` fixes the late index `i = k` and runs `j = 0..=k`.
    Rows,
}

/// Provider of three-time correlators on the simplex of a [`TimeGrid`].
///
/// A channel pair `(late, early)` places `Ô_late` at `t₁ = grid[i]` and
/// `Ô_early` at `t₂ = grid[j]` with `i ≥ j`.
pub trait CorrelatorSource: Sync {
    fn grid(&self) -> &TimeGrid;

    fn tag(&self) -> SourceTag;

    fn n_channels(&self) -> usize;

    /// `⟨Â(t)⟩` on the same model.
    fn a_value(&self) -> Complex64;

    /// `⟨ÔÔÔÔÂ⟩, ⟨ÔÔÔÂÔ⟩, ⟨ÔÔÂÔÔ⟩, ⟨ÔÂÔÔÔ⟩, ⟨ÂÔÔÔÔ⟩` at time `t` for channel 0.
    fn fourth_order_strings(&self) -> Option<[Complex64; 5]> {
        None
    }

    fn traversal(&self) -> Traversal {
        Traversal::Columns
    }

    /// Fills `out[p]` with the values of line `k` for `pairs[p]`.
    fn line(&self, k: usize, pairs: &[(usize, usize)], out: &mut [Vec<Quad>]) -> Result<()>;
}

/// Index of `(i, j)`, `i ≥ j`, in a packed lower triangle.
pub(crate) fn packed(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Equal-time operator strings entering the fourth-order check.
pub fn fourth_order_operators(o: &CMatrix, a: &CMatrix) -> [CMatrix; 5] {
    let o2 = o * o;
    let o3 = &o2 * o;
    let o4 = &o2 * &o2;
    [&o4 * a, &o3 * a * o, &o2 * a * &o2, o * a * &o3, a * &o4]
}

fn check_operator(op: &QOperator, dynamics: &Dynamics) -> Result<()> {
    if op.space() != dynamics.space() {
        return Err(Error::DimensionMismatch {
            expected: dynamics.dim(),
            found: op.dim(),
        });
    }
    Ok(())
}

enum Engine {
    /// Heisenberg operators of every channel at every grid point.
    Heisenberg {
        rho0: CMatrix,
        a_t: CMatrix,
        o_h: Vec<Vec<CMatrix>>,
    },
    /// Conditional-state propagation: forward states, backward observables
    /// and per-step superoperators.
    Regression {
        rho: Vec<CMatrix>,
        /// `vec((Ô_c B_i)ᵀ)` and `vec((B_i Ô_c)ᵀ)` for contraction against `vec(σ)`.
        ob: Vec<Vec<DVector<Complex64>>>,
        bo: Vec<Vec<DVector<Complex64>>>,
        steps: Vec<Arc<CMatrix>>,
        ops: Vec<CMatrix>,
    },
}

/// Correlators of an ideal (or stand-in measured) reduced model.
pub struct ModelCorrelators {
    grid: TimeGrid,
    tag: SourceTag,
    n_channels: usize,
    a_value: Complex64,
    strings: [Complex64; 5],
    engine: Engine,
}

fn transposed_vec(m: &CMatrix) -> DVector<Complex64> {
    let t = m.transpose();
    DVector::from_column_slice(t.as_slice())
}

impl ModelCorrelators {
    /// `rho0` is the state at `grid.t0`; `channels` are the coupling operators.
    pub fn new(
        dynamics: &Dynamics,
        rho0: &DensityMatrix,
        channels: &[QOperator],
        a: &QOperator,
        grid: &TimeGrid,
        tag: SourceTag,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one coupling operator is required".into(),
            ));
        }
        if rho0.space() != dynamics.space() {
            return Err(Error::DimensionMismatch {
                expected: dynamics.dim(),
                found: rho0.dim(),
            });
        }
        check_operator(a, dynamics)?;
        for o in channels {
            check_operator(o, dynamics)?;
        }
        let n = grid.n_steps;
        let ops: Vec<CMatrix> = channels.iter().map(|o| o.matrix().clone()).collect();

        let (engine, rho_t) = match dynamics {
            Dynamics::Unitary(h) => {
                let us: Vec<CMatrix> = (0..=n)
                    .map(|i| unitary_propagator(h, grid.t0, grid.time(i)).map(|u| u.into_matrix()))
                    .collect::<Result<_>>()?;
                let o_h = ops
                    .iter()
                    .map(|o| us.iter().map(|u| u.adjoint() * o * u).collect())
                    .collect();
                let un = &us[n];
                let a_t = un.adjoint() * a.matrix() * un;
                let rho_t = un * rho0.matrix() * un.adjoint();
                (
                    Engine::Heisenberg {
                        rho0: rho0.matrix().clone(),
                        a_t,
                        o_h,
                    },
                    rho_t,
                )
            }
            Dynamics::Lindblad(model) => {
                let steps: Vec<Arc<CMatrix>> = (0..n)
                    .map(|i| model.grid_step(grid, i))
                    .collect::<Result<_>>()?;
                let mut rho = Vec::with_capacity(n + 1);
                rho.push(rho0.matrix().clone());
                for s in &steps {
                    let next = crate::dynamics::apply_superop(s, rho.last().unwrap());
                    rho.push(next);
                }
                let mut b = vec![a.matrix().clone(); n + 1];
                for i in (0..n).rev() {
                    b[i] = crate::dynamics::apply_superop_adjoint(&steps[i], &b[i + 1]);
                }
                let ob = ops
                    .iter()
                    .map(|o| b.iter().map(|bi| transposed_vec(&(o * bi))).collect())
                    .collect();
                let bo = ops
                    .iter()
                    .map(|o| b.iter().map(|bi| transposed_vec(&(bi * o))).collect())
                    .collect();
                let rho_t = rho[n].clone();
                (
                    Engine::Regression {
                        rho,
                        ob,
                        bo,
                        steps,
                        ops: ops.clone(),
                    },
                    rho_t,
                )
            }
        };
        let a_value = trace_product(&rho_t, a.matrix());
        let strings =
            fourth_order_operators(&ops[0], a.matrix()).map(|s| trace_product(&rho_t, &s));
        Ok(Self {
            grid: *grid,
            tag,
            n_channels: channels.len(),
            a_value,
            strings,
            engine,
        })
    }
}

impl CorrelatorSource for ModelCorrelators {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn tag(&self) -> SourceTag {
        self.tag
    }

    fn n_channels(&self) -> usize {
        self.n_channels
    }

    fn a_value(&self) -> Complex64 {
        self.a_value
    }

    fn fourth_order_strings(&self) -> Option<[Complex64; 5]> {
        Some(self.strings)
    }

    fn traversal(&self) -> Traversal {
        match self.engine {
            Engine::Heisenberg { .. } => Traversal::Rows,
            Engine::Regression { .. } => Traversal::Columns,
        }
    }

    fn line(&self, k: usize, pairs: &[(usize, usize)], out: &mut [Vec<Quad>]) -> Result<()> {
        let n = self.grid.n_steps;
        match &self.engine {
            Engine::Heisenberg { rho0, a_t, o_h } => {
                let i = k;
                for (p, &(late, early)) in pairs.iter().enumerate() {
                    let oi = &o_h[late][i];
                    let x = rho0 * oi * a_t;
                    let y = a_t * oi * rho0;
                    let z = oi * a_t * rho0;
                    let w = rho0 * a_t * oi;
                    let buf = &mut out[p];
                    buf.clear();
                    for oj in o_h[early].iter().take(i + 1) {
                        buf.push([
                            trace_product(&x, oj),
                            trace_product(oj, &y),
                            trace_product(oj, &z),
                            trace_product(&w, oj),
                        ]);
                    }
                }
            }
            Engine::Regression {
                rho,
                ob,
                bo,
                steps,
                ops,
            } => {
                let j = k;
                let mut earlies: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                earlies.sort_unstable();
                earlies.dedup();
                // σ_L = Ô ρ_j and σ_R = ρ_j Ô per early channel, as vec(σ).
                let mut left: Vec<DVector<Complex64>> = Vec::with_capacity(earlies.len());
                let mut right: Vec<DVector<Complex64>> = Vec::with_capacity(earlies.len());
                for &c in &earlies {
                    let l = &ops[c] * &rho[j];
                    let r = &rho[j] * &ops[c];
                    left.push(DVector::from_column_slice(l.as_slice()));
                    right.push(DVector::from_column_slice(r.as_slice()));
                }
                let slot = |c: usize| earlies.binary_search(&c).unwrap();
                for buf in out.iter_mut() {
                    buf.clear();
                }
                let mut scratch = DVector::<Complex64>::zeros(left.first().map_or(0, |v| v.len()));
                for i in j..=n {
                    for (p, &(late, early)) in pairs.iter().enumerate() {
                        let s = slot(early);
                        let (sl, sr) = (&left[s], &right[s]);
                        out[p].push([
                            sl.dot(&ob[late][i]),
                            sr.dot(&bo[late][i]),
                            sr.dot(&ob[late][i]),
                            sl.dot(&bo[late][i]),
                        ]);
                    }
                    if i < n {
                        let step = steps[i].as_ref();
                        for v in left.iter_mut().chain(right.iter_mut()) {
                            scratch.gemv(
                                Complex64::new(1.0, 0.0),
                                step,
                                v,
                                Complex64::new(0.0, 0.0),
                            );
                            std::mem::swap(v, &mut scratch);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Every correlator equal to a fixed constant; the worst case of a
/// non-decaying system.
#[derive(Debug, Clone)]
pub struct ConstantCorrelators {
    grid: TimeGrid,
    values: Quad,
    a_value: Complex64,
}

impl ConstantCorrelators {
    pub fn new(grid: TimeGrid, values: Quad, a_value: Complex64) -> Self {
        Self {
            grid,
            values,
            a_value,
        }
    }

    pub fn values(&self) -> Quad {
        self.values
    }
}

impl CorrelatorSource for ConstantCorrelators {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn tag(&self) -> SourceTag {
        SourceTag::Synthetic
    }

    fn n_channels(&self) -> usize {
        1
    }

    fn a_value(&self) -> Complex64 {
        self.a_value
    }

    fn line(&self, k: usize, pairs: &[(usize, usize)], out: &mut [Vec<Quad>]) -> Result<()> {
        let len = self.grid.n_steps + 1 - k;
        for (p, _) in pairs.iter().enumerate() {
            out[p].clear();
            out[p].resize(len, self.values);
        }
        Ok(())
    }
}
