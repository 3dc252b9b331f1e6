//! Second-order correction from sampled correlators, its bound, the
//! Markovian long-time form and the fourth-order consistency estimates.

mod grid;
mod source;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::BathCorrelation;
use crate::dynamics::{Dynamics, TimeGrid};
use crate::error::{Error, Result};
use crate::hilbert::{trace_product, CMatrix, DensityMatrix, QOperator};
use crate::quadrature::{richardson_error, simplex_weight, trapezoid};

pub use grid::{CorrelatorGrid, A_TAG, STRING_TAGS};
pub use source::{
    fourth_order_operators, ConstantCorrelators, CorrelatorSource, ModelCorrelators, Quad,
    SourceTag, Traversal,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Smallest resolution accepted by the quadrature.
pub const MIN_STEPS: usize = 16;

/// Richardson estimate above this fraction of `|total|` flags the result.
pub const RESOLUTION_FLAG_FRACTION: f64 = 0.1;

/// Integrated second-order correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Breakdown {
    /// `+∫∫OAO₁₂C₁₂`, `+∫∫OAO₂₁C₂₁`, `−∫∫OOA₂₁C₂₁`, `−∫∫AOO₁₂C₁₂`.
    pub term_values: [Complex64; 4],
    pub total: Complex64,
    pub grid_resolution: usize,
    pub half_resolution_total: Complex64,
    pub estimated_quadrature_error: f64,
    pub resolution_flag: bool,
}

impl C2Breakdown {
    fn from_sums(terms: [Complex64; 4], total: Complex64, half: Complex64, n: usize) -> Self {
        let err = richardson_error(total, half);
        Self {
            term_values: terms,
            total,
            grid_resolution: n,
            half_resolution_total: half,
            estimated_quadrature_error: err,
            resolution_flag: err > RESOLUTION_FLAG_FRACTION * total.norm(),
        }
    }

    fn add(&self, other: &C2Breakdown) -> C2Breakdown {
        let mut terms = self.term_values;
        for (t, o) in terms.iter_mut().zip(other.term_values) {
            *t += o;
        }
        Self::from_sums(
            terms,
            self.total + other.total,
            self.half_resolution_total + other.half_resolution_total,
            self.grid_resolution,
        )
    }
}

/// Largest sampled magnitudes of the correlators entering the upper bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorMaxima {
    /// Over both `OAO` orderings.
    pub oao: f64,
    pub aoo: f64,
    pub ooa: f64,
}

impl CorrelatorMaxima {
    fn absorb(&mut self, q: &Quad) {
        self.oao = self.oao.max(q[0].norm()).max(q[1].norm());
        self.ooa = self.ooa.max(q[2].norm());
        self.aoo = self.aoo.max(q[3].norm());
    }

    fn merge(&mut self, o: &CorrelatorMaxima) {
        self.oao = self.oao.max(o.oao);
        self.aoo = self.aoo.max(o.aoo);
        self.ooa = self.ooa.max(o.ooa);
    }

    /// `2|OAO| + |AOO| + |OOA|`.
    pub fn weight(&self) -> f64 {
        2.0 * self.oao + self.aoo + self.ooa
    }
}

/// A coupling-channel pair with its bath correlator `⟨X̂_late(t₁) X̂_early(t₂)⟩`.
#[derive(Clone, Copy)]
pub struct PairSpec<'a> {
    pub late: usize,
    pub early: usize,
    pub bath: &'a dyn BathCorrelation,
}

impl<'a> PairSpec<'a> {
    pub fn diagonal(channel: usize, bath: &'a dyn BathCorrelation) -> Self {
        Self {
            late: channel,
            early: channel,
            bath,
        }
    }
}

/// Everything collected in one sweep over the simplex.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub grid: TimeGrid,
    pub a_value: Complex64,
    pub breakdown: C2Breakdown,
    pub per_pair: Vec<C2Breakdown>,
    pub maxima: Vec<CorrelatorMaxima>,
    /// `⟨Ô(t_i) Â(t) Ô(t_i)⟩` of the first pair, `i = 0..=n`.
    pub diagonal: Vec<Complex64>,
    pub fourth_order_strings: Option<[Complex64; 5]>,
}

/// Integrand at one simplex point given `C(t₁ − t₂)` and `C(t₂ − t₁)`.
pub fn integrand_value(q: &Quad, c12: Complex64, c21: Complex64) -> Complex64 {
    (q[0] - q[3]) * c12 + (q[1] - q[2]) * c21
}

/// The integrand at `(t₁, t₂) = (grid[i], grid[j])` of a materialised grid.
pub fn c2_integrand(
    correlators: &CorrelatorGrid,
    i: usize,
    j: usize,
    bath: &dyn BathCorrelation,
) -> Result<Complex64> {
    let q = correlators
        .get(i, j)
        .ok_or_else(|| Error::TimeOrdering(format!("point ({i}, {j}) lies outside the simplex")))?;
    let tau = correlators.grid().time(i) - correlators.grid().time(j);
    Ok(integrand_value(&q, bath.value(tau), bath.value(-tau)))
}

#[derive(Clone, Default)]
struct PairAcc {
    terms: [Complex64; 4],
    total: Complex64,
    half_terms: [Complex64; 4],
    half_total: Complex64,
    maxima: CorrelatorMaxima,
}

struct LineSum {
    pairs: Vec<PairAcc>,
    diagonal: Complex64,
}

fn check_resolution(grid: &TimeGrid) -> Result<()> {
    let n = grid.n_steps;
    if n < MIN_STEPS || n % 2 != 0 {
        return Err(Error::Resolution(format!(
            "the simplex rule needs an even number of steps ≥ {MIN_STEPS}, got {n}"
        )));
    }
    Ok(())
}

/// Sweeps the simplex once and integrates every channel pair.
///
/// Lines are processed in parallel and reduced in index order, so the result
/// does not depend on the thread count.
pub fn evaluate(source: &dyn CorrelatorSource, pairs: &[PairSpec<'_>]) -> Result<Evaluation> {
    let grid = *source.grid();
    check_resolution(&grid)?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "no channel pairs to integrate".into(),
        ));
    }
    for p in pairs {
        if p.late >= source.n_channels() || p.early >= source.n_channels() {
            return Err(Error::InvalidArgument(format!(
                "channel pair ({}, {}) exceeds the {} available channels",
                p.late,
                p.early,
                source.n_channels()
            )));
        }
    }
    let n = grid.n_steps;
    let h = grid.dt();
    let half_n = n / 2;
    let lag_values: Vec<(Vec<Complex64>, Vec<Complex64>)> = pairs
        .iter()
        .map(|p| {
            (0..=n)
                .map(|k| {
                    let tau = k as f64 * h;
                    (p.bath.value(tau), p.bath.value(-tau))
                })
                .unzip()
        })
        .collect();
    let index_pairs: Vec<(usize, usize)> = pairs.iter().map(|p| (p.late, p.early)).collect();
    let traversal = source.traversal();

    let lines: Vec<LineSum> = (0..=n)
        .into_par_iter()
        .map_init(
            || vec![Vec::new(); pairs.len()],
            |out, k| -> Result<LineSum> {
                source.line(k, &index_pairs, out)?;
                let mut sums = vec![PairAcc::default(); pairs.len()];
                let mut diagonal = ZERO;
                for (p, acc) in sums.iter_mut().enumerate() {
                    let (cplus, cminus) = &lag_values[p];
                    for (m, q) in out[p].iter().enumerate() {
                        let (i, j) = match traversal {
                            Traversal::Columns => (k + m, k),
                            Traversal::Rows => (k, m),
                        };
                        if p == 0 && i == j {
                            diagonal = q[0];
                        }
                        acc.maxima.absorb(q);
                        let (c12, c21) = (cplus[i - j], cminus[i - j]);
                        let parts = [q[0] * c12, q[1] * c21, -q[2] * c21, -q[3] * c12];
                        let f = integrand_value(q, c12, c21);
                        let w = simplex_weight(i, j, n, h);
                        for (t, v) in acc.terms.iter_mut().zip(parts) {
                            *t += v * w;
                        }
                        acc.total += f * w;
                        if i % 2 == 0 && j % 2 == 0 {
                            let w2 = simplex_weight(i / 2, j / 2, half_n, 2.0 * h);
                            for (t, v) in acc.half_terms.iter_mut().zip(parts) {
                                *t += v * w2;
                            }
                            acc.half_total += f * w2;
                        }
                    }
                }
                Ok(LineSum {
                    pairs: sums,
                    diagonal,
                })
            },
        )
        .collect::<Result<_>>()?;

    let mut totals = vec![PairAcc::default(); pairs.len()];
    let mut diagonal = vec![ZERO; n + 1];
    for (k, line) in lines.into_iter().enumerate() {
        diagonal[k] = line.diagonal;
        for (acc, l) in totals.iter_mut().zip(&line.pairs) {
            for (a, b) in acc.terms.iter_mut().zip(l.terms) {
                *a += b;
            }
            for (a, b) in acc.half_terms.iter_mut().zip(l.half_terms) {
                *a += b;
            }
            acc.total += l.total;
            acc.half_total += l.half_total;
            acc.maxima.merge(&l.maxima);
        }
    }
    let per_pair: Vec<C2Breakdown> = totals
        .iter()
        .map(|a| C2Breakdown::from_sums(a.terms, a.total, a.half_total, n))
        .collect();
    let breakdown = per_pair[1..].iter().fold(per_pair[0], |acc, b| acc.add(b));
    Ok(Evaluation {
        grid,
        a_value: source.a_value(),
        breakdown,
        per_pair,
        maxima: totals.iter().map(|a| a.maxima).collect(),
        diagonal,
        fourth_order_strings: source.fourth_order_strings(),
    })
}

/// Simplex quadrature of the second-order correction for channel 0.
pub fn c2_integral(
    correlators: &dyn CorrelatorSource,
    bath: &dyn BathCorrelation,
) -> Result<C2Breakdown> {
    Ok(evaluate(correlators, &[PairSpec::diagonal(0, bath)])?.breakdown)
}

/// `∫∫|C| · (2|⟨ÔÂÔ⟩| + |⟨ÂÔÔ⟩| + |⟨ÔÔÂ⟩|)` with the simplified bath integral.
pub fn c2_upper_bound(
    maxima: &CorrelatorMaxima,
    bath: &dyn BathCorrelation,
    t0: f64,
    t: f64,
) -> f64 {
    bath.abs_double_integral_bound(t0, t) * maxima.weight()
}

/// Single-integral Markovian approximation
/// `2 Re K ∫ dt₁ (Tr[Π_{t₁→t}(Ô ρ(t₁) Ô) Â] − Tr[ρ(t) Â])`, `K = ∫₀^∞ C`.
pub fn c2_longtime_markovian(
    model: &Dynamics,
    rho0: &DensityMatrix,
    o: &QOperator,
    a: &QOperator,
    bath: &dyn BathCorrelation,
    grid: &TimeGrid,
) -> Result<Complex64> {
    let dev = o.involution_deviation();
    if dev > 1e-10 {
        return Err(Error::NotInvolution(dev));
    }
    let kernel = bath.markov_kernel().ok_or_else(|| {
        Error::InvalidArgument("the Markovian form needs a bath with a finite kernel".into())
    })?;
    let n = grid.n_steps;
    let mut rho = Vec::with_capacity(n + 1);
    rho.push(rho0.matrix().clone());
    for i in 0..n {
        let next = model.grid_step_matrix(&rho[i], grid, i)?;
        rho.push(next);
    }
    let mut b: CMatrix = a.matrix().clone();
    let a_t = trace_product(&rho[n], a.matrix());
    let om = o.matrix();
    let mut integrand = vec![ZERO; n + 1];
    for i in (0..=n).rev() {
        if i < n {
            b = model.grid_adjoint_step_matrix(&b, grid, i)?;
        }
        let flipped = om * &rho[i] * om;
        integrand[i] = trace_product(&flipped, &b) - a_t;
    }
    Ok(trapezoid(&integrand, grid.dt()) * (2.0 * kernel.re))
}

/// Fits `|v(s) − v∞| ∝ e^{−κ s}` to equal-time correlators `v` sampled at
/// `t_i`, with lag `s = t − t_i`. The stationary value is the mean over the
/// largest 10% of lags.
pub fn fit_system_decay_kappa(grid: &TimeGrid, diagonal: &[Complex64]) -> Result<f64> {
    let n = grid.n_steps;
    if diagonal.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            found: diagonal.len(),
        });
    }
    if diagonal.len() < 8 {
        return Err(Error::FitFailure("fewer than 8 equal-time samples".into()));
    }
    // Index i has lag t − t_i; the largest lags sit at the start.
    let tail = (diagonal.len() / 10).max(1);
    let stationary: Complex64 = diagonal[..tail].iter().sum::<Complex64>() / tail as f64;
    let dist: Vec<f64> = diagonal.iter().map(|v| (v - stationary).norm()).collect();
    let max_d = dist.iter().copied().fold(0.0, f64::max);
    if max_d <= 1e-9 * stationary.norm().max(1.0) {
        return Err(Error::FitFailure(
            "equal-time correlators are constant; no decay detected".into(),
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, d) in dist.iter().enumerate().skip(tail) {
        if *d >= 1e-2 * max_d {
            xs.push(grid.t - grid.time(i));
            ys.push(d.ln());
        }
    }
    if xs.len() < 8 {
        return Err(Error::FitFailure(format!(
            "only {} samples above the noise floor",
            xs.len()
        )));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let kappa = -sxy / sxx;
    let span = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - xs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(kappa > 0.0) {
        return Err(Error::FitFailure(format!(
            "fitted rate {kappa:.3e} is not positive"
        )));
    }
    if kappa * span < 1.0 {
        return Err(Error::FitFailure(format!(
            "decay over the sampled lags is too weak (κ·span = {:.3})",
            kappa * span
        )));
    }
    Ok(kappa)
}

/// Fourth-order consistency estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C4Estimate {
    pub kappa: Option<f64>,
    /// `Re(C₂/⟨Â⟩)`.
    pub x: f64,
    /// `≈ x²` when correlators decay, else the separable growth bound.
    pub c4_over_a: f64,
    pub separable_growth_flag: bool,
    /// `(λ/(γκ))² (⟨ÔÔÔÔÂ⟩ − 4⟨ÔÔÔÂÔ⟩ + 6⟨ÔÔÂÔÔ⟩ − 4⟨ÔÂÔÔÔ⟩ + ⟨ÂÔÔÔÔ⟩)`.
    pub five_term: Option<Complex64>,
    /// `16 (λ/(γκ))² ⟨Â⟩`.
    pub five_term_expected: Option<Complex64>,
}

/// Inputs of [`c4_consistency`].
pub struct C4Input<'a> {
    pub c2: Complex64,
    pub a_value: Complex64,
    pub kappa: Option<f64>,
    pub bath: &'a dyn BathCorrelation,
    pub t0: f64,
    pub t: f64,
    pub strings: Option<[Complex64; 5]>,
    /// Magnitude `c` of the constant correlator in the separable bound.
    pub separable_scale: f64,
}

/// `x → x²` when κ is known; otherwise the separable-diagram bound
/// `c (∫∫|C|)² / |⟨Â⟩|`, which grows as `(t − t₀)²`.
pub fn c4_consistency(input: &C4Input<'_>) -> C4Estimate {
    let a_abs = input.a_value.norm();
    let ratio = if a_abs > 0.0 {
        input.c2 / input.a_value
    } else {
        ZERO
    };
    let x = ratio.re;
    match input.kappa {
        Some(kappa) => {
            let (five_term, expected) = match (input.strings, input.bath.markov_kernel()) {
                (Some(s), Some(k)) => {
                    let f = (k.re / kappa).powi(2);
                    let combo = s[0] - s[1] * 4.0 + s[2] * 6.0 - s[3] * 4.0 + s[4];
                    (Some(combo * f), Some(input.a_value * (16.0 * f)))
                }
                _ => (None, None),
            };
            C4Estimate {
                kappa: Some(kappa),
                x,
                c4_over_a: ratio.norm_sqr(),
                separable_growth_flag: false,
                five_term,
                five_term_expected: expected,
            }
        }
        None => {
            let b = input.bath.abs_double_integral_bound(input.t0, input.t);
            let c4_over_a = if a_abs > 0.0 {
                input.separable_scale * b * b / a_abs
            } else {
                f64::INFINITY
            };
            C4Estimate {
                kappa: None,
                x,
                c4_over_a,
                separable_growth_flag: true,
                five_term: None,
                five_term_expected: None,
            }
        }
    }
}

/// `Ô⁴Â − 4Ô³ÂÔ + 6Ô²ÂÔ² − 4ÔÂÔ³ + ÂÔ⁴`.
pub fn five_term_operator(o: &CMatrix, a: &CMatrix) -> CMatrix {
    let s = fourth_order_operators(o, a);
    let c = |x: f64| Complex64::new(x, 0.0);
    &s[0] - &s[1] * c(4.0) + &s[2] * c(6.0) - &s[3] * c(4.0) + &s[4]
}
