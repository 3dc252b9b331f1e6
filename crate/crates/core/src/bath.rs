//! Bath correlation functions `⟨X̂(t₁)X̂(t₂)⟩₀`.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that can serve as a stationary bath correlator `C(τ) = ⟨X̂(τ)X̂(0)⟩`.
pub trait BathCorrelation: Send + Sync {
    /// `C(τ)`; for Hermitian `X̂`, `C(−τ) = conj(C(τ))`.
    fn value(&self, tau: f64) -> Complex64;

    /// `∫_{t0}^{t} dt₁ ∫_{t0}^{t₁} dt₂ |C(t₁ − t₂)|`.
    fn abs_double_integral(&self, t0: f64, t: f64) -> f64 {
        numeric_abs_double_integral(|tau| self.value(tau).norm(), t - t0, self.time_scale())
    }

    /// Cheap upper bound on [`BathCorrelation::abs_double_integral`].
    fn abs_double_integral_bound(&self, t0: f64, t: f64) -> f64;

    /// `∫₀^∞ C(τ) dτ` when it exists.
    fn markov_kernel(&self) -> Option<Complex64>;

    /// Shortest time scale on which `C` varies; sets numeric resolution.
    fn time_scale(&self) -> f64;
}

/// One term `λ e^{−γ|τ|} e^{−iΩτ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpTerm {
    pub lambda: f64,
    pub gamma: f64,
    #[serde(default)]
    pub omega: f64,
}

/// Sum of decaying exponentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathCorrelator {
    terms: Vec<ExpTerm>,
}

impl BathCorrelator {
    pub fn new(terms: Vec<ExpTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument(
                "bath needs at least one term".into(),
            ));
        }
        for (k, term) in terms.iter().enumerate() {
            if !(term.gamma.is_finite() && term.gamma > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "bath term {k}: decay rate {} must be positive",
                    term.gamma
                )));
            }
            if !(term.lambda.is_finite() && term.omega.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "bath term {k} has a non-finite parameter"
                )));
            }
        }
        let c0: f64 = terms.iter().map(|t| t.lambda).sum();
        if c0 < 0.0 {
            log::warn!("bath correlator has negative weight at zero lag ({c0})");
        }
        Ok(Self { terms })
    }

    /// Single real term `λ e^{−γ|τ|}`.
    pub fn exponential(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(vec![ExpTerm {
            lambda,
            gamma,
            omega: 0.0,
        }])
    }

    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }

    /// Same bath with every amplitude multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| ExpTerm {
                    lambda: t.lambda * s,
                    ..*t
                })
                .collect(),
        }
    }

    /// `C(t₁, t₂)`.
    pub fn correlator_value(&self, t1: f64, t2: f64) -> Complex64 {
        self.value(t1 - t2)
    }

    /// `Σ λ_k / γ_k` for real single-sign baths, the effective `λ/γ`.
    pub fn lambda_over_gamma(&self) -> f64 {
        self.terms.iter().map(|t| t.lambda / t.gamma).sum()
    }

    /// Smallest decay rate among the terms.
    pub fn min_gamma(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.gamma)
            .fold(f64::INFINITY, f64::min)
    }

    fn is_real_nonnegative(&self) -> bool {
        self.terms.iter().all(|t| t.omega == 0.0 && t.lambda >= 0.0)
    }
}

/// `λ[T/γ + (e^{−γT} − 1)/γ²]`.
pub fn exp_abs_double_integral(lambda: f64, gamma: f64, span: f64) -> f64 {
    let x = gamma * span;
    lambda * (span / gamma + (-x).exp_m1() / (gamma * gamma))
}

impl BathCorrelation for BathCorrelator {
    fn value(&self, tau: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| Complex64::from_polar(t.lambda * (-t.gamma * tau.abs()).exp(), -t.omega * tau))
            .sum()
    }

    fn abs_double_integral(&self, t0: f64, t: f64) -> f64 {
        let span = (t - t0).max(0.0);
        if self.is_real_nonnegative() {
            self.terms
                .iter()
                .map(|term| exp_abs_double_integral(term.lambda, term.gamma, span))
                .sum()
        } else {
            numeric_abs_double_integral(|tau| self.value(tau).norm(), span, self.time_scale())
        }
    }

    fn abs_double_integral_bound(&self, t0: f64, t: f64) -> f64 {
        let rate: f64 = self.terms.iter().map(|t| t.lambda.abs() / t.gamma).sum();
        rate * (t - t0).max(0.0)
    }

    fn markov_kernel(&self) -> Option<Complex64> {
        Some(
            self.terms
                .iter()
                .map(|t| Complex64::new(t.lambda, 0.0) / Complex64::new(t.gamma, t.omega))
                .sum(),
        )
    }

    fn time_scale(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| 1.0 / (t.gamma + t.omega.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `∫₀^T (T − τ) f(τ) dτ` by composite Simpson; `f` should be smooth on `scale`.
fn numeric_abs_double_integral(f: impl Fn(f64) -> f64, span: f64, scale: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let per_scale = 100.0;
    let n = ((span / scale * per_scale).ceil() as usize).clamp(200, 2_000_000);
    let n = n + n % 2;
    let h = span / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let tau = k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (span - tau) * f(tau);
    }
    acc * h / 3.0
}

/// One harmonic bath mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathMode {
    pub energy: f64,
    pub coupling: f64,
    pub truncation: usize,
    #[serde(default)]
    pub occupation: f64,
}

/// Finite set of bosonic modes with `X̂ = Σ fᵢ (cᵢ† + cᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedBath {
    modes: Vec<BathMode>,
}

/// Bose–Einstein occupation at temperature `temperature` (zero gives vacuum).
pub fn bose_occupation(energy: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        0.0
    } else {
        1.0 / (energy / temperature).exp_m1()
    }
}

impl DiscretizedBath {
    pub fn new(modes: Vec<BathMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidArgument(
                "discretized bath needs modes".into(),
            ));
        }
        for (k, m) in modes.iter().enumerate() {
            if !(m.energy.is_finite() && m.energy > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "bath mode {k}: energy {} must be positive",
                    m.energy
                )));
            }
            if m.truncation < 2 {
                return Err(Error::InvalidArgument(format!(
                    "bath mode {k}: truncation {} is below 2",
                    m.truncation
                )));
            }
            if !(m.occupation >= 0.0 && m.coupling.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "bath mode {k}: invalid coupling or occupation"
                )));
            }
        }
        Ok(Self { modes })
    }

    /// `n` vacuum modes on `[e_min, e_max]` whose weights sample a Lorentzian
    /// of width `gamma` centred at `omega`, so that the correlator follows
    /// `λ e^{−γτ} e^{−iΩτ}` until the comb recurs.
    pub fn lorentzian_comb(
        lambda: f64,
        gamma: f64,
        omega: f64,
        e_min: f64,
        e_max: f64,
        n: usize,
        truncation: usize,
    ) -> Result<Self> {
        if n == 0 || !(e_max > e_min) || e_min <= 0.0 {
            return Err(Error::InvalidArgument(
                "comb needs n ≥ 1 and 0 < e_min < e_max".into(),
            ));
        }
        let spacing = if n > 1 {
            (e_max - e_min) / (n - 1) as f64
        } else {
            e_max - e_min
        };
        let modes = (0..n)
            .map(|i| {
                let e = if n > 1 {
                    e_min + spacing * i as f64
                } else {
                    0.5 * (e_min + e_max)
                };
                let density = gamma / std::f64::consts::PI / (gamma * gamma + (e - omega).powi(2));
                BathMode {
                    energy: e,
                    coupling: (lambda * spacing * density).sqrt(),
                    truncation,
                    occupation: 0.0,
                }
            })
            .collect();
        Self::new(modes)
    }

    pub fn modes(&self) -> &[BathMode] {
        &self.modes
    }

    /// Same modes with thermal occupations at `temperature`.
    pub fn thermal(&self, temperature: f64) -> Self {
        Self {
            modes: self
                .modes
                .iter()
                .map(|m| BathMode {
                    occupation: bose_occupation(m.energy, temperature),
                    ..*m
                })
                .collect(),
        }
    }

    /// `Σᵢ fᵢ²[(n̄ᵢ+1)e^{−iεᵢτ} + n̄ᵢ e^{iεᵢτ}]`.
    pub fn exact_mode_correlator(&self, tau: f64) -> Complex64 {
        self.modes
            .iter()
            .map(|m| {
                let f2 = m.coupling * m.coupling;
                Complex64::from_polar(f2 * (m.occupation + 1.0), -m.energy * tau)
                    + Complex64::from_polar(f2 * m.occupation, m.energy * tau)
            })
            .sum()
    }

    /// Revival time `2π/Δε` of the comb (`2π/ε` for a single mode).
    pub fn recurrence_time(&self) -> f64 {
        let mut energies: Vec<f64> = self.modes.iter().map(|m| m.energy).collect();
        energies.sort_by(f64::total_cmp);
        let min_gap = energies
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|g| *g > 1e-12)
            .fold(f64::INFINITY, f64::min);
        let scale = if min_gap.is_finite() {
            min_gap
        } else {
            energies[0]
        };
        2.0 * std::f64::consts::PI / scale
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.truncation).collect()
    }
}

impl BathCorrelation for DiscretizedBath {
    fn value(&self, tau: f64) -> Complex64 {
        self.exact_mode_correlator(tau)
    }

    fn abs_double_integral_bound(&self, t0: f64, t: f64) -> f64 {
        let c0: f64 = self
            .modes
            .iter()
            .map(|m| m.coupling * m.coupling * (2.0 * m.occupation + 1.0))
            .sum();
        let span = (t - t0).max(0.0);
        0.5 * c0 * span * span
    }

    fn markov_kernel(&self) -> Option<Complex64> {
        None
    }

    fn time_scale(&self) -> f64 {
        let e_max = self.modes.iter().map(|m| m.energy).fold(0.0, f64::max);
        1.0 / e_max
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    tau: f64,
    re: f64,
    im: f64,
}

/// `C(τ)` at `τ = k·span/n`, `k = 0..=n`.
pub fn sample_bath(bath: &dyn BathCorrelation, span: f64, n: usize) -> Vec<(f64, Complex64)> {
    (0..=n)
        .map(|k| {
            let tau = span * k as f64 / n as f64;
            (tau, bath.value(tau))
        })
        .collect()
}

/// Writes samples as CSV with columns `tau,re,im`; floats keep full precision.
pub fn write_samples_csv<W: Write>(samples: &[(f64, Complex64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (tau, c) in samples {
        w.serialize(SampleRow {
            tau: *tau,
            re: c.re,
            im: c.im,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<(f64, Complex64)>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["tau", "re", "im"] {
        return Err(Error::Data(format!(
            "bath samples need the header tau,re,im, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: SampleRow = row?;
        if !(row.tau.is_finite() && row.re.is_finite() && row.im.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite bath sample at τ = {}",
                row.tau
            )));
        }
        out.push((row.tau, Complex64::new(row.re, row.im)));
    }
    Ok(out)
}

/// Result of [`fit_exponential`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpFit {
    pub bath: BathCorrelator,
    /// Root-mean-square residual of the `ln|C|` fit.
    pub residual: f64,
    pub samples_used: usize,
}

/// Default fitting window `[0.2/γ, 3/γ]`, cut before `recurrence` if given.
pub fn default_fit_window(gamma_guess: f64, recurrence: Option<f64>) -> (f64, f64) {
    let hi = 3.0 / gamma_guess;
    let hi = match recurrence {
        Some(r) => hi.min(0.9 * r),
        None => hi,
    };
    (0.2 / gamma_guess, hi)
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Least-squares fit of `ln|C(τ)|` and the unwrapped phase over `window`.
pub fn fit_exponential(samples: &[(f64, Complex64)], window: (f64, f64)) -> Result<ExpFit> {
    let mut pts: Vec<(f64, Complex64)> = samples
        .iter()
        .copied()
        .filter(|(tau, c)| *tau >= window.0 && *tau <= window.1 && c.norm() > 0.0)
        .collect();
    if pts.len() < 8 {
        return Err(Error::FitFailure(format!(
            "{} samples inside [{}, {}], need at least 8",
            pts.len(),
            window.0,
            window.1
        )));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let logs: Vec<f64> = pts.iter().map(|p| p.1.norm().ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &logs);
    if !(slope < 0.0) {
        return Err(Error::FitFailure(format!(
            "correlator does not decay (log slope {slope:.3e})"
        )));
    }
    let mut phases = Vec::with_capacity(pts.len());
    let mut prev = pts[0].1.arg();
    let mut offset = 0.0;
    for p in &pts {
        let raw = p.1.arg();
        let mut d = raw + offset - prev;
        while d > std::f64::consts::PI {
            offset -= 2.0 * std::f64::consts::PI;
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            offset += 2.0 * std::f64::consts::PI;
            d += 2.0 * std::f64::consts::PI;
        }
        prev = raw + offset;
        phases.push(prev);
    }
    let (phase_slope, _) = linear_fit(&xs, &phases);
    let residual = (xs
        .iter()
        .zip(&logs)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    let bath = BathCorrelator::new(vec![ExpTerm {
        lambda: intercept.exp(),
        gamma: -slope,
        omega: -phase_slope,
    }])?;
    Ok(ExpFit {
        bath,
        residual,
        samples_used: xs.len(),
    })
}
