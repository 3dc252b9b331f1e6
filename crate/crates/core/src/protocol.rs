//! Reliability verdicts: full, bounded and multichannel variants, and the
//! reliable-time horizon.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{BathCorrelation, BathCorrelator};
use crate::dynamics::{Dynamics, TimeGrid};
use crate::error::{Error, Result};
use crate::estimator::{
    c2_longtime_markovian, c2_upper_bound, c4_consistency, evaluate, fit_system_decay_kappa,
    C4Estimate, C4Input, CorrelatorMaxima, CorrelatorSource, Evaluation, ModelCorrelators,
    PairSpec, SourceTag,
};
use crate::hilbert::{DensityMatrix, QOperator};
use crate::quadrature::simplex_trapezoid_cumulative;

pub const DEFAULT_ETA: f64 = 0.1;

/// `|⟨Â⟩|` below this multiple of `‖Â‖` makes the ratio meaningless.
pub const ABS_FLOOR_FACTOR: f64 = 1e-6;

/// Bounded mode reports `inconclusive` for `η < bound_ratio ≤ GUARD_BAND·η`.
pub const GUARD_BAND: f64 = 3.0;

/// Relative change of the Markovian estimate between `t/2` and `t` that still
/// counts as time-independent.
pub const STATIONARY_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Reliable,
    Unreliable,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Reliable => "reliable",
            Verdict::Unreliable => "unreliable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolMode {
    Full,
    Bounded,
    Multichannel,
}

/// Outcome of one protocol run. Flat by design: serializes to one JSON object
/// or one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub observable: String,
    pub mode: ProtocolMode,
    pub source_tag: SourceTag,
    pub t0: f64,
    pub t: f64,
    pub n_steps: usize,
    pub channel_pairs: usize,
    pub a_re: f64,
    pub a_im: f64,
    pub abs_floor: f64,
    pub c2_re: Option<f64>,
    pub c2_im: Option<f64>,
    pub c2_quadrature_error: Option<f64>,
    pub resolution_flag: bool,
    pub c2_bound: f64,
    pub ratio: Option<f64>,
    pub bound_ratio: f64,
    pub threshold_eta: f64,
    pub verdict: Verdict,
    pub all_times: bool,
    pub markov_c2_re: Option<f64>,
    pub markov_c2_im: Option<f64>,
    pub kappa: Option<f64>,
    pub c4_x: f64,
    pub c4_over_a: f64,
    pub separable_growth_flag: bool,
    pub five_term_re: Option<f64>,
    pub five_term_im: Option<f64>,
    pub five_term_expected_re: Option<f64>,
    pub five_term_expected_im: Option<f64>,
    pub by_accident: bool,
}

impl ReliabilityReport {
    pub fn a_value(&self) -> Complex64 {
        Complex64::new(self.a_re, self.a_im)
    }

    pub fn c2_total(&self) -> Option<Complex64> {
        Some(Complex64::new(self.c2_re?, self.c2_im?))
    }

    pub fn markov_c2(&self) -> Option<Complex64> {
        Some(Complex64::new(self.markov_c2_re?, self.markov_c2_im?))
    }

    pub fn c4(&self) -> C4Estimate {
        let pair = |re: Option<f64>, im: Option<f64>| Some(Complex64::new(re?, im?));
        C4Estimate {
            kappa: self.kappa,
            x: self.c4_x,
            c4_over_a: self.c4_over_a,
            separable_growth_flag: self.separable_growth_flag,
            five_term: pair(self.five_term_re, self.five_term_im),
            five_term_expected: pair(self.five_term_expected_re, self.five_term_expected_im),
        }
    }

    fn set_c4(&mut self, c4: &C4Estimate) {
        self.kappa = c4.kappa;
        self.c4_x = c4.x;
        self.c4_over_a = c4.c4_over_a;
        self.separable_growth_flag = c4.separable_growth_flag;
        self.five_term_re = c4.five_term.map(|v| v.re);
        self.five_term_im = c4.five_term.map(|v| v.im);
        self.five_term_expected_re = c4.five_term_expected.map(|v| v.re);
        self.five_term_expected_im = c4.five_term_expected.map(|v| v.im);
    }

    /// Ratio that decided the verdict.
    pub fn deciding_ratio(&self) -> f64 {
        self.ratio.unwrap_or(self.bound_ratio)
    }

    /// Writes reports as CSV with a header row.
    pub fn write_csv<W: Write>(reports: &[ReliabilityReport], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in reports {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Full-mode rule: the ratio test plus the fourth-order guard, which the
/// all-times Markovian regime may replace.
pub fn full_verdict(ratio: f64, c4_over_a: f64, all_times: bool, eta: f64) -> Verdict {
    if ratio > eta {
        Verdict::Unreliable
    } else if all_times || c4_over_a <= eta * eta {
        Verdict::Reliable
    } else {
        Verdict::Inconclusive
    }
}

/// Bounded-mode rule with the guard band.
pub fn bounded_verdict(bound_ratio: f64, c4_over_a: f64, eta: f64) -> Verdict {
    if bound_ratio <= eta && c4_over_a <= eta * eta {
        Verdict::Reliable
    } else if bound_ratio <= GUARD_BAND * eta {
        Verdict::Inconclusive
    } else {
        Verdict::Unreliable
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "η = {eta} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Markovian long-time estimate at `t` and at the midpoint of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovRegime {
    pub value: Complex64,
    pub midpoint_value: Complex64,
    pub stationary: bool,
}

/// Evaluates the Markovian form on the grid and on its first half. `None`
/// when the form does not apply (unitary dynamics, a non-involutory `Ô`, or a
/// bath without a finite kernel).
pub fn markov_regime(
    system: &Dynamics,
    rho0: &DensityMatrix,
    o: &QOperator,
    a: &QOperator,
    bath: &dyn BathCorrelation,
    grid: &TimeGrid,
) -> Result<Option<MarkovRegime>> {
    if system.is_unitary() || bath.markov_kernel().is_none() || o.involution_deviation() > 1e-10 {
        return Ok(None);
    }
    let half_steps = (grid.n_steps / 2).max(1);
    let half = TimeGrid::new(grid.t0, grid.t0 + half_steps as f64 * grid.dt(), half_steps)?;
    let value = c2_longtime_markovian(system, rho0, o, a, bath, grid)?;
    let midpoint_value = c2_longtime_markovian(system, rho0, o, a, bath, &half)?;
    let stationary = (value - midpoint_value).norm() <= STATIONARY_TOLERANCE * value.norm();
    Ok(Some(MarkovRegime {
        value,
        midpoint_value,
        stationary,
    }))
}

/// Everything the verdict logic needs besides the correlators.
pub struct Assessment<'a> {
    pub observable: String,
    pub source: &'a dyn CorrelatorSource,
    pub pairs: Vec<PairSpec<'a>>,
    /// `‖Â‖`, sets the division floor.
    pub a_norm: f64,
    /// Scale `c` of the separable fourth-order bound, `‖Ô‖⁴‖Â‖`.
    pub separable_scale: f64,
    pub markov: Option<MarkovRegime>,
    pub eta: f64,
    pub mode: ProtocolMode,
}

fn blank_report(
    observable: String,
    mode: ProtocolMode,
    tag: SourceTag,
    grid: &TimeGrid,
    a_value: Complex64,
    abs_floor: f64,
    eta: f64,
) -> ReliabilityReport {
    ReliabilityReport {
        observable,
        mode,
        source_tag: tag,
        t0: grid.t0,
        t: grid.t,
        n_steps: grid.n_steps,
        channel_pairs: 1,
        a_re: a_value.re,
        a_im: a_value.im,
        abs_floor,
        c2_re: None,
        c2_im: None,
        c2_quadrature_error: None,
        resolution_flag: false,
        c2_bound: 0.0,
        ratio: None,
        bound_ratio: 0.0,
        threshold_eta: eta,
        verdict: Verdict::Inconclusive,
        all_times: false,
        markov_c2_re: None,
        markov_c2_im: None,
        kappa: None,
        c4_x: 0.0,
        c4_over_a: 0.0,
        separable_growth_flag: false,
        five_term_re: None,
        five_term_im: None,
        five_term_expected_re: None,
        five_term_expected_im: None,
        by_accident: false,
    }
}

fn safe_ratio(num: f64, a_abs: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / a_abs
    }
}

/// Integrates the correlators of `input.source` and applies the full-mode
/// rule. Returns the report together with the raw evaluation.
pub fn assess(input: &Assessment<'_>) -> Result<(ReliabilityReport, Evaluation)> {
    check_eta(input.eta)?;
    let eval = evaluate(input.source, &input.pairs)?;
    let grid = eval.grid;
    let a_value = eval.a_value;
    let abs_floor = ABS_FLOOR_FACTOR * input.a_norm;
    let mut report = blank_report(
        input.observable.clone(),
        input.mode,
        input.source.tag(),
        &grid,
        a_value,
        abs_floor,
        input.eta,
    );
    report.channel_pairs = input.pairs.len();
    let c2 = eval.breakdown.total;
    report.c2_re = Some(c2.re);
    report.c2_im = Some(c2.im);
    report.c2_quadrature_error = Some(eval.breakdown.estimated_quadrature_error);
    report.resolution_flag = eval.breakdown.resolution_flag;
    report.c2_bound = input
        .pairs
        .iter()
        .zip(&eval.maxima)
        .map(|(p, m)| c2_upper_bound(m, p.bath, grid.t0, grid.t))
        .sum();
    let a_abs = a_value.norm();
    let ratio = safe_ratio(c2.norm(), a_abs);
    report.ratio = Some(ratio);
    report.bound_ratio = safe_ratio(report.c2_bound, a_abs);

    let zero_bath = input
        .pairs
        .iter()
        .all(|p| p.bath.abs_double_integral_bound(grid.t0, grid.t) == 0.0);
    if let Some(m) = input.markov {
        report.markov_c2_re = Some(m.value.re);
        report.markov_c2_im = Some(m.value.im);
    }
    report.all_times = zero_bath || input.markov.is_some_and(|m| m.stationary);

    let kappa = match fit_system_decay_kappa(&grid, &eval.diagonal) {
        Ok(k) => Some(k),
        Err(e) => {
            log::debug!("no system decay rate: {e}");
            None
        }
    };
    let c4 = c4_consistency(&C4Input {
        c2,
        a_value,
        kappa,
        bath: input.pairs[0].bath,
        t0: grid.t0,
        t: grid.t,
        strings: eval.fourth_order_strings,
        separable_scale: input.separable_scale,
    });
    report.set_c4(&c4);

    report.verdict = if a_abs <= abs_floor {
        Verdict::Inconclusive
    } else {
        full_verdict(ratio, c4.c4_over_a, report.all_times, input.eta)
    };
    if report.resolution_flag {
        log::warn!(
            "{}: quadrature error {:.2e} exceeds {}% of |C₂|; refine the grid",
            report.observable,
            eval.breakdown.estimated_quadrature_error,
            100.0 * crate::estimator::RESOLUTION_FLAG_FRACTION
        );
    }
    Ok((report, eval))
}

fn separable_scale(o_norm: f64, a_norm: f64) -> f64 {
    o_norm.powi(4) * a_norm
}

/// The three-step protocol on the correlators of `system` (full mode, ideal
/// correlators).
pub fn run_protocol(
    system: &Dynamics,
    rho0: &DensityMatrix,
    a: &QOperator,
    o: &QOperator,
    bath: &dyn BathCorrelation,
    grid: &TimeGrid,
    eta: f64,
) -> Result<ReliabilityReport> {
    run_protocol_tagged(system, rho0, a, o, bath, grid, eta, SourceTag::Ideal, "A")
}

/// As [`run_protocol`], with the correlators attributed to `tag` and the
/// observable named `name`. With [`SourceTag::PerturbedMeasured`], `system` is
/// the model the measured data come from.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol_tagged(
    system: &Dynamics,
    rho0: &DensityMatrix,
    a: &QOperator,
    o: &QOperator,
    bath: &dyn BathCorrelation,
    grid: &TimeGrid,
    eta: f64,
    tag: SourceTag,
    name: &str,
) -> Result<ReliabilityReport> {
    check_eta(eta)?;
    let source = ModelCorrelators::new(system, rho0, std::slice::from_ref(o), a, grid, tag)?;
    let markov = markov_regime(system, rho0, o, a, bath, grid)?;
    let (report, _) = assess(&Assessment {
        observable: name.to_string(),
        source: &source,
        pairs: vec![PairSpec::diagonal(0, bath)],
        a_norm: a.operator_norm(),
        separable_scale: separable_scale(o.operator_norm(), a.operator_norm()),
        markov,
        eta,
        mode: ProtocolMode::Full,
    })?;
    Ok(report)
}

/// Magnitudes entering the bound, as used by the bounded protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualTimeInput {
    pub maxima: CorrelatorMaxima,
    pub a_value: Complex64,
    pub a_norm: f64,
    pub o_norm: f64,
    pub tag: SourceTag,
}

/// Bounded protocol: only correlator magnitudes and the bath decay enter.
pub fn run_protocol_bounded(
    input: &EqualTimeInput,
    bath: &dyn BathCorrelation,
    t0: f64,
    t: f64,
    eta: f64,
) -> Result<ReliabilityReport> {
    check_eta(eta)?;
    let abs_floor = ABS_FLOOR_FACTOR * input.a_norm;
    let grid = TimeGrid::new(t0, t, 1)?;
    let mut report = blank_report(
        "A".to_string(),
        ProtocolMode::Bounded,
        input.tag,
        &grid,
        input.a_value,
        abs_floor,
        eta,
    );
    report.n_steps = 0;
    let bound = c2_upper_bound(&input.maxima, bath, t0, t);
    let a_abs = input.a_value.norm();
    report.c2_bound = bound;
    report.bound_ratio = safe_ratio(bound, a_abs);
    report.all_times = bath.abs_double_integral_bound(t0, t) == 0.0;
    let c4 = c4_consistency(&C4Input {
        c2: Complex64::new(bound, 0.0),
        a_value: input.a_value,
        kappa: None,
        bath,
        t0,
        t,
        strings: None,
        separable_scale: separable_scale(input.o_norm, input.a_norm),
    });
    report.set_c4(&c4);
    report.verdict = if a_abs <= abs_floor {
        Verdict::Inconclusive
    } else {
        bounded_verdict(report.bound_ratio, c4.c4_over_a, eta)
    };
    Ok(report)
}

/// Bounded protocol fed with the correlator maxima sampled from `system`.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol_bounded_on_model(
    system: &Dynamics,
    rho0: &DensityMatrix,
    a: &QOperator,
    o: &QOperator,
    bath: &dyn BathCorrelation,
    grid: &TimeGrid,
    eta: f64,
    tag: SourceTag,
    name: &str,
) -> Result<ReliabilityReport> {
    let source = ModelCorrelators::new(system, rho0, std::slice::from_ref(o), a, grid, tag)?;
    let eval = evaluate(&source, &[PairSpec::diagonal(0, bath)])?;
    let mut report = run_protocol_bounded(
        &EqualTimeInput {
            maxima: eval.maxima[0],
            a_value: eval.a_value,
            a_norm: a.operator_norm(),
            o_norm: o.operator_norm(),
            tag,
        },
        bath,
        grid.t0,
        grid.t,
        eta,
    )?;
    report.observable = name.to_string();
    report.n_steps = grid.n_steps;
    Ok(report)
}

/// One coupling channel `Ôᵢ X̂ᵢ`.
#[derive(Debug, Clone)]
pub struct Channel {
    pub operator: QOperator,
    pub bath: BathCorrelator,
}

/// Several coupling channels, independent or with cross-correlated baths.
#[derive(Debug, Clone)]
pub struct MultiChannelConfig {
    pub channels: Vec<Channel>,
    /// Include `i ≠ j` channel pairs.
    pub cross_terms: bool,
    /// `⟨X̂ᵢ(t₁) X̂ⱼ(t₂)⟩` for ordered pairs `i ≠ j`.
    pub cross_baths: Vec<(usize, usize, BathCorrelator)>,
}

impl MultiChannelConfig {
    pub fn independent(channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one channel is required".into(),
            ));
        }
        Ok(Self {
            channels,
            cross_terms: false,
            cross_baths: Vec::new(),
        })
    }

    pub fn correlated(
        channels: Vec<Channel>,
        cross_baths: Vec<(usize, usize, BathCorrelator)>,
    ) -> Result<Self> {
        let mut c = Self::independent(channels)?;
        c.cross_terms = true;
        c.cross_baths = cross_baths;
        Ok(c)
    }

    /// Channel pairs with their bath correlators: `N` or `N²` of them.
    pub fn pairs(&self) -> Result<Vec<PairSpec<'_>>> {
        let n = self.channels.len();
        let mut out = Vec::new();
        for late in 0..n {
            for early in 0..n {
                if late == early {
                    out.push(PairSpec::diagonal(late, &self.channels[late].bath));
                } else if self.cross_terms {
                    let bath = self
                        .cross_baths
                        .iter()
                        .find(|(i, j, _)| *i == late && *j == early)
                        .map(|(_, _, b)| b)
                        .ok_or(Error::MissingCrossCorrelator(late, early))?;
                    out.push(PairSpec { late, early, bath });
                }
            }
        }
        Ok(out)
    }
}

/// Contribution of one channel pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairContribution {
    pub late: usize,
    pub early: usize,
    pub c2_re: f64,
    pub c2_im: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiChannelReport {
    pub report: ReliabilityReport,
    pub pairs: Vec<PairContribution>,
}

/// Full protocol summed over channel pairs.
pub fn run_protocol_multichannel(
    system: &Dynamics,
    rho0: &DensityMatrix,
    a: &QOperator,
    config: &MultiChannelConfig,
    grid: &TimeGrid,
    eta: f64,
    tag: SourceTag,
) -> Result<MultiChannelReport> {
    check_eta(eta)?;
    let pairs = config.pairs()?;
    let ops: Vec<QOperator> = config.channels.iter().map(|c| c.operator.clone()).collect();
    let source = ModelCorrelators::new(system, rho0, &ops, a, grid, tag)?;
    let o_norm: f64 = ops.iter().map(QOperator::operator_norm).sum();
    let markov = if ops.len() == 1 {
        markov_regime(system, rho0, &ops[0], a, &config.channels[0].bath, grid)?
    } else {
        None
    };
    let (report, eval) = assess(&Assessment {
        observable: "A".to_string(),
        source: &source,
        pairs: pairs.clone(),
        a_norm: a.operator_norm(),
        separable_scale: separable_scale(o_norm, a.operator_norm()),
        markov,
        eta,
        mode: ProtocolMode::Multichannel,
    })?;
    let contributions = pairs
        .iter()
        .zip(&eval.per_pair)
        .zip(&eval.maxima)
        .map(|((p, b), m)| PairContribution {
            late: p.late,
            early: p.early,
            c2_re: b.total.re,
            c2_im: b.total.im,
            bound: c2_upper_bound(m, p.bath, grid.t0, grid.t),
        })
        .collect();
    Ok(MultiChannelReport {
        report,
        pairs: contributions,
    })
}

/// Flags observables that pass while another observable of the same run fails.
pub fn flag_by_accident(reports: &mut [ReliabilityReport]) {
    let any_failed = reports.iter().any(|r| r.verdict == Verdict::Unreliable);
    for r in reports.iter_mut() {
        r.by_accident =
            any_failed && r.verdict != Verdict::Unreliable && r.deciding_ratio() <= r.threshold_eta;
    }
}

/// Ratio at one checkpoint time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSample {
    pub t: f64,
    pub ratio: f64,
    pub bound_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    /// Last checkpoint before the first one with `ratio > η`; `None` when the
    /// first checkpoint already fails.
    pub time: Option<f64>,
    pub all_times: bool,
    pub t_max: f64,
    pub samples: Vec<HorizonSample>,
}

/// Horizon from checkpoint ratios sorted by time.
pub fn horizon_from_samples(samples: Vec<HorizonSample>, eta: f64, all_times: bool) -> Horizon {
    let t_max = samples.last().map_or(f64::NAN, |s| s.t);
    let passing = samples.iter().take_while(|s| s.ratio <= eta).count();
    let time = if all_times && passing == samples.len() {
        Some(t_max)
    } else if passing == 0 {
        None
    } else {
        Some(samples[passing - 1].t)
    };
    Horizon {
        time,
        all_times: all_times && passing == samples.len(),
        t_max,
        samples,
    }
}

/// Runs the full protocol at `n_checkpoints` equally spaced times up to
/// `t_max`, each on its own `n_steps` grid.
#[allow(clippy::too_many_arguments)]
pub fn reliable_time_horizon(
    system: &Dynamics,
    rho0: &DensityMatrix,
    a: &QOperator,
    o: &QOperator,
    bath: &dyn BathCorrelation,
    t0: f64,
    t_max: f64,
    n_checkpoints: usize,
    n_steps: usize,
    eta: f64,
) -> Result<(Horizon, Vec<ReliabilityReport>)> {
    checkpoint_horizon(t0, t_max, n_checkpoints, n_steps, eta, |grid| {
        run_protocol(system, rho0, a, o, bath, grid, eta)
    })
}

/// Runs `run` on `n_checkpoints` equally spaced grids `[t0, tₖ]` with
/// `n_steps` steps each and reads the horizon off the reports.
pub fn checkpoint_horizon(
    t0: f64,
    t_max: f64,
    n_checkpoints: usize,
    n_steps: usize,
    eta: f64,
    run: impl Fn(&TimeGrid) -> Result<ReliabilityReport> + Sync,
) -> Result<(Horizon, Vec<ReliabilityReport>)> {
    if n_checkpoints == 0 {
        return Err(Error::InvalidArgument(
            "need at least one checkpoint".into(),
        ));
    }
    let reports: Vec<ReliabilityReport> = (1..=n_checkpoints)
        .into_par_iter()
        .map(|k| {
            let t = if k == n_checkpoints {
                t_max
            } else {
                t0 + (t_max - t0) * k as f64 / n_checkpoints as f64
            };
            run(&TimeGrid::new(t0, t, n_steps)?)
        })
        .collect::<Result<_>>()?;
    let samples = reports
        .iter()
        .map(|r| HorizonSample {
            t: r.t,
            ratio: if r.a_value().norm() <= r.abs_floor {
                f64::INFINITY
            } else {
                r.deciding_ratio()
            },
            bound_ratio: r.bound_ratio,
        })
        .collect();
    let all_times = reports.last().is_some_and(|r| r.all_times);
    Ok((horizon_from_samples(samples, eta, all_times), reports))
}

/// Ratios at every grid time for correlators that do not depend on the
/// observation time `t` (the constant worst case); one sweep of the simplex.
pub fn stationary_ratio_series(
    source: &dyn CorrelatorSource,
    bath: &dyn BathCorrelation,
) -> Result<Vec<HorizonSample>> {
    let grid = *source.grid();
    let n = grid.n_steps;
    let h = grid.dt();
    let lags: Vec<(Complex64, Complex64)> = (0..=n)
        .map(|k| (bath.value(k as f64 * h), bath.value(-(k as f64) * h)))
        .collect();
    let lines: Vec<(usize, Vec<crate::estimator::Quad>)> = (0..=n)
        .into_par_iter()
        .map_init(
            || vec![Vec::new()],
            |out, k| -> Result<(usize, Vec<crate::estimator::Quad>)> {
                source.line(k, &[(0, 0)], out)?;
                Ok((k, std::mem::take(&mut out[0])))
            },
        )
        .collect::<Result<_>>()?;
    let mut rows: Vec<Vec<Complex64>> = (0..=n)
        .map(|i| vec![Complex64::new(0.0, 0.0); i + 1])
        .collect();
    let mut maxima = vec![CorrelatorMaxima::default(); n + 1];
    for (k, line) in lines {
        for (m, q) in line.iter().enumerate() {
            let (i, j) = match source.traversal() {
                crate::estimator::Traversal::Columns => (k + m, k),
                crate::estimator::Traversal::Rows => (k, m),
            };
            let (c12, c21) = lags[i - j];
            rows[i][j] = crate::estimator::integrand_value(q, c12, c21);
            let mm = &mut maxima[i];
            mm.oao = mm.oao.max(q[0].norm()).max(q[1].norm());
            mm.ooa = mm.ooa.max(q[2].norm());
            mm.aoo = mm.aoo.max(q[3].norm());
        }
    }
    let cumulative = simplex_trapezoid_cumulative(&rows, h);
    let a_abs = source.a_value().norm();
    let mut running = CorrelatorMaxima::default();
    Ok((1..=n)
        .map(|k| {
            let m = maxima[k];
            running.oao = running.oao.max(m.oao);
            running.aoo = running.aoo.max(m.aoo);
            running.ooa = running.ooa.max(m.ooa);
            let t = grid.time(k);
            HorizonSample {
                t,
                ratio: safe_ratio(cumulative[k].norm(), a_abs),
                bound_ratio: safe_ratio(c2_upper_bound(&running, bath, grid.t0, t), a_abs),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_strings() {
        assert_eq!(
            serde_json::to_string(&Verdict::Reliable).unwrap(),
            "\"reliable\""
        );
        assert_eq!(Verdict::Inconclusive.to_string(), "inconclusive");
        assert_eq!(Verdict::Unreliable.as_str(), "unreliable");
    }

    #[test]
    fn full_rule() {
        assert_eq!(full_verdict(0.05, 0.0025, false, 0.1), Verdict::Reliable);
        assert_eq!(full_verdict(0.2, 0.0, true, 0.1), Verdict::Unreliable);
        assert_eq!(full_verdict(0.05, 0.5, false, 0.1), Verdict::Inconclusive);
        assert_eq!(full_verdict(0.05, 0.5, true, 0.1), Verdict::Reliable);
    }

    #[test]
    fn bounded_rule_has_a_guard_band() {
        assert_eq!(bounded_verdict(0.1, 0.0, 0.1), Verdict::Reliable);
        assert_eq!(bounded_verdict(0.25, 0.0, 0.1), Verdict::Inconclusive);
        assert_eq!(bounded_verdict(0.31, 0.0, 0.1), Verdict::Unreliable);
    }

    #[test]
    fn horizon_takes_the_last_passing_prefix() {
        let s = |t: f64, r: f64| HorizonSample {
            t,
            ratio: r,
            bound_ratio: r,
        };
        let h = horizon_from_samples(
            vec![s(1.0, 0.01), s(2.0, 0.05), s(3.0, 0.2), s(4.0, 0.05)],
            0.1,
            false,
        );
        assert_eq!(h.time, Some(2.0));
        let h = horizon_from_samples(vec![s(1.0, 0.2)], 0.1, false);
        assert_eq!(h.time, None);
        let h = horizon_from_samples(vec![s(1.0, 0.0), s(2.0, 0.0)], 0.1, true);
        assert_eq!(h.time, Some(2.0));
        assert!(h.all_times);
    }

    #[test]
    fn by_accident_marks_passing_observables_only_when_another_fails() {
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let base = blank_report(
            "x".into(),
            ProtocolMode::Full,
            SourceTag::Ideal,
            &grid,
            Complex64::new(1.0, 0.0),
            1e-6,
            0.1,
        );
        let mut pass = base.clone();
        pass.verdict = Verdict::Reliable;
        pass.ratio = Some(0.0);
        let mut fail = base;
        fail.verdict = Verdict::Unreliable;
        fail.ratio = Some(4.0);
        let mut both = vec![pass.clone(), fail];
        flag_by_accident(&mut both);
        assert!(both[0].by_accident);
        assert!(!both[1].by_accident);
        let mut alone = vec![pass];
        flag_by_accident(&mut alone);
        assert!(!alone[0].by_accident);
    }
}
