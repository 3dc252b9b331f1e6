//! JSON scenarios and the simulate → estimate → decide → validate pipeline.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bath::{
    fit_exponential, read_samples_csv, sample_bath, write_samples_csv, BathCorrelation,
    BathCorrelator, BathMode, DiscretizedBath, ExpTerm,
};
use crate::dynamics::{Dynamics, LindbladModel, PiecewiseHamiltonian, TimeGrid};
use crate::error::{Error, Result};
use crate::estimator::{CorrelatorGrid, ModelCorrelators, PairSpec, SourceTag, MIN_STEPS};
use crate::hilbert::{pauli, sigma_minus, CMatrix, DensityMatrix, Pauli, QOperator};
use crate::model::{InternalMode, SystemModel};
use crate::oracle::{
    validate_estimate, FullModel, PerturbedCorrelators, ValidationRecord, DEFAULT_DIMENSION_CAP,
};
use crate::protocol::{
    assess, checkpoint_horizon, flag_by_accident, markov_regime, run_protocol_bounded_on_model,
    run_protocol_multichannel, Assessment, Channel, Horizon, MultiChannelConfig, PairContribution,
    ProtocolMode, ReliabilityReport, Verdict, DEFAULT_ETA,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath: Option<BathSpec>,
    /// Coupling channels for the multichannel mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<ChannelSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cross_baths: Vec<CrossBathSpec>,
    pub grid: GridSpec,
    pub protocol: ProtocolSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    /// Recorded in the report; the pipeline itself draws no random numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub internal_modes: Vec<InternalMode>,
    pub initial_state: InitialStateSpec,
    /// Markovian spin decay `Γ` of the ideal system (`L = σ⁻`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_decay: Option<f64>,
}

/// Either the spin population `a` of `a|↑⟩⟨↑| + (1−a)|↓⟩⟨↓|` or a matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real: Option<Vec<Vec<f64>>>,
}

/// A named spin operator or an explicit matrix (spin or full system).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Named(String),
    Custom(CustomOperator),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomOperator {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Rows of `[re, im]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub operator: OperatorSpec,
    #[serde(default = "one")]
    pub g: f64,
}

fn one() -> f64 {
    1.0
}

/// Exactly one of the four bath descriptions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponential: Option<Vec<ExpTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<BathMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comb: Option<CombSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<SamplesSpec>,
}

/// Sampled `C(τ)` (CSV `tau,re,im`, relative to the scenario file), fitted
/// by one exponential over `window`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesSpec {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombSpec {
    pub lambda: f64,
    pub gamma: f64,
    #[serde(default)]
    pub omega: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub n_modes: usize,
    pub truncation: usize,
    #[serde(default)]
    pub temperature: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub operator: OperatorSpec,
    #[serde(default = "one")]
    pub g: f64,
    pub bath: Vec<ExpTerm>,
}

/// `⟨X̂_late(t₁) X̂_early(t₂)⟩` between two channels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossBathSpec {
    pub late: usize,
    pub early: usize,
    pub bath: Vec<ExpTerm>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub t0: f64,
    pub t: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Correlators of the ideal system.
    Ideal,
    /// Stand-in for measured data: the ideal system plus the bath-induced
    /// spin decay `Γ̃ = g² Σ λ/γ`.
    PerturbedMeasured,
    /// Correlators of the exactly solved coupled model.
    Oracle,
    /// Correlators read from a CSV file.
    Data,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_checkpoints() -> usize {
    8
}

fn default_mode() -> ProtocolMode {
    ProtocolMode::Full
}

fn default_source() -> SourceKind {
    SourceKind::Ideal
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    #[serde(default = "default_eta")]
    pub eta: f64,
    pub observables: Vec<OperatorSpec>,
    #[serde(default = "default_mode")]
    pub mode: ProtocolMode,
    #[serde(default = "default_source")]
    pub source: SourceKind,
    /// Correlator CSV for `source: data`, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_tag: Option<SourceTag>,
    /// Times `t₀ + k(t − t₀)/K` at which the horizon is sampled.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    /// Discrete bath of the coupled model; defaults to the scenario bath.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath: Option<BathSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension_cap: Option<usize>,
}

fn from_value(v: Value) -> Result<Scenario> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::config(".", e.to_string()))?;
        Self::from_value(v)
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let s = from_value(v)?;
        s.validate()?;
        Ok(s)
    }

    /// Reads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::config(path, msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", &format!("expected {SCHEMA_VERSION}"));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
            || self.name.starts_with('.')
        {
            return bad("name", "use letters, digits, `_`, `-` or `.`");
        }
        let sys = &self.system;
        if !sys.eps.is_finite() {
            return bad("system.eps", "must be finite");
        }
        for (k, m) in sys.internal_modes.iter().enumerate() {
            if m.truncation < 2 || !m.omega.is_finite() || !m.coupling.is_finite() {
                return bad(
                    &format!("system.internal_modes[{k}]"),
                    "needs finite omega, coupling and truncation ≥ 2",
                );
            }
        }
        if let Some(g) = sys.spin_decay {
            if !(g.is_finite() && g >= 0.0) {
                return bad("system.spin_decay", "must be a nonnegative rate");
            }
        }
        let st = &sys.initial_state;
        let given = st.a.is_some() as u8 + st.matrix.is_some() as u8 + st.real.is_some() as u8;
        if given != 1 {
            return bad(
                "system.initial_state",
                "give exactly one of `a`, `matrix`, `real`",
            );
        }
        if let Some(a) = st.a {
            if !(0.0..=1.0).contains(&a) {
                return bad("system.initial_state.a", "must lie in [0, 1]");
            }
        }

        let g = &self.grid;
        if !(g.t0.is_finite() && g.t.is_finite() && g.t > g.t0) {
            return bad("grid.t", "need finite t0 < t");
        }
        if g.n_steps < MIN_STEPS || g.n_steps % 2 != 0 {
            return bad(
                "grid.n_steps",
                &format!("must be even and at least {MIN_STEPS}"),
            );
        }

        let p = &self.protocol;
        if !(p.eta > 0.0 && p.eta < 1.0) {
            return bad("protocol.eta", "must lie in (0, 1)");
        }
        if p.observables.is_empty() {
            return bad("protocol.observables", "list at least one observable");
        }
        let mut names = Vec::new();
        for (k, o) in p.observables.iter().enumerate() {
            check_operator(o, &format!("protocol.observables[{k}]"))?;
            let name = observable_name(o, k);
            if names.contains(&name) {
                return bad(
                    &format!("protocol.observables[{k}]"),
                    "duplicate observable name",
                );
            }
            names.push(name);
        }
        if p.checkpoints == 0 {
            return bad("protocol.checkpoints", "must be at least 1");
        }

        match p.mode {
            ProtocolMode::Multichannel => {
                if self.channels.is_empty() {
                    return bad("channels", "multichannel mode needs at least one channel");
                }
                if p.source != SourceKind::Ideal {
                    return bad(
                        "protocol.source",
                        "multichannel mode runs on ideal correlators",
                    );
                }
                for (k, c) in self.channels.iter().enumerate() {
                    check_operator(&c.operator, &format!("channels[{k}].operator"))?;
                    check_terms(&c.bath, &format!("channels[{k}].bath"))?;
                    if !c.g.is_finite() {
                        return bad(&format!("channels[{k}].g"), "must be finite");
                    }
                }
                for (k, c) in self.cross_baths.iter().enumerate() {
                    let n = self.channels.len();
                    if c.late >= n || c.early >= n || c.late == c.early {
                        return bad(
                            &format!("cross_baths[{k}]"),
                            "needs two distinct channel indices",
                        );
                    }
                    check_cross_terms(&c.bath, &format!("cross_baths[{k}].bath"))?;
                }
            }
            _ => {
                let Some(c) = &self.coupling else {
                    return bad("coupling", "required outside multichannel mode");
                };
                check_operator(&c.operator, "coupling.operator")?;
                if !c.g.is_finite() {
                    return bad("coupling.g", "must be finite");
                }
                let Some(b) = &self.bath else {
                    return bad("bath", "required outside multichannel mode");
                };
                b.check("bath")?;
                if !self.channels.is_empty() || !self.cross_baths.is_empty() {
                    return bad("channels", "only used in multichannel mode");
                }
            }
        }
        match p.source {
            SourceKind::PerturbedMeasured => {
                if !self.bath.as_ref().is_some_and(BathSpec::is_exponential) {
                    return bad("bath", "perturbed-measured needs an exponential bath");
                }
            }
            SourceKind::Oracle => {
                if self.oracle.is_none() {
                    return bad("oracle", "oracle source needs an oracle section");
                }
            }
            SourceKind::Data => {
                if p.data.is_none() {
                    return bad("protocol.data", "data source needs a correlator file");
                }
                if p.mode != ProtocolMode::Full {
                    return bad("protocol.mode", "data source runs in full mode");
                }
                if p.observables.len() != 1 {
                    return bad("protocol.observables", "data source takes one observable");
                }
            }
            SourceKind::Ideal => {}
        }
        if let Some(o) = &self.oracle {
            if sys.spin_decay.is_some() {
                return bad(
                    "oracle",
                    "the coupled model needs a system without spin_decay",
                );
            }
            if p.mode == ProtocolMode::Multichannel {
                return bad("oracle", "not available in multichannel mode");
            }
            match &o.bath {
                Some(b) => {
                    b.check("oracle.bath")?;
                    if b.is_exponential() {
                        return bad("oracle.bath", "must be `modes` or `comb`");
                    }
                }
                None => {
                    if self.bath.as_ref().is_some_and(BathSpec::is_exponential) {
                        return bad(
                            "oracle.bath",
                            "required when the scenario bath is exponential",
                        );
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy with one numeric field replaced, addressed by a dotted path such
    /// as `bath.exponential[0].lambda` or one of the short aliases.
    pub fn with_parameter(&self, param: &str, value: f64) -> Result<Self> {
        let mut v = self.to_value();
        set_numeric(&mut v, resolve_alias(param), value)?;
        Self::from_value(v)
    }
}

fn check_operator(o: &OperatorSpec, path: &str) -> Result<()> {
    match o {
        OperatorSpec::Named(n) if named_spin_operator(n).is_none() => {
            Err(Error::config(path, format!("unknown operator `{n}`")))
        }
        OperatorSpec::Custom(c) if c.matrix.is_some() == c.real.is_some() => {
            Err(Error::config(path, "give exactly one of `matrix`, `real`"))
        }
        _ => Ok(()),
    }
}

fn check_terms(terms: &[ExpTerm], path: &str) -> Result<()> {
    if terms.is_empty() {
        return Err(Error::config(path, "needs at least one term"));
    }
    for (k, t) in terms.iter().enumerate() {
        if !(t.gamma.is_finite() && t.gamma > 0.0) {
            return Err(Error::config(
                format!("{path}[{k}].gamma"),
                "must be positive",
            ));
        }
        if !(t.lambda.is_finite() && t.omega.is_finite()) {
            return Err(Error::config(
                format!("{path}[{k}].lambda"),
                "must be finite",
            ));
        }
    }
    Ok(())
}

fn check_cross_terms(terms: &[ExpTerm], path: &str) -> Result<()> {
    BathCorrelator::new(terms.to_vec()).map_err(|e| Error::config(path, e.to_string()))?;
    Ok(())
}

impl BathSpec {
    fn check(&self, path: &str) -> Result<()> {
        let given = self.exponential.is_some() as u8
            + self.modes.is_some() as u8
            + self.comb.is_some() as u8
            + self.samples.is_some() as u8;
        if given != 1 {
            return Err(Error::config(
                path,
                "give exactly one of `exponential`, `modes`, `comb`, `samples`",
            ));
        }
        if let Some([lo, hi]) = self.samples.as_ref().and_then(|s| s.window) {
            if !(lo >= 0.0 && hi > lo) {
                return Err(Error::config(
                    format!("{path}.samples.window"),
                    "need 0 ≤ start < end",
                ));
            }
        }
        if let Some(t) = &self.exponential {
            check_terms(t, &format!("{path}.exponential"))?;
        }
        if let Some(c) = &self.comb {
            if !(c.gamma.is_finite() && c.gamma > 0.0) {
                return Err(Error::config(
                    format!("{path}.comb.gamma"),
                    "must be positive",
                ));
            }
        }
        self.discrete(path).map(|_| ())
    }

    /// Exponential terms given directly or fitted from samples.
    fn is_exponential(&self) -> bool {
        self.exponential.is_some() || self.samples.is_some()
    }

    fn discrete(&self, path: &str) -> Result<Option<DiscretizedBath>> {
        if let Some(m) = &self.modes {
            return DiscretizedBath::new(m.clone())
                .map(Some)
                .map_err(|e| Error::config(format!("{path}.modes"), e.to_string()));
        }
        if let Some(c) = &self.comb {
            let b = DiscretizedBath::lorentzian_comb(
                c.lambda,
                c.gamma,
                c.omega,
                c.e_min,
                c.e_max,
                c.n_modes,
                c.truncation,
            )
            .map_err(|e| Error::config(format!("{path}.comb"), e.to_string()))?;
            return Ok(Some(if c.temperature > 0.0 {
                b.thermal(c.temperature)
            } else {
                b
            }));
        }
        Ok(None)
    }
}

/// Short names accepted by sweeps.
pub fn resolve_alias(param: &str) -> &str {
    match param {
        "eps" => "system.eps",
        "a" => "system.initial_state.a",
        "spin_decay" => "system.spin_decay",
        "g" => "coupling.g",
        "lambda" => "bath.exponential[0].lambda",
        "gamma" => "bath.exponential[0].gamma",
        "omega" => "bath.exponential[0].omega",
        "t" => "grid.t",
        "eta" => "protocol.eta",
        other => other,
    }
}

fn set_numeric(root: &mut Value, path: &str, value: f64) -> Result<()> {
    let mut cur = root;
    for part in path.split('.') {
        let (key, indices) = match part.find('[') {
            Some(p) => (&part[..p], &part[p..]),
            None => (part, ""),
        };
        if !key.is_empty() {
            cur = cur
                .get_mut(key)
                .ok_or_else(|| Error::config(path, format!("no field `{key}`")))?;
        }
        for idx in indices.split('[').filter(|s| !s.is_empty()) {
            let i: usize = idx
                .trim_end_matches(']')
                .parse()
                .map_err(|_| Error::config(path, format!("bad index `{idx}`")))?;
            cur = cur
                .get_mut(i)
                .ok_or_else(|| Error::config(path, format!("index {i} out of range")))?;
        }
    }
    if !cur.is_number() {
        return Err(Error::config(path, "not a numeric field"));
    }
    *cur = if cur.is_u64() && value >= 0.0 && value.fract() == 0.0 {
        Value::from(value as u64)
    } else {
        Value::from(value)
    };
    Ok(())
}

fn observable_name(o: &OperatorSpec, k: usize) -> String {
    match o {
        OperatorSpec::Named(n) => n.clone(),
        OperatorSpec::Custom(c) => c.name.clone().unwrap_or_else(|| format!("observable_{k}")),
    }
}

fn named_spin_operator(name: &str) -> Option<QOperator> {
    let half = |m: QOperator, s: f64| {
        let id = pauli(Pauli::Identity);
        id.add(&m.scale(s)).map(|x| x.scale(0.5)).ok()
    };
    match name {
        "sigma_x" => Some(pauli(Pauli::X)),
        "sigma_y" => Some(pauli(Pauli::Y)),
        "sigma_z" => Some(pauli(Pauli::Z)),
        "identity" => Some(pauli(Pauli::Identity)),
        "sigma_minus" => Some(sigma_minus()),
        "sigma_plus" => Some(sigma_minus().dagger()),
        "projector_up" => half(pauli(Pauli::Z), 1.0),
        "projector_down" => half(pauli(Pauli::Z), -1.0),
        "projector_x" => half(pauli(Pauli::X), 1.0),
        _ => None,
    }
}

fn complex_rows(rows: &[Vec<[f64; 2]>], path: &str) -> Result<CMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(path, "matrix must be square and nonempty"));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| {
        Complex64::new(rows[i][j][0], rows[i][j][1])
    }))
}

fn real_rows(rows: &[Vec<f64>], path: &str) -> Result<CMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(path, "matrix must be square and nonempty"));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| {
        Complex64::new(rows[i][j], 0.0)
    }))
}

/// Operator on the system space; 2×2 matrices act on the spin.
fn build_operator(spec: &OperatorSpec, system: &SystemModel, path: &str) -> Result<QOperator> {
    let m = match spec {
        OperatorSpec::Named(n) => {
            let op = named_spin_operator(n)
                .ok_or_else(|| Error::config(path, format!("unknown operator `{n}`")))?;
            return system.spin_operator(&op);
        }
        OperatorSpec::Custom(c) => match (&c.matrix, &c.real) {
            (Some(m), None) => complex_rows(m, &format!("{path}.matrix"))?,
            (None, Some(r)) => real_rows(r, &format!("{path}.real"))?,
            _ => return Err(Error::config(path, "give exactly one of `matrix`, `real`")),
        },
    };
    let dim = system.space().total_dim();
    if m.nrows() == 2 {
        let op =
            QOperator::from_matrix(m, false).map_err(|e| Error::config(path, e.to_string()))?;
        system.spin_operator(&op)
    } else if m.nrows() == dim {
        QOperator::new(system.space().clone(), m, false)
            .map_err(|e| Error::config(path, e.to_string()))
    } else {
        Err(Error::config(
            path,
            format!("matrix must be 2×2 or {dim}×{dim}"),
        ))
    }
}

fn build_state(spec: &InitialStateSpec, system: &SystemModel) -> Result<DensityMatrix> {
    let path = "system.initial_state";
    let wrap = |e: Error| Error::config(path, e.to_string());
    let m = if let Some(a) = spec.a {
        return system.initial_state(&DensityMatrix::spin_mixed(a).map_err(wrap)?);
    } else if let Some(m) = &spec.matrix {
        complex_rows(m, &format!("{path}.matrix"))?
    } else {
        real_rows(
            spec.real.as_deref().unwrap_or_default(),
            &format!("{path}.real"),
        )?
    };
    if m.nrows() == 2 {
        system.initial_state(&DensityMatrix::from_matrix(m).map_err(wrap)?)
    } else {
        DensityMatrix::new(system.space().clone(), m).map_err(wrap)
    }
}

/// Bath correlator entering `C₂`, with the coupling scale `g²` folded in.
enum ScaledBath {
    Exponential(BathCorrelator),
    Discrete(DiscretizedBath),
}

impl ScaledBath {
    fn as_dyn(&self) -> &dyn BathCorrelation {
        match self {
            ScaledBath::Exponential(b) => b,
            ScaledBath::Discrete(b) => b,
        }
    }
}

/// The bath as written in the scenario, before the coupling scale.
fn unscaled_bath(spec: &BathSpec, base_dir: &Path) -> Result<ScaledBath> {
    if let Some(terms) = &spec.exponential {
        let b =
            BathCorrelator::new(terms.clone()).map_err(|e| Error::config("bath", e.to_string()))?;
        return Ok(ScaledBath::Exponential(b));
    }
    if let Some(sp) = &spec.samples {
        let path = base_dir.join(&sp.path);
        let file = File::open(&path)
            .map_err(|e| Error::config("bath.samples.path", format!("{}: {e}", path.display())))?;
        let samples = read_samples_csv(std::io::BufReader::new(file))?;
        let window = match sp.window {
            Some([lo, hi]) => (lo, hi),
            None => (0.0, samples.iter().map(|s| s.0).fold(0.0, f64::max)),
        };
        let fit = fit_exponential(&samples, window)?;
        log::info!(
            "fitted bath samples: {:?} (rms log residual {:.2e}, {} points)",
            fit.bath.terms()[0],
            fit.residual,
            fit.samples_used
        );
        return Ok(ScaledBath::Exponential(fit.bath));
    }
    Ok(ScaledBath::Discrete(
        spec.discrete("bath")?.expect("validated bath"),
    ))
}

fn scaled_bath(spec: &BathSpec, g: f64, base_dir: &Path) -> Result<ScaledBath> {
    let d = match unscaled_bath(spec, base_dir)? {
        ScaledBath::Exponential(b) => return Ok(ScaledBath::Exponential(b.scaled(g * g))),
        ScaledBath::Discrete(d) => d,
    };
    let modes = d
        .modes()
        .iter()
        .map(|m| BathMode {
            coupling: m.coupling * g,
            ..*m
        })
        .collect();
    Ok(ScaledBath::Discrete(DiscretizedBath::new(modes)?))
}

/// Runtime overrides.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Replaces `grid.n_steps`.
    pub resolution: Option<usize>,
}

/// One checkpoint of one observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub observable: String,
    pub t: f64,
    pub a_re: f64,
    pub a_im: f64,
    pub c2_re: Option<f64>,
    pub c2_im: Option<f64>,
    pub c2_bound: f64,
    pub ratio: Option<f64>,
    pub bound_ratio: f64,
    pub verdict: Verdict,
    /// Exact error from the coupled model, when an oracle is configured.
    pub delta_re: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableHorizon {
    pub observable: String,
    pub horizon: Horizon,
}

/// Everything a run produces.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub scenario: String,
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub source: SourceKind,
    pub mode: ProtocolMode,
    pub reports: Vec<ReliabilityReport>,
    pub horizons: Vec<ObservableHorizon>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub channel_pairs: Vec<PairContribution>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub validation: Vec<ValidationRecord>,
    #[serde(skip)]
    pub timeseries: Vec<TimeseriesRow>,
    #[serde(skip)]
    pub correlators: Vec<(String, CorrelatorGrid)>,
}

struct Built {
    system: SystemModel,
    rho0: DensityMatrix,
    observables: Vec<(String, QOperator)>,
    grid: TimeGrid,
}

fn build_common(s: &Scenario, opts: RunOptions) -> Result<Built> {
    let system = SystemModel::new(s.system.eps, s.system.internal_modes.clone())
        .map_err(|e| Error::config("system", e.to_string()))?;
    let rho0 = build_state(&s.system.initial_state, &system)?;
    let observables = s
        .protocol
        .observables
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let op = build_operator(o, &system, &format!("protocol.observables[{k}]"))?;
            Ok((observable_name(o, k), op))
        })
        .collect::<Result<_>>()?;
    let n = opts.resolution.unwrap_or(s.grid.n_steps);
    if n < MIN_STEPS || n % 2 != 0 {
        return Err(Error::config(
            "grid.n_steps",
            format!("must be even and at least {MIN_STEPS}"),
        ));
    }
    let grid = TimeGrid::new(s.grid.t0, s.grid.t, n)?;
    Ok(Built {
        system,
        rho0,
        observables,
        grid,
    })
}

fn spin_lindblad(system: &SystemModel, rate: f64) -> Result<Dynamics> {
    let h = PiecewiseHamiltonian::constant(system.hamiltonian().clone())?;
    if rate == 0.0 {
        return Ok(Dynamics::Unitary(h));
    }
    let l = system.spin_operator(&sigma_minus())?;
    Ok(Dynamics::Lindblad(LindbladModel::new(h, vec![(l, rate)])?))
}

fn row_from_report(r: &ReliabilityReport, delta: Option<f64>) -> TimeseriesRow {
    TimeseriesRow {
        observable: r.observable.clone(),
        t: r.t,
        a_re: r.a_re,
        a_im: r.a_im,
        c2_re: r.c2_re,
        c2_im: r.c2_im,
        c2_bound: r.c2_bound,
        ratio: r.ratio,
        bound_ratio: r.bound_ratio,
        verdict: r.verdict,
        delta_re: delta,
    }
}

fn oracle_model(s: &Scenario, b: &Built, coupling: &QOperator) -> Result<Option<FullModel>> {
    let Some(o) = &s.oracle else {
        return Ok(None);
    };
    let spec = o
        .bath
        .as_ref()
        .or(s.bath.as_ref())
        .expect("validated oracle bath");
    let bath = spec
        .discrete("oracle.bath")?
        .expect("validated discrete bath");
    let g = s.coupling.as_ref().map_or(1.0, |c| c.g);
    let model = FullModel::with_cap(
        b.system.hamiltonian(),
        coupling,
        &b.rho0,
        &bath,
        g,
        o.dimension_cap.unwrap_or(DEFAULT_DIMENSION_CAP),
    )
    .map_err(|e| match e {
        Error::DimensionCap { .. } => Error::config("oracle.dimension_cap", e.to_string()),
        other => other,
    })?;
    Ok(Some(model))
}

/// Runs `s`, resolving a data file relative to `base_dir`.
pub fn run_scenario(s: &Scenario, base_dir: &Path, opts: RunOptions) -> Result<Outcome> {
    run_inner(s, base_dir, opts, true)
}

/// Correlators only, one grid per observable.
pub fn export_correlators(
    s: &Scenario,
    base_dir: &Path,
    opts: RunOptions,
) -> Result<Vec<(String, CorrelatorGrid)>> {
    let b = build_common(s, opts)?;
    let mut out = Vec::new();
    match s.protocol.mode {
        ProtocolMode::Multichannel => {
            let ops = multichannel_config(s, &b)?
                .channels
                .into_iter()
                .map(|c| c.operator)
                .collect::<Vec<_>>();
            let dynamics = spin_lindblad(&b.system, s.system.spin_decay.unwrap_or(0.0))?;
            for (name, a) in &b.observables {
                let src =
                    ModelCorrelators::new(&dynamics, &b.rho0, &ops, a, &b.grid, SourceTag::Ideal)?;
                out.push((name.clone(), CorrelatorGrid::from_source(&src)?));
            }
        }
        _ => {
            let coupling = s.coupling.as_ref().expect("validated coupling");
            let o = build_operator(&coupling.operator, &b.system, "coupling.operator")?;
            match s.protocol.source {
                SourceKind::Data => {
                    let g = read_data(s, base_dir)?;
                    out.push((b.observables[0].0.clone(), g));
                }
                SourceKind::Oracle => {
                    let model = oracle_model(s, &b, &o)?.expect("validated oracle");
                    for (name, a) in &b.observables {
                        let src = PerturbedCorrelators::new(
                            &model,
                            std::slice::from_ref(&o),
                            a,
                            &b.grid,
                        )?;
                        out.push((name.clone(), CorrelatorGrid::from_source(&src)?));
                    }
                }
                SourceKind::Ideal | SourceKind::PerturbedMeasured => {
                    let bath = scaled_bath(
                        s.bath.as_ref().expect("validated bath"),
                        coupling.g,
                        base_dir,
                    )?;
                    let (dynamics, tag) = model_dynamics(s, &b, &bath)?;
                    for (name, a) in &b.observables {
                        let src = ModelCorrelators::new(
                            &dynamics,
                            &b.rho0,
                            std::slice::from_ref(&o),
                            a,
                            &b.grid,
                            tag,
                        )?;
                        out.push((name.clone(), CorrelatorGrid::from_source(&src)?));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `C(τ)` of the scenario bath (without the coupling scale) on the lags of
/// the grid; `None` in multichannel mode.
pub fn export_bath_samples(
    s: &Scenario,
    base_dir: &Path,
    opts: RunOptions,
) -> Result<Option<Vec<(f64, Complex64)>>> {
    let Some(spec) = &s.bath else {
        return Ok(None);
    };
    if s.protocol.mode == ProtocolMode::Multichannel {
        return Ok(None);
    }
    let n = opts.resolution.unwrap_or(s.grid.n_steps);
    let bath = unscaled_bath(spec, base_dir)?;
    Ok(Some(sample_bath(bath.as_dyn(), s.grid.t - s.grid.t0, n)))
}

fn read_data(s: &Scenario, base_dir: &Path) -> Result<CorrelatorGrid> {
    let rel = s.protocol.data.as_deref().expect("validated data path");
    let path: PathBuf = base_dir.join(rel);
    let file = File::open(&path)
        .map_err(|e| Error::config("protocol.data", format!("{}: {e}", path.display())))?;
    let tag = s.protocol.data_tag.unwrap_or(SourceTag::PerturbedMeasured);
    CorrelatorGrid::read_csv(std::io::BufReader::new(file), tag)
}

/// Ideal dynamics, or the stand-in for the measured system.
fn model_dynamics(s: &Scenario, b: &Built, bath: &ScaledBath) -> Result<(Dynamics, SourceTag)> {
    let base = s.system.spin_decay.unwrap_or(0.0);
    match s.protocol.source {
        SourceKind::PerturbedMeasured => {
            let ScaledBath::Exponential(e) = bath else {
                unreachable!("validated exponential bath")
            };
            let rate = base + e.lambda_over_gamma();
            Ok((
                spin_lindblad(&b.system, rate)?,
                SourceTag::PerturbedMeasured,
            ))
        }
        _ => Ok((spin_lindblad(&b.system, base)?, SourceTag::Ideal)),
    }
}

fn multichannel_config(s: &Scenario, b: &Built) -> Result<MultiChannelConfig> {
    let channels = s
        .channels
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let op = build_operator(&c.operator, &b.system, &format!("channels[{k}].operator"))?;
            let bath = BathCorrelator::new(c.bath.clone())?.scaled(c.g * c.g);
            Ok(Channel { operator: op, bath })
        })
        .collect::<Result<Vec<_>>>()?;
    if s.cross_baths.is_empty() {
        return MultiChannelConfig::independent(channels);
    }
    let cross = s
        .cross_baths
        .iter()
        .map(|c| {
            let gl = s.channels[c.late].g;
            let ge = s.channels[c.early].g;
            Ok((
                c.late,
                c.early,
                BathCorrelator::new(c.bath.clone())?.scaled(gl * ge),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    MultiChannelConfig::correlated(channels, cross)
}

fn run_inner(
    s: &Scenario,
    base_dir: &Path,
    opts: RunOptions,
    with_correlators: bool,
) -> Result<Outcome> {
    let b = build_common(s, opts)?;
    let eta = s.protocol.eta;
    let mut outcome = Outcome {
        scenario: s.name.clone(),
        schema_version: s.schema_version,
        seed: s.seed,
        source: s.protocol.source,
        mode: s.protocol.mode,
        reports: Vec::new(),
        horizons: Vec::new(),
        channel_pairs: Vec::new(),
        validation: Vec::new(),
        timeseries: Vec::new(),
        correlators: Vec::new(),
    };

    if s.protocol.mode == ProtocolMode::Multichannel {
        let config = multichannel_config(s, &b)?;
        let dynamics = spin_lindblad(&b.system, s.system.spin_decay.unwrap_or(0.0))?;
        for (name, a) in &b.observables {
            let mut r = run_protocol_multichannel(
                &dynamics,
                &b.rho0,
                a,
                &config,
                &b.grid,
                eta,
                SourceTag::Ideal,
            )?;
            r.report.observable = name.clone();
            outcome.timeseries.push(row_from_report(&r.report, None));
            outcome.reports.push(r.report);
            outcome.channel_pairs.extend(r.pairs);
        }
        if with_correlators {
            outcome.correlators = export_correlators(s, base_dir, opts)?;
        }
        flag_by_accident(&mut outcome.reports);
        return Ok(outcome);
    }

    let coupling = s.coupling.as_ref().expect("validated coupling");
    let o = build_operator(&coupling.operator, &b.system, "coupling.operator")?;
    let bath = scaled_bath(
        s.bath.as_ref().expect("validated bath"),
        coupling.g,
        base_dir,
    )?;
    let oracle = oracle_model(s, &b, &o)?;
    let o_norm = o.operator_norm();

    match s.protocol.source {
        SourceKind::Data | SourceKind::Oracle => {
            for (name, a) in &b.observables {
                let data = if s.protocol.source == SourceKind::Data {
                    read_data(s, base_dir)?
                } else {
                    let model = oracle.as_ref().expect("validated oracle");
                    let src =
                        PerturbedCorrelators::new(model, std::slice::from_ref(&o), a, &b.grid)?;
                    CorrelatorGrid::from_source(&src)?
                };
                let (report, _) = assess(&Assessment {
                    observable: name.clone(),
                    source: &data,
                    pairs: vec![PairSpec::diagonal(0, bath.as_dyn())],
                    a_norm: a.operator_norm(),
                    separable_scale: o_norm.powi(4) * a.operator_norm(),
                    markov: None,
                    eta,
                    mode: ProtocolMode::Full,
                })?;
                let v = oracle
                    .as_ref()
                    .map(|m| validate_estimate(m, a, &report, &s.name))
                    .transpose()?;
                outcome
                    .timeseries
                    .push(row_from_report(&report, v.as_ref().map(|v| v.delta)));
                outcome.validation.extend(v);
                outcome.reports.push(report);
                if with_correlators {
                    outcome.correlators.push((name.clone(), data));
                }
            }
        }
        SourceKind::Ideal | SourceKind::PerturbedMeasured => {
            let (dynamics, tag) = model_dynamics(s, &b, &bath)?;
            let bath = bath.as_dyn();
            for (name, a) in &b.observables {
                let run = |grid: &TimeGrid| -> Result<ReliabilityReport> {
                    if s.protocol.mode == ProtocolMode::Bounded {
                        return run_protocol_bounded_on_model(
                            &dynamics, &b.rho0, a, &o, bath, grid, eta, tag, name,
                        );
                    }
                    let source = ModelCorrelators::new(
                        &dynamics,
                        &b.rho0,
                        std::slice::from_ref(&o),
                        a,
                        grid,
                        tag,
                    )?;
                    let markov = markov_regime(&dynamics, &b.rho0, &o, a, bath, grid)?;
                    Ok(assess(&Assessment {
                        observable: name.clone(),
                        source: &source,
                        pairs: vec![PairSpec::diagonal(0, bath)],
                        a_norm: a.operator_norm(),
                        separable_scale: o_norm.powi(4) * a.operator_norm(),
                        markov,
                        eta,
                        mode: ProtocolMode::Full,
                    })?
                    .0)
                };
                let (horizon, reports) = checkpoint_horizon(
                    b.grid.t0,
                    b.grid.t,
                    s.protocol.checkpoints,
                    b.grid.n_steps,
                    eta,
                    run,
                )?;
                for r in &reports {
                    let v = oracle
                        .as_ref()
                        .map(|m| validate_estimate(m, a, r, &s.name))
                        .transpose()?;
                    outcome
                        .timeseries
                        .push(row_from_report(r, v.as_ref().map(|v| v.delta)));
                    outcome.validation.extend(v);
                }
                outcome.horizons.push(ObservableHorizon {
                    observable: name.clone(),
                    horizon,
                });
                outcome
                    .reports
                    .push(reports.into_iter().last().expect("at least one checkpoint"));
                if with_correlators {
                    let src = ModelCorrelators::new(
                        &dynamics,
                        &b.rho0,
                        std::slice::from_ref(&o),
                        a,
                        &b.grid,
                        tag,
                    )?;
                    outcome
                        .correlators
                        .push((name.clone(), CorrelatorGrid::from_source(&src)?));
                }
            }
        }
    }
    flag_by_accident(&mut outcome.reports);
    Ok(outcome)
}

/// Correlator file name of the `k`-th observable.
pub fn correlator_file_name(k: usize, name: &str) -> String {
    if k == 0 {
        "correlators.csv".to_string()
    } else {
        let safe: String = name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        format!("correlators_{safe}.csv")
    }
}

pub fn write_correlators(grids: &[(String, CorrelatorGrid)], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, (name, g)) in grids.iter().enumerate() {
        g.write_csv(BufWriter::new(File::create(
            dir.join(correlator_file_name(k, name)),
        )?))?;
    }
    Ok(())
}

pub const BATH_SAMPLES_FILE: &str = "bath_samples.csv";

pub fn write_bath_samples(samples: &[(f64, Complex64)], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_samples_csv(
        samples,
        BufWriter::new(File::create(dir.join(BATH_SAMPLES_FILE))?),
    )
}

/// Writes `report.json`, `timeseries.csv`, the correlator files and, with an
/// oracle, `validation.csv` into `dir`.
pub fn write_outcome(outcome: &Outcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(outcome)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("timeseries.csv"))?));
    for r in &outcome.timeseries {
        w.serialize(r)?;
    }
    w.flush()?;
    write_correlators(&outcome.correlators, dir)?;
    if !outcome.validation.is_empty() {
        ValidationRecord::write_csv(
            &outcome.validation,
            BufWriter::new(File::create(dir.join("validation.csv"))?),
        )?;
    }
    Ok(())
}

/// One row of a sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub observable: String,
    pub t: f64,
    pub ratio: Option<f64>,
    pub bound_ratio: f64,
    pub verdict: Verdict,
    pub by_accident: bool,
    pub delta: Option<f64>,
    pub residual: Option<f64>,
}

/// Summary rows of one sweep point.
pub fn sweep_rows(param: &str, value: f64, outcome: &Outcome) -> Vec<SweepRow> {
    outcome
        .reports
        .iter()
        .map(|r| {
            let v = outcome
                .validation
                .iter()
                .rev()
                .find(|v| v.observable == r.observable && v.t == r.t);
            SweepRow {
                parameter: param.to_string(),
                value,
                observable: r.observable.clone(),
                t: r.t,
                ratio: r.ratio,
                bound_ratio: r.bound_ratio,
                verdict: r.verdict,
                by_accident: r.by_accident,
                delta: v.map(|v| v.delta),
                residual: v.map(|v| v.residual),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        serde_json::json!({
            "schema_version": 1,
            "name": "unit",
            "system": {"eps": 1.0, "initial_state": {"a": 0.8}, "spin_decay": 0.5},
            "coupling": {"operator": "sigma_x", "g": 1.0},
            "bath": {"exponential": [{"lambda": 0.05, "gamma": 10.0}]},
            "grid": {"t": 2.0, "n_steps": 16},
            "protocol": {"observables": ["sigma_z"], "checkpoints": 2}
        })
    }

    fn config_path(v: Value) -> String {
        match Scenario::from_value(v) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::from_value(base()).unwrap();
        assert_eq!(s.protocol.eta, DEFAULT_ETA);
        assert_eq!(s.protocol.mode, ProtocolMode::Full);
        assert_eq!(s.protocol.source, SourceKind::Ideal);
    }

    #[test]
    fn errors_carry_field_paths() {
        let mut v = base();
        v["bath"]["exponential"][0]["gamma"] = (-1.0).into();
        assert_eq!(config_path(v), "bath.exponential[0].gamma");

        let mut v = base();
        v["grid"]["n_steps"] = "many".into();
        assert_eq!(config_path(v), "grid.n_steps");

        let mut v = base();
        v["protocol"]["eta"] = 1.5.into();
        assert_eq!(config_path(v), "protocol.eta");

        let mut v = base();
        v["system"]["colour"] = 1.into();
        assert_eq!(config_path(v), "system.colour");

        let mut v = base();
        v["coupling"]["operator"] = "sigma_q".into();
        assert_eq!(config_path(v), "coupling.operator");
    }

    #[test]
    fn parameters_are_set_by_path_and_alias() {
        let s = Scenario::from_value(base()).unwrap();
        let t = s.with_parameter("lambda", 0.2).unwrap();
        assert_eq!(t.bath.unwrap().exponential.unwrap()[0].lambda, 0.2);
        let t = s.with_parameter("grid.n_steps", 32.0).unwrap();
        assert_eq!(t.grid.n_steps, 32);
        assert!(s.with_parameter("bath.exponential[3].lambda", 1.0).is_err());
        assert!(s.with_parameter("name", 1.0).is_err());
    }

    #[test]
    fn pipeline_produces_one_report_per_observable() {
        let mut v = base();
        v["protocol"]["observables"] = serde_json::json!(["sigma_z", "identity"]);
        let s = Scenario::from_value(v).unwrap();
        let out = run_scenario(&s, Path::new("."), RunOptions::default()).unwrap();
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.timeseries.len(), 4);
        assert_eq!(out.correlators.len(), 2);
        assert_eq!(out.reports[0].t, 2.0);
        assert!(out.reports[0].ratio.unwrap() < 0.1);
    }
}
