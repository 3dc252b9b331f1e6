use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{unitary_propagator, Dynamics, PiecewiseHamiltonian};
use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, DensityMatrix, QOperator};

/// The four operator orderings entering the second-order correction, with
/// `Ô₁` inserted at `t₁`, `Ô₂` at `t₂` and `Â` at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ordering {
    /// `⟨Ô₁(t₁) Â(t) Ô₂(t₂)⟩`
    #[serde(rename = "OAO12")]
    Oao12,
    /// `⟨Ô₂(t₂) Â(t) Ô₁(t₁)⟩`
    #[serde(rename = "OAO21")]
    Oao21,
    /// `⟨Ô₂(t₂) Ô₁(t₁) Â(t)⟩`
    #[serde(rename = "OOA21")]
    Ooa21,
    /// `⟨Â(t) Ô₁(t₁) Ô₂(t₂)⟩`
    #[serde(rename = "AOO12")]
    Aoo12,
}

impl Ordering {
    pub const ALL: [Ordering; 4] = [
        Ordering::Oao12,
        Ordering::Oao21,
        Ordering::Ooa21,
        Ordering::Aoo12,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Ordering::Oao12 => "OAO12",
            Ordering::Oao21 => "OAO21",
            Ordering::Ooa21 => "OOA21",
            Ordering::Aoo12 => "AOO12",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.tag() == tag)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn sequence<'a>(
        self,
        o1: (&'a CMatrix, f64),
        a: (&'a CMatrix, f64),
        o2: (&'a CMatrix, f64),
    ) -> [(&'a CMatrix, f64); 3] {
        match self {
            Ordering::Oao12 => [o1, a, o2],
            Ordering::Oao21 => [o2, a, o1],
            Ordering::Ooa21 => [o2, o1, a],
            Ordering::Aoo12 => [a, o1, o2],
        }
    }
}

fn check_window(t0: f64, t1: f64, t: f64, t2: f64) -> Result<()> {
    if t1.min(t2) < t0 || t1.max(t2) > t {
        return Err(Error::TimeOrdering(format!(
            "insertions at {t1} and {t2} must lie in [{t0}, {t}]"
        )));
    }
    Ok(())
}

fn check_spaces(rho0: &DensityMatrix, ops: &[&QOperator]) -> Result<()> {
    for op in ops {
        if op.space() != rho0.space() {
            return Err(Error::DimensionMismatch {
                expected: rho0.dim(),
                found: op.dim(),
            });
        }
    }
    Ok(())
}

/// Exact multi-time expectation `Tr[ρ₀ X₁(s₁) X₂(s₂) …]` for unitary dynamics.
fn heisenberg_product(
    h: &PiecewiseHamiltonian,
    rho0: &CMatrix,
    t0: f64,
    ops: &[(&CMatrix, f64)],
) -> Result<Complex64> {
    let mut prod = rho0.clone();
    for (x, s) in ops {
        let u = unitary_propagator(h, t0, *s)?;
        let xh = u.matrix().adjoint() * *x * u.matrix();
        prod *= xh;
    }
    Ok(prod.trace())
}

/// Multi-time expectation by conditional-state propagation. The sequence must
/// be nondecreasing in time up to its latest element and nonincreasing after.
fn regression_product(
    model: &Dynamics,
    rho0: &CMatrix,
    t0: f64,
    ops: &[(&CMatrix, f64)],
) -> Result<Complex64> {
    let peak = ops
        .iter()
        .enumerate()
        .fold(0, |best, (k, x)| if x.1 > ops[best].1 { k } else { best });
    let rising = ops[..=peak].windows(2).all(|w| w[0].1 <= w[1].1);
    let falling = ops[peak..].windows(2).all(|w| w[0].1 >= w[1].1);
    if !(rising && falling) {
        return Err(Error::TimeOrdering(
            "operator sequence has no contour-ordered form for reduced dynamics".into(),
        ));
    }
    // Right factors multiply the state from the right in sequence order; left
    // factors from the left, nearest to the state first.
    let right: Vec<_> = ops[..=peak].to_vec();
    let left: Vec<_> = ops[peak + 1..].iter().rev().copied().collect();
    let (mut r, mut l) = (0, 0);
    let mut sigma = rho0.clone();
    let mut now = t0;
    while r < right.len() || l < left.len() {
        let take_right = l >= left.len() || (r < right.len() && right[r].1 <= left[l].1);
        let (x, s) = if take_right { right[r] } else { left[l] };
        if s < now {
            return Err(Error::TimeOrdering(format!(
                "insertion at {s} precedes the initial time {now}"
            )));
        }
        if s > now {
            sigma = model.evolve_matrix(&sigma, now, s)?;
            now = s;
        }
        if take_right {
            sigma *= x;
            r += 1;
        } else {
            sigma = x * sigma;
            l += 1;
        }
    }
    Ok(sigma.trace())
}

/// Heisenberg-picture evaluation on a closed model.
#[allow(clippy::too_many_arguments)]
pub fn heisenberg_correlator(
    h: &PiecewiseHamiltonian,
    rho0: &DensityMatrix,
    t0: f64,
    o1: &QOperator,
    a: &QOperator,
    o2: &QOperator,
    t1: f64,
    t: f64,
    t2: f64,
    ordering: Ordering,
) -> Result<Complex64> {
    check_window(t0, t1, t, t2)?;
    check_spaces(rho0, &[o1, a, o2])?;
    let seq = ordering.sequence((o1.matrix(), t1), (a.matrix(), t), (o2.matrix(), t2));
    heisenberg_product(h, rho0.matrix(), t0, &seq)
}

/// Regression-theorem evaluation; valid for any [`Dynamics`] and exact for
/// unitary ones.
#[allow(clippy::too_many_arguments)]
pub fn regression_correlator(
    model: &Dynamics,
    rho0: &DensityMatrix,
    t0: f64,
    o1: &QOperator,
    a: &QOperator,
    o2: &QOperator,
    t1: f64,
    t: f64,
    t2: f64,
    ordering: Ordering,
) -> Result<Complex64> {
    check_window(t0, t1, t, t2)?;
    check_spaces(rho0, &[o1, a, o2])?;
    let seq = ordering.sequence((o1.matrix(), t1), (a.matrix(), t), (o2.matrix(), t2));
    regression_product(model, rho0.matrix(), t0, &seq)
}

/// Three-time correlator with `ρ₀` given at `t0`: exact Heisenberg operators
/// for unitary models, the regression theorem for Lindblad models.
#[allow(clippy::too_many_arguments)]
pub fn three_time_correlator(
    model: &Dynamics,
    rho0: &DensityMatrix,
    t0: f64,
    o1: &QOperator,
    a: &QOperator,
    o2: &QOperator,
    t1: f64,
    t: f64,
    t2: f64,
    ordering: Ordering,
) -> Result<Complex64> {
    match model {
        Dynamics::Unitary(h) => heisenberg_correlator(h, rho0, t0, o1, a, o2, t1, t, t2, ordering),
        Dynamics::Lindblad(_) => {
            regression_correlator(model, rho0, t0, o1, a, o2, t1, t, t2, ordering)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LindbladModel;
    use crate::hilbert::{pauli, Pauli};

    #[test]
    fn tags_round_trip() {
        for o in Ordering::ALL {
            assert_eq!(Ordering::from_tag(o.tag()), Some(o));
        }
        assert_eq!(Ordering::from_tag("XYZ"), None);
    }

    #[test]
    fn anti_contour_sequence_is_rejected_for_open_models() {
        let model = Dynamics::Lindblad(LindbladModel::spin_decay(1.0, 0.1).unwrap());
        let rho = DensityMatrix::spin_mixed(0.8).unwrap();
        let x = pauli(Pauli::X);
        let z = pauli(Pauli::Z);
        // AOO with t1 < t2 needs the later insertion nearest the state.
        let r = three_time_correlator(
            &model,
            &rho,
            0.0,
            &x,
            &z,
            &x,
            0.5,
            2.0,
            1.0,
            Ordering::Aoo12,
        );
        assert!(matches!(r, Err(Error::TimeOrdering(_))));
        let r = three_time_correlator(
            &model,
            &rho,
            0.0,
            &x,
            &z,
            &x,
            1.0,
            2.0,
            0.5,
            Ordering::Aoo12,
        );
        assert!(r.is_ok());
        let r = three_time_correlator(
            &model,
            &rho,
            0.0,
            &x,
            &z,
            &x,
            1.0,
            0.8,
            0.5,
            Ordering::Oao12,
        );
        assert!(r.is_err());
    }
}
