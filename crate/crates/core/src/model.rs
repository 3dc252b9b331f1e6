//! Spin-boson simulator: one spin, a few internal bosonic modes.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, PiecewiseHamiltonian};
use crate::error::{Error, Result};
use crate::hilbert::{
    boson_annihilation, embed, pauli, CompositeSpace, DensityMatrix, Pauli, QOperator,
};

/// Internal mode `ω b†b + tᵢ σₓ (b† + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternalMode {
    pub omega: f64,
    pub coupling: f64,
    pub truncation: usize,
}

/// `H_S = ε σ_z / 2 + Σ ωᵢ bᵢ†bᵢ + σₓ Σ tᵢ (bᵢ† + bᵢ)` on spin ⊗ modes.
#[derive(Debug, Clone)]
pub struct SystemModel {
    eps: f64,
    modes: Vec<InternalMode>,
    space: CompositeSpace,
    hamiltonian: QOperator,
}

impl SystemModel {
    pub fn new(eps: f64, modes: Vec<InternalMode>) -> Result<Self> {
        if !eps.is_finite() {
            return Err(Error::InvalidArgument("spin energy must be finite".into()));
        }
        let mut dims = vec![2];
        for (k, m) in modes.iter().enumerate() {
            if m.truncation < 2 || !m.omega.is_finite() || !m.coupling.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "internal mode {k}: needs finite ω, tᵢ and truncation ≥ 2"
                )));
            }
            dims.push(m.truncation);
        }
        let space = CompositeSpace::new(dims)?;
        let sx = embed(&pauli(Pauli::X), 0, &space)?;
        let mut h = embed(&pauli(Pauli::Z), 0, &space)?.scale(0.5 * eps);
        for (k, m) in modes.iter().enumerate() {
            let b = embed(&boson_annihilation(m.truncation)?, k + 1, &space)?;
            let n = b.dagger().mul(&b)?;
            let x = b.add(&b.dagger())?;
            h = h.add(&n.scale(m.omega))?;
            h = h.add(&sx.mul(&x)?.scale(m.coupling))?;
        }
        let hamiltonian = QOperator::new(space.clone(), h.into_matrix(), true)?;
        Ok(Self {
            eps,
            modes,
            space,
            hamiltonian,
        })
    }

    pub fn spin(eps: f64) -> Result<Self> {
        Self::new(eps, Vec::new())
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn modes(&self) -> &[InternalMode] {
        &self.modes
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn hamiltonian(&self) -> &QOperator {
        &self.hamiltonian
    }

    /// A 2×2 spin operator acting on the spin factor.
    pub fn spin_operator(&self, op: &QOperator) -> Result<QOperator> {
        embed(op, 0, &self.space)
    }

    /// `ρ_spin ⊗ |0⟩⟨0|` over the internal modes.
    pub fn initial_state(&self, spin: &DensityMatrix) -> Result<DensityMatrix> {
        if spin.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: spin.dim(),
            });
        }
        let mut rho = spin.clone();
        for m in &self.modes {
            rho = rho.tensor(&DensityMatrix::basis(m.truncation, 0)?);
        }
        DensityMatrix::new(self.space.clone(), rho.matrix().clone())
    }

    /// Unitary ideal dynamics.
    pub fn dynamics(&self) -> Result<Dynamics> {
        Ok(Dynamics::Unitary(PiecewiseHamiltonian::constant(
            self.hamiltonian.clone(),
        )?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::hermitian_deviation;

    #[test]
    fn bare_spin_hamiltonian() {
        let s = SystemModel::spin(2.0).unwrap();
        let h = s.hamiltonian().matrix();
        assert_eq!(h[(0, 0)].re, 1.0);
        assert_eq!(h[(1, 1)].re, -1.0);
        assert_eq!(h[(0, 1)].norm(), 0.0);
    }

    #[test]
    fn internal_mode_couples_through_sigma_x() {
        let s = SystemModel::new(
            1.0,
            vec![InternalMode {
                omega: 0.7,
                coupling: 0.2,
                truncation: 3,
            }],
        )
        .unwrap();
        assert_eq!(s.space().total_dim(), 6);
        let h = s.hamiltonian().matrix();
        assert!(hermitian_deviation(h) < 1e-15);
        // ⟨↑,0| H |↓,1⟩ = t
        assert!((h[(0, 4)].re - 0.2).abs() < 1e-15);
        // ⟨↑,1| H |↑,1⟩ = ε/2 + ω
        assert!((h[(1, 1)].re - 1.2).abs() < 1e-15);
        let rho = s
            .initial_state(&DensityMatrix::spin_mixed(0.8).unwrap())
            .unwrap();
        assert!((rho.matrix()[(0, 0)].re - 0.8).abs() < 1e-15);
        assert!((rho.matrix()[(3, 3)].re - 0.2).abs() < 1e-15);
    }
}
