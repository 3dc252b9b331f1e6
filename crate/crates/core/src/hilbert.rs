//! Dense operators and states on small composite Hilbert spaces.
//!
//! Everything is stored as a dense `total_dim × total_dim` complex matrix.
//! Tensor factors are ordered system spins first, then internal bosonic
//! modes, then external bath modes; the first factor is the most significant
//! digit of the flattened index.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

const HERMITIAN_TOL: f64 = 1e-12;
const STATE_TRACE_TOL: f64 = 1e-9;
const STATE_HERMITIAN_TOL: f64 = 1e-10;
const STATE_POSITIVITY_TOL: f64 = 1e-9;

/// Ordered list of tensor-factor dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompositeSpace {
    dims: Vec<usize>,
    total: usize,
}

impl CompositeSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument(
                "a space needs at least one factor".into(),
            ));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidArgument(format!(
                "subsystem dimension {d} is below 2"
            )));
        }
        let total = dims.iter().product();
        Ok(Self { dims, total })
    }

    pub fn single(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    pub fn qubit() -> Self {
        Self {
            dims: vec![2],
            total: 2,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn n_factors(&self) -> usize {
        self.dims.len()
    }

    /// Tensor product `self ⊗ other` (factor lists concatenated).
    pub fn tensor(&self, other: &CompositeSpace) -> CompositeSpace {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        CompositeSpace {
            total: self.total * other.total,
            dims,
        }
    }

    /// Split a flat index into per-factor digits.
    fn digits(&self, mut index: usize, out: &mut [usize]) {
        for (slot, &d) in self.dims.iter().enumerate().rev() {
            out[slot] = index % d;
            index /= d;
        }
    }
}

/// Dense operator on a [`CompositeSpace`].
#[derive(Debug, Clone)]
pub struct QOperator {
    space: CompositeSpace,
    matrix: CMatrix,
    hermitian: bool,
}

impl QOperator {
    /// Builds an operator; when `hermitian_hint` is set the matrix must be
    /// Hermitian to `1e-12 · max|entry|`.
    pub fn new(space: CompositeSpace, matrix: CMatrix, hermitian_hint: bool) -> Result<Self> {
        let n = space.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        if hermitian_hint {
            let dev = hermitian_deviation(&matrix);
            let scale = max_abs(&matrix);
            if dev > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) && dev > 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "operator flagged Hermitian deviates by {dev:.3e}"
                )));
            }
        }
        Ok(Self {
            space,
            matrix,
            hermitian: hermitian_hint,
        })
    }

    /// Square operator on a single factor of dimension `matrix.nrows()`.
    pub fn from_matrix(matrix: CMatrix, hermitian_hint: bool) -> Result<Self> {
        let space = CompositeSpace::single(matrix.nrows())?;
        Self::new(space, matrix, hermitian_hint)
    }

    /// Builds from real row-major entries.
    pub fn from_real_rows(rows: &[&[f64]], hermitian_hint: bool) -> Result<Self> {
        let n = rows.len();
        let matrix = CMatrix::from_fn(n, n, |r, c| Complex64::new(rows[r][c], 0.0));
        Self::from_matrix(matrix, hermitian_hint)
    }

    pub fn identity(space: &CompositeSpace) -> Self {
        let n = space.total_dim();
        Self {
            space: space.clone(),
            matrix: CMatrix::identity(n, n),
            hermitian: true,
        }
    }

    pub fn zeros(space: &CompositeSpace) -> Self {
        let n = space.total_dim();
        Self {
            space: space.clone(),
            matrix: CMatrix::zeros(n, n),
            hermitian: true,
        }
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn is_hermitian_hint(&self) -> bool {
        self.hermitian
    }

    pub fn dagger(&self) -> Self {
        Self {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
        }
    }

    fn check_same_space(&self, other: &QOperator) -> Result<()> {
        if self.space != other.space {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    /// Operator product `self · other`.
    pub fn mul(&self, other: &QOperator) -> Result<Self> {
        self.check_same_space(other)?;
        Ok(Self {
            space: self.space.clone(),
            matrix: &self.matrix * &other.matrix,
            hermitian: false,
        })
    }

    pub fn add(&self, other: &QOperator) -> Result<Self> {
        self.check_same_space(other)?;
        Ok(Self {
            space: self.space.clone(),
            matrix: &self.matrix + &other.matrix,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    /// Multiplies by a real scalar (keeps the Hermitian hint).
    pub fn scale(&self, s: f64) -> Self {
        Self {
            space: self.space.clone(),
            matrix: &self.matrix * Complex64::new(s, 0.0),
            hermitian: self.hermitian,
        }
    }

    pub fn commutator(&self, other: &QOperator) -> Result<Self> {
        self.check_same_space(other)?;
        Ok(Self {
            space: self.space.clone(),
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
            hermitian: false,
        })
    }

    /// `max|O² − 1|`.
    pub fn involution_deviation(&self) -> f64 {
        let sq = &self.matrix * &self.matrix;
        let n = self.dim();
        max_abs(&(sq - CMatrix::identity(n, n)))
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        if self.hermitian {
            let eig = SymmetricEigen::new(self.matrix.clone());
            eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        } else {
            self.matrix
                .clone()
                .singular_values()
                .iter()
                .fold(0.0_f64, |m, v| m.max(*v))
        }
    }
}

/// Density matrix with validated trace, hermiticity and positivity.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    space: CompositeSpace,
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(space: CompositeSpace, matrix: CMatrix) -> Result<Self> {
        Self::with_tolerance(space, matrix, STATE_POSITIVITY_TOL)
    }

    /// Like [`DensityMatrix::new`] with a custom lower bound on the spectrum.
    pub(crate) fn with_tolerance(
        space: CompositeSpace,
        matrix: CMatrix,
        positivity_tol: f64,
    ) -> Result<Self> {
        let n = space.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        let tr = matrix.trace();
        if (tr - ONE).norm() > STATE_TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let dev = hermitian_deviation(&matrix);
        if dev > STATE_HERMITIAN_TOL * max_abs(&matrix).max(1.0) {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {dev:.3e})"
            )));
        }
        let herm = hermitian_part(&matrix);
        let min_eig = SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(*v));
        if min_eig < -positivity_tol {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn from_matrix(matrix: CMatrix) -> Result<Self> {
        let space = CompositeSpace::single(matrix.nrows())?;
        Self::new(space, matrix)
    }

    /// `|ψ⟩⟨ψ|` for a normalised state vector.
    pub fn pure(space: CompositeSpace, psi: &DVector<Complex64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let psi = psi / Complex64::new(norm, 0.0);
        let m = &psi * psi.adjoint();
        Self::new(space, m)
    }

    /// Diagonal state with the given populations.
    pub fn diagonal(space: CompositeSpace, populations: &[f64]) -> Result<Self> {
        let n = space.total_dim();
        if populations.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: populations.len(),
            });
        }
        let m = CMatrix::from_diagonal(&DVector::from_iterator(
            n,
            populations.iter().map(|&p| Complex64::new(p, 0.0)),
        ));
        Self::new(space, m)
    }

    /// Single-spin mixed state `diag(a, 1 − a)` (spin up is index 0).
    pub fn spin_mixed(a: f64) -> Result<Self> {
        Self::diagonal(CompositeSpace::qubit(), &[a, 1.0 - a])
    }

    /// `|n⟩⟨n|` on a single factor of dimension `dim`.
    pub fn basis(dim: usize, n: usize) -> Result<Self> {
        let space = CompositeSpace::single(dim)?;
        let mut pops = vec![0.0; dim];
        *pops
            .get_mut(n)
            .ok_or_else(|| Error::InvalidArgument(format!("basis index {n} out of range")))? = 1.0;
        Self::diagonal(space, &pops)
    }

    pub fn maximally_mixed(space: CompositeSpace) -> Self {
        let n = space.total_dim();
        let m = CMatrix::identity(n, n) * Complex64::new(1.0 / n as f64, 0.0);
        Self { space, matrix: m }
    }

    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        DensityMatrix {
            space: self.space.tensor(&other.space),
            matrix: self.matrix.kronecker(&other.matrix),
        }
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }
}

/// The 2×2 Pauli matrices and identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
    Identity,
}

pub fn pauli(which: Pauli) -> QOperator {
    let (a, b, c, d) = match which {
        Pauli::X => (ZERO, ONE, ONE, ZERO),
        Pauli::Y => (ZERO, -I, I, ZERO),
        Pauli::Z => (ONE, ZERO, ZERO, -ONE),
        Pauli::Identity => (ONE, ZERO, ZERO, ONE),
    };
    QOperator {
        space: CompositeSpace::qubit(),
        matrix: CMatrix::from_row_slice(2, 2, &[a, b, c, d]),
        hermitian: true,
    }
}

/// Spin lowering operator `σ⁻ = |↓⟩⟨↑|`.
pub fn sigma_minus() -> QOperator {
    QOperator {
        space: CompositeSpace::qubit(),
        matrix: CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO]),
        hermitian: false,
    }
}

/// Truncated bosonic annihilation operator with `√n` on the first superdiagonal.
pub fn boson_annihilation(truncation_dim: usize) -> Result<QOperator> {
    if truncation_dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "bosonic truncation {truncation_dim} is below 2"
        )));
    }
    let mut m = CMatrix::zeros(truncation_dim, truncation_dim);
    for n in 1..truncation_dim {
        m[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    Ok(QOperator {
        space: CompositeSpace::single(truncation_dim)?,
        matrix: m,
        hermitian: false,
    })
}

/// Places a single-factor operator at `slot` of `space`, identity elsewhere.
pub fn embed(op: &QOperator, slot: usize, space: &CompositeSpace) -> Result<QOperator> {
    let dims = space.dims();
    let slot_dim = *dims.get(slot).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "slot {slot} out of range for {} factors",
            dims.len()
        ))
    })?;
    if op.dim() != slot_dim {
        return Err(Error::DimensionMismatch {
            expected: slot_dim,
            found: op.dim(),
        });
    }
    let left: usize = dims[..slot].iter().product();
    let right: usize = dims[slot + 1..].iter().product();
    let m = CMatrix::identity(left, left)
        .kronecker(&op.matrix)
        .kronecker(&CMatrix::identity(right, right));
    Ok(QOperator {
        space: space.clone(),
        matrix: m,
        hermitian: op.hermitian,
    })
}

/// Extends a system operator to `system ⊗ rest` as `op ⊗ 1`.
pub fn extend_right(op: &QOperator, rest: &CompositeSpace) -> QOperator {
    let n = rest.total_dim();
    QOperator {
        space: op.space.tensor(rest),
        matrix: op.matrix.kronecker(&CMatrix::identity(n, n)),
        hermitian: op.hermitian,
    }
}

/// `Tr[ρ · op]`.
pub fn expectation(rho: &DensityMatrix, op: &QOperator) -> Result<Complex64> {
    if rho.space != op.space {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: op.dim(),
        });
    }
    Ok(trace_product(&rho.matrix, &op.matrix))
}

/// Reduced state on the factors listed in `keep` (strictly increasing).
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let space = rho.space();
    let nf = space.n_factors();
    if keep.is_empty() || keep.windows(2).any(|w| w[0] >= w[1]) || keep[keep.len() - 1] >= nf {
        return Err(Error::InvalidArgument(format!(
            "keep set {keep:?} must be nonempty, strictly increasing and below {nf}"
        )));
    }
    let kept_dims: Vec<usize> = keep.iter().map(|&k| space.dims()[k]).collect();
    let out_space = CompositeSpace::new(kept_dims)?;
    let out_dim = out_space.total_dim();
    let n = space.total_dim();

    // Split every flat index into (kept index, traced index).
    let mut digits = vec![0usize; nf];
    let mut kept_of = vec![0usize; n];
    let mut traced_of = vec![0usize; n];
    for idx in 0..n {
        space.digits(idx, &mut digits);
        let (mut k, mut t) = (0usize, 0usize);
        for (slot, &d) in digits.iter().enumerate() {
            if keep.contains(&slot) {
                k = k * space.dims()[slot] + d;
            } else {
                t = t * space.dims()[slot] + d;
            }
        }
        kept_of[idx] = k;
        traced_of[idx] = t;
    }
    let mut out = CMatrix::zeros(out_dim, out_dim);
    for c in 0..n {
        for r in 0..n {
            if traced_of[r] == traced_of[c] {
                out[(kept_of[r], kept_of[c])] += rho.matrix[(r, c)];
            }
        }
    }
    DensityMatrix::new(out_space, out)
}

/// `Tr[a · b]` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for c in 0..n {
        for r in 0..n {
            acc += a[(r, c)] * b[(c, r)];
        }
    }
    acc
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn pauli_matrices() {
        let z = pauli(Pauli::Z);
        assert_eq!(z.matrix()[(0, 0)], ONE);
        assert_eq!(z.matrix()[(1, 1)], -ONE);
        assert_eq!(z.matrix()[(0, 1)], ZERO);
        let x = pauli(Pauli::X);
        assert_eq!(x.matrix()[(0, 1)], ONE);
        assert_eq!(x.matrix()[(1, 0)], ONE);
        assert_eq!(x.matrix()[(0, 0)], ZERO);
        let id = pauli(Pauli::Identity);
        assert_eq!(id.matrix(), &CMatrix::identity(2, 2));
        assert!(pauli(Pauli::Y).is_hermitian_hint());
    }

    #[test]
    fn annihilation_entries_and_number_spectrum() {
        let a2 = boson_annihilation(2).unwrap();
        assert_eq!(a2.matrix()[(0, 1)], ONE);
        assert_eq!(a2.matrix()[(1, 0)], ZERO);
        let a3 = boson_annihilation(3).unwrap();
        assert_abs_diff_eq!(a3.matrix()[(1, 2)].re, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(a3.matrix()[(0, 2)], ZERO);

        let a = boson_annihilation(5).unwrap();
        let num = a.dagger().mul(&a).unwrap();
        let mut eig: Vec<f64> = SymmetricEigen::new(num.matrix().clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (n, v) in eig.iter().enumerate() {
            assert_abs_diff_eq!(*v, n as f64, epsilon = 1e-12);
        }
        assert!(boson_annihilation(1).is_err());
    }

    #[test]
    fn embed_builds_tensor_products() {
        let space = CompositeSpace::new(vec![2, 2]).unwrap();
        let e = embed(&pauli(Pauli::Z), 0, &space).unwrap();
        let expected = pauli(Pauli::Z).matrix().kronecker(&CMatrix::identity(2, 2));
        assert_eq!(e.matrix(), &expected);
        assert!(e.is_hermitian_hint());

        let space = CompositeSpace::new(vec![2, 3]).unwrap();
        for slot in 0..2 {
            let id = QOperator::identity(&CompositeSpace::single(space.dims()[slot]).unwrap());
            assert_eq!(
                embed(&id, slot, &space).unwrap().matrix(),
                &CMatrix::identity(6, 6)
            );
        }
        let a = embed(&boson_annihilation(3).unwrap(), 1, &space).unwrap();
        let z = embed(&pauli(Pauli::Z), 0, &space).unwrap();
        assert!(max_abs(a.commutator(&z).unwrap().matrix()) <= 1e-12);

        assert!(matches!(
            embed(&pauli(Pauli::Z), 1, &space),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn expectation_examples() {
        let up = DensityMatrix::spin_mixed(1.0).unwrap();
        assert_eq!(expectation(&up, &pauli(Pauli::Z)).unwrap(), ONE);
        let half = DensityMatrix::spin_mixed(0.5).unwrap();
        assert_abs_diff_eq!(expectation(&half, &pauli(Pauli::Z)).unwrap().norm(), 0.0);
        let r = DensityMatrix::spin_mixed(0.8).unwrap();
        assert_abs_diff_eq!(
            expectation(&r, &pauli(Pauli::Z)).unwrap().re,
            0.6,
            epsilon = 1e-15
        );

        let wrong = QOperator::identity(&CompositeSpace::single(3).unwrap());
        assert!(expectation(&r, &wrong).is_err());
    }

    #[test]
    fn partial_trace_examples() {
        let ra = DensityMatrix::spin_mixed(0.7).unwrap();
        let rb = DensityMatrix::from_matrix(CMatrix::from_row_slice(
            3,
            3,
            &[
                c(0.5),
                c(0.1),
                ZERO,
                c(0.1),
                c(0.3),
                ZERO,
                ZERO,
                ZERO,
                c(0.2),
            ],
        ))
        .unwrap();
        let prod = ra.tensor(&rb);
        let back_a = partial_trace(&prod, &[0]).unwrap();
        assert!(max_abs(&(back_a.matrix() - ra.matrix())) <= 1e-12);
        let back_b = partial_trace(&prod, &[1]).unwrap();
        assert!(max_abs(&(back_b.matrix() - rb.matrix())) <= 1e-12);

        let mixed = DensityMatrix::maximally_mixed(CompositeSpace::new(vec![2, 2]).unwrap());
        let red = partial_trace(&mixed, &[0]).unwrap();
        assert!(max_abs(&(red.matrix() - CMatrix::identity(2, 2) * c(0.5))) <= 1e-15);

        let s = 1.0 / 2f64.sqrt();
        let bell = DVector::from_vec(vec![c(s), ZERO, ZERO, c(s)]);
        let bell = DensityMatrix::pure(CompositeSpace::new(vec![2, 2]).unwrap(), &bell).unwrap();
        let red = partial_trace(&bell, &[0]).unwrap();
        assert!(max_abs(&(red.matrix() - CMatrix::identity(2, 2) * c(0.5))) <= 1e-15);

        assert!(partial_trace(&bell, &[]).is_err());
        assert!(partial_trace(&bell, &[1, 0]).is_err());
        assert!(partial_trace(&bell, &[2]).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::spin_mixed(1.2).is_err());
        let not_herm = CMatrix::from_row_slice(2, 2, &[c(0.5), c(0.2), c(0.1), c(0.5)]);
        assert!(DensityMatrix::from_matrix(not_herm).is_err());
        let bad_trace = CMatrix::identity(2, 2);
        assert!(DensityMatrix::from_matrix(bad_trace).is_err());
        assert!(CompositeSpace::new(vec![2, 1]).is_err());
    }
}
