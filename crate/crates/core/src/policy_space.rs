//! Causal policy subspaces and the change of variables that convexifies them.
//!
//! A policy `K` is an `mN x p(N+1)` matrix whose block `(t, s)` maps output
//! `y_s` into input `u_t`; causality forces every block with `s > t` to zero.
//! A subspace of such matrices is described by an orthonormal basis `P` of
//! `{vec(K)}` (column stacking), so that `K = vec⁻¹(P z)` for `z ∈ R^d`.
//!
//! # Quadratic invariance
//!
//! The subspace `S` is QI with respect to `CP12` when `K CP12 K ∈ S` for every
//! `K ∈ S`. The map `Φ(K) = K CP12 K` is quadratic, so with `K = Σ z_i K_i`
//!
//! ```text
//! Φ(K) = Σ_i z_i² Φ(K_i) + Σ_{i<j} z_i z_j (K_i CP12 K_j + K_j CP12 K_i).
//! ```
//!
//! If every symmetric pair term lies in `S` then so does `Φ(K)`; conversely
//! `Φ(K_i + K_j) - Φ(K_i) - Φ(K_j)` is exactly the pair term, so QI forces each
//! of them into `S`. Checking the `d(d+1)/2` pair terms is therefore exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nilpotent_resolvent, unvec_columns, vec_columns};
use crate::system::Dims;

/// Relative projection residual below which a matrix counts as a member of the subspace.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Block layout of a policy matrix: `m` inputs, `p` outputs, horizon `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
}

impl PolicyShape {
    pub fn rows(&self) -> usize {
        self.m * self.horizon
    }

    pub fn cols(&self) -> usize {
        self.p * (self.horizon + 1)
    }

    /// Whether entry `(row, col)` may be nonzero in a causal policy.
    pub fn is_causal_entry(&self, row: usize, col: usize) -> bool {
        col / self.p <= row / self.m
    }
}

impl From<Dims> for PolicyShape {
    fn from(d: Dims) -> Self {
        Self { m: d.m, p: d.p, horizon: d.horizon }
    }
}

impl Dims {
    pub fn policy_shape(&self) -> PolicyShape {
        PolicyShape::from(*self)
    }
}

fn check_causal_matrix(what: &'static str, mat: &DMatrix<f64>, shape: PolicyShape) -> Result<()> {
    if mat.nrows() != shape.rows() || mat.ncols() != shape.cols() {
        return Err(Error::InvalidArgument(format!(
            "{what} has shape {}x{}, expected {}x{}",
            mat.nrows(),
            mat.ncols(),
            shape.rows(),
            shape.cols()
        )));
    }
    for col in 0..mat.ncols() {
        for row in 0..mat.nrows() {
            let value = mat[(row, col)];
            if value != 0.0 && !shape.is_causal_entry(row, col) {
                return Err(Error::NonCausal {
                    what,
                    row,
                    col,
                    block_row: row / shape.m,
                    block_col: col / shape.p,
                    value,
                });
            }
        }
    }
    Ok(())
}

/// Binary support of a policy matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    shape: PolicyShape,
    mask: DMatrix<bool>,
}

impl SparsityPattern {
    /// Rejects patterns with ones outside the causal mask.
    pub fn new(shape: PolicyShape, mask: DMatrix<bool>) -> Result<Self> {
        if mask.nrows() != shape.rows() || mask.ncols() != shape.cols() {
            return Err(Error::InvalidArgument(format!(
                "sparsity pattern has shape {}x{}, expected {}x{}",
                mask.nrows(),
                mask.ncols(),
                shape.rows(),
                shape.cols()
            )));
        }
        for col in 0..mask.ncols() {
            for row in 0..mask.nrows() {
                if mask[(row, col)] && !shape.is_causal_entry(row, col) {
                    return Err(Error::NonCausal {
                        what: "sparsity pattern",
                        row,
                        col,
                        block_row: row / shape.m,
                        block_col: col / shape.p,
                        value: 1.0,
                    });
                }
            }
        }
        Ok(Self { shape, mask })
    }

    pub fn from_rows(shape: PolicyShape, rows: &[Vec<u8>]) -> Result<Self> {
        if rows.len() != shape.rows() || rows.iter().any(|r| r.len() != shape.cols()) {
            return Err(Error::InvalidArgument(format!(
                "sparsity pattern must be {}x{} (rows of 0/1)",
                shape.rows(),
                shape.cols()
            )));
        }
        let mask = DMatrix::from_fn(shape.rows(), shape.cols(), |i, j| rows[i][j] != 0);
        Self::new(shape, mask)
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.mask[(row, col)]
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.mask.nrows())
            .map(|i| (0..self.mask.ncols()).map(|j| u8::from(self.mask[(i, j)])).collect())
            .collect()
    }
}

/// All-ones on blocks `(t, s)` with `s <= t`.
pub fn causal_mask(horizon: usize, m: usize, p: usize) -> SparsityPattern {
    let shape = PolicyShape { m, p, horizon };
    let mask = DMatrix::from_fn(shape.rows(), shape.cols(), |i, j| shape.is_causal_entry(i, j));
    SparsityPattern { shape, mask }
}

/// A causal policy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix(DMatrix<f64>);

impl PolicyMatrix {
    pub fn new(k: DMatrix<f64>) -> Self {
        Self(k)
    }

    pub fn zeros(shape: PolicyShape) -> Self {
        Self(DMatrix::zeros(shape.rows(), shape.cols()))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn check_shape(&self, shape: PolicyShape) -> Result<()> {
        if self.0.nrows() != shape.rows() || self.0.ncols() != shape.cols() {
            return Err(Error::InvalidArgument(format!(
                "policy has shape {}x{}, expected {}x{}",
                self.0.nrows(),
                self.0.ncols(),
                shape.rows(),
                shape.cols()
            )));
        }
        Ok(())
    }

    pub fn check_causal(&self, shape: PolicyShape) -> Result<()> {
        check_causal_matrix("policy", &self.0, shape)
    }
}

/// Orthonormal basis `P` (columns are `vec(K_i)`) of a causal policy subspace.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    shape: PolicyShape,
    p: DMatrix<f64>,
    pattern: Option<SparsityPattern>,
    /// For sparsity bases: the `vec` index carried by each coordinate.
    support: Option<Vec<usize>>,
}

/// One standard unit vector per nonzero entry, in column-major `(row, col)` order.
pub fn basis_from_pattern(pattern: &SparsityPattern) -> Result<SubspaceBasis> {
    let shape = pattern.shape;
    let support: Vec<usize> = pattern
        .mask
        .iter()
        .enumerate()
        .filter_map(|(idx, on)| on.then_some(idx))
        .collect();
    if support.is_empty() {
        return Err(Error::EmptySubspace);
    }
    let mut p = DMatrix::zeros(shape.rows() * shape.cols(), support.len());
    for (col, &idx) in support.iter().enumerate() {
        p[(idx, col)] = 1.0;
    }
    Ok(SubspaceBasis { shape, p, pattern: Some(pattern.clone()), support: Some(support) })
}

impl SubspaceBasis {
    /// Basis of the span of the given `vec(K)` columns, orthonormalised by
    /// modified Gram-Schmidt in column order (each output column keeps a
    /// positive component along its input column).
    pub fn from_spanning_columns(shape: PolicyShape, columns: &DMatrix<f64>) -> Result<Self> {
        let len = shape.rows() * shape.cols();
        if columns.nrows() != len {
            return Err(Error::InvalidArgument(format!(
                "basis columns must have length mpN(N+1) = {len}, got {}",
                columns.nrows()
            )));
        }
        if columns.ncols() == 0 {
            return Err(Error::EmptySubspace);
        }
        for j in 0..columns.ncols() {
            let k = unvec_columns(&columns.column(j).into_owned(), shape.rows(), shape.cols());
            check_causal_matrix("basis column", &k, shape)?;
        }
        let mut q = columns.clone();
        let mut rank = 0;
        for j in 0..q.ncols() {
            let original_norm = columns.column(j).norm();
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).into_owned();
                q.column_mut(j).axpy(-proj, &qi, 1.0);
            }
            let norm = q.column(j).norm();
            if norm <= 1e-10 * original_norm.max(f64::MIN_POSITIVE) {
                continue;
            }
            q.column_mut(j).scale_mut(1.0 / norm);
            rank += 1;
        }
        if rank < columns.ncols() {
            return Err(Error::RankDeficient { rank, columns: columns.ncols() });
        }
        Ok(Self { shape, p: q, pattern: None, support: None })
    }

    /// Wraps a matrix that is already orthonormal (`PᵀP = I` to 1e-12).
    pub fn from_orthonormal(shape: PolicyShape, p: DMatrix<f64>) -> Result<Self> {
        let d = p.ncols();
        if d == 0 {
            return Err(Error::EmptySubspace);
        }
        if p.nrows() != shape.rows() * shape.cols() {
            return Err(Error::InvalidArgument("basis row count must be mpN(N+1)".into()));
        }
        let gram_err = (p.transpose() * &p - DMatrix::<f64>::identity(d, d)).amax();
        if gram_err > 1e-12 {
            return Err(Error::InvalidArgument(format!("basis is not orthonormal (‖PᵀP - I‖_max = {gram_err:.3e})")));
        }
        for j in 0..d {
            let k = unvec_columns(&p.column(j).into_owned(), shape.rows(), shape.cols());
            check_causal_matrix("basis column", &k, shape)?;
        }
        Ok(Self { shape, p, pattern: None, support: None })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.p.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn pattern(&self) -> Option<&SparsityPattern> {
        self.pattern.as_ref()
    }

    /// The `i`-th basis element as a policy-shaped matrix.
    pub fn element(&self, i: usize) -> DMatrix<f64> {
        unvec_columns(&self.p.column(i).into_owned(), self.shape.rows(), self.shape.cols())
    }

    /// `vec⁻¹(P z)`.
    pub fn unvec(&self, z: &DVector<f64>) -> Result<PolicyMatrix> {
        if z.len() != self.dim() {
            return Err(Error::InvalidArgument(format!("parameter has length {}, expected {}", z.len(), self.dim())));
        }
        Ok(PolicyMatrix(self.unvec_unchecked(z)))
    }

    pub(crate) fn unvec_unchecked(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let (rows, cols) = (self.shape.rows(), self.shape.cols());
        match &self.support {
            Some(support) => {
                let mut k = DMatrix::zeros(rows, cols);
                let data = k.as_mut_slice();
                for (coord, &idx) in support.iter().enumerate() {
                    data[idx] = z[coord];
                }
                k
            }
            None => unvec_columns(&(&self.p * z), rows, cols),
        }
    }

    /// `Pᵀ vec(K)` after checking that `K` lies in the subspace.
    pub fn vec(&self, k: &PolicyMatrix) -> Result<DVector<f64>> {
        k.check_shape(self.shape)?;
        let (z, residual) = self.project(&k.0);
        if residual > 1e-10 * k.0.norm().max(1.0) {
            return Err(Error::OutsideSubspace { residual });
        }
        Ok(z)
    }

    /// Coordinates of the orthogonal projection of `m` and the residual norm.
    pub fn project(&self, m: &DMatrix<f64>) -> (DVector<f64>, f64) {
        let v = vec_columns(m);
        let z = self.p.tr_mul(&v);
        let residual = (&v - &self.p * &z).norm();
        (z, residual)
    }

    /// Same span with a different orthonormal basis `P U` (`U` orthogonal).
    pub fn rotated(&self, u: &DMatrix<f64>) -> Result<Self> {
        Self::from_orthonormal(self.shape, &self.p * u)
    }
}

/// `vec_policy` in functional form.
pub fn vec_policy(k: &PolicyMatrix, basis: &SubspaceBasis) -> Result<DVector<f64>> {
    basis.vec(k)
}

pub fn unvec_policy(z: &DVector<f64>, basis: &SubspaceBasis) -> Result<PolicyMatrix> {
    basis.unvec(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QiMethod {
    /// Boolean product of the pattern with the support of `CP12`.
    Structural,
    /// Projection residuals of the symmetrised basis pair products.
    Numeric,
}

/// A basis pair whose symmetrised product leaves the subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QiWitness {
    pub i: usize,
    pub j: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiReport {
    pub quadratically_invariant: bool,
    pub dim: usize,
    pub method: QiMethod,
    pub max_relative_residual: f64,
    pub witness: Option<QiWitness>,
}

/// Sufficient sparsity test: `S · supp(CP12) · S ⊆ S` in boolean arithmetic.
pub fn qi_check_structural(pattern: &SparsityPattern, cp12: &DMatrix<f64>) -> bool {
    let s = &pattern.mask;
    let (rows, cols) = (s.nrows(), s.ncols());
    // reach[(i, k)] = exists j: S[i, j] && CP12[j, k] != 0
    let mut reach = DMatrix::from_element(rows, cp12.ncols(), false);
    for i in 0..rows {
        for j in 0..cols {
            if s[(i, j)] {
                for k in 0..cp12.ncols() {
                    if cp12[(j, k)] != 0.0 {
                        reach[(i, k)] = true;
                    }
                }
            }
        }
    }
    for i in 0..rows {
        for k in 0..cp12.ncols() {
            if !reach[(i, k)] {
                continue;
            }
            for l in 0..cols {
                if s[(k, l)] && !s[(i, l)] {
                    return false;
                }
            }
        }
    }
    true
}

/// Numeric QI test over all basis pairs `i <= j`.
pub fn qi_check_numeric(basis: &SubspaceBasis, cp12: &DMatrix<f64>) -> QiReport {
    let d = basis.dim();
    let elements: Vec<DMatrix<f64>> = (0..d).map(|i| basis.element(i)).collect();
    let mut max_rel = 0.0_f64;
    let mut witness: Option<QiWitness> = None;
    for i in 0..d {
        let left = &elements[i] * cp12;
        for j in i..d {
            let right = &elements[j] * cp12;
            let term = &left * &elements[j] + &right * &elements[i];
            let norm = term.norm();
            if norm == 0.0 {
                continue;
            }
            let (_, residual) = basis.project(&term);
            let rel = residual / norm;
            if rel > max_rel {
                max_rel = rel;
            }
            if rel > MEMBERSHIP_TOL && witness.map_or(true, |w| rel > w.relative_residual) {
                witness = Some(QiWitness { i, j, relative_residual: rel });
            }
        }
    }
    QiReport {
        quadratically_invariant: witness.is_none(),
        dim: d,
        method: QiMethod::Numeric,
        max_relative_residual: max_rel,
        witness,
    }
}

/// QI test. Sparsity bases take the structural fast path when it certifies QI;
/// everything else (and every negative structural verdict) goes through the
/// numeric pair test, which also produces a witness.
pub fn qi_check(basis: &SubspaceBasis, cp12: &DMatrix<f64>) -> QiReport {
    if let Some(pattern) = basis.pattern() {
        if qi_check_structural(pattern, cp12) {
            return QiReport {
                quadratically_invariant: true,
                dim: basis.dim(),
                method: QiMethod::Structural,
                max_relative_residual: 0.0,
                witness: None,
            };
        }
    }
    qi_check_numeric(basis, cp12)
}

/// `H(Q) = (I + Q CP12)⁻¹ Q`, with the inverse as a finite Neumann sum.
pub fn h_op(q: &DMatrix<f64>, cp12: &DMatrix<f64>, shape: PolicyShape) -> Result<DMatrix<f64>> {
    check_causal_matrix("Q", q, shape)?;
    Ok(h_op_unchecked(q, cp12, shape.horizon))
}

pub(crate) fn h_op_unchecked(q: &DMatrix<f64>, cp12: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let x = -(q * cp12);
    nilpotent_resolvent(&x, horizon) * q
}

/// `H⁻¹(K) = K (I - CP12 K)⁻¹`.
pub fn h_inv(k: &DMatrix<f64>, cp12: &DMatrix<f64>, shape: PolicyShape) -> Result<DMatrix<f64>> {
    check_causal_matrix("K", k, shape)?;
    Ok(h_inv_unchecked(k, cp12, shape.horizon))
}

pub(crate) fn h_inv_unchecked(k: &DMatrix<f64>, cp12: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let x = cp12 * k;
    k * nilpotent_resolvent(&x, horizon)
}

/// Image of `h` / `h⁻¹` together with the distance of the unprojected matrix
/// from the subspace. On QI subspaces the residual is zero up to roundoff;
/// otherwise `value` is only the projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub value: DVector<f64>,
    pub residual: f64,
}

impl Projected {
    /// Returns the value if the residual is within the membership tolerance.
    pub fn exact(self) -> Result<DVector<f64>> {
        if self.residual > MEMBERSHIP_TOL * self.value.norm().max(1.0) {
            return Err(Error::OutsideSubspace { residual: self.residual });
        }
        Ok(self.value)
    }
}

/// `h(q) = Pᵀ vec(H(vec⁻¹(P q)))`.
pub fn h_forward(q: &DVector<f64>, basis: &SubspaceBasis, cp12: &DMatrix<f64>) -> Result<Projected> {
    let qm = basis.unvec(q)?;
    let k = h_op_unchecked(qm.matrix(), cp12, basis.shape.horizon);
    let (value, residual) = basis.project(&k);
    Ok(Projected { value, residual })
}

/// `h⁻¹(z) = Pᵀ vec(H⁻¹(vec⁻¹(P z)))`.
pub fn h_inverse(z: &DVector<f64>, basis: &SubspaceBasis, cp12: &DMatrix<f64>) -> Result<Projected> {
    let km = basis.unvec(z)?;
    let q = h_inv_unchecked(km.matrix(), cp12, basis.shape.horizon);
    let (value, residual) = basis.project(&q);
    Ok(Projected { value, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::system::assemble_block_operators;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(m: usize, p: usize, horizon: usize) -> PolicyShape {
        PolicyShape { m, p, horizon }
    }

    #[test]
    fn causal_masks_by_hand() {
        assert_eq!(causal_mask(1, 1, 1).to_rows(), vec![vec![1, 0]]);
        assert_eq!(causal_mask(2, 1, 1).to_rows(), vec![vec![1, 0, 0], vec![1, 1, 0]]);
        let wide = causal_mask(2, 1, 3);
        assert_eq!(
            wide.to_rows(),
            vec![vec![1, 1, 1, 0, 0, 0, 0, 0, 0], vec![1, 1, 1, 1, 1, 1, 0, 0, 0]]
        );
    }

    #[test]
    fn pattern_outside_causal_mask_rejected() {
        let err = SparsityPattern::from_rows(shape(1, 1, 2), &[vec![1, 1, 0], vec![0, 0, 0]]).unwrap_err();
        assert!(matches!(err, Error::NonCausal { .. }));
    }

    #[test]
    fn basis_dimensions() {
        let (_, basis) = fixtures::appendix_d();
        assert_eq!(basis.dim(), 3);
        assert_eq!(basis_from_pattern(&causal_mask(2, 1, 1)).unwrap().dim(), 3);
        let single = SparsityPattern::from_rows(shape(1, 1, 2), &[vec![0, 0, 0], vec![0, 1, 0]]).unwrap();
        let b = basis_from_pattern(&single).unwrap();
        assert_eq!(b.dim(), 1);
        assert_eq!(b.matrix().column(0).sum(), 1.0);
        assert_eq!(b.matrix()[(3, 0)], 1.0);
    }

    #[test]
    fn empty_pattern_rejected() {
        let empty = SparsityPattern::from_rows(shape(1, 1, 1), &[vec![0, 0]]).unwrap();
        assert!(matches!(basis_from_pattern(&empty), Err(Error::EmptySubspace)));
    }

    #[test]
    fn appendix_d_coordinates_map_to_entries() {
        let (_, basis) = fixtures::appendix_d();
        assert_eq!(basis.unvec(&DVector::zeros(3)).unwrap(), PolicyMatrix::zeros(basis.shape()));
        let k = basis.unvec(&DVector::from_vec(vec![2.7881, -0.2284, 0.9833])).unwrap();
        let k = k.matrix();
        assert_eq!(k[(0, 0)], 2.7881);
        assert_eq!(k[(1, 0)], -0.2284);
        assert_eq!(k[(1, 3)], 0.9833);
        assert_eq!(k.iter().filter(|v| **v != 0.0).count(), 3);
    }

    #[test]
    fn vec_rejects_policy_outside_subspace() {
        let (_, basis) = fixtures::appendix_d();
        let mut k = DMatrix::zeros(2, 9);
        k[(1, 1)] = 0.5;
        match basis.vec(&PolicyMatrix::new(k)) {
            Err(Error::OutsideSubspace { residual }) => assert!((residual - 0.5).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn vec_unvec_round_trip(z in prop::collection::vec(-10.0f64..10.0, 3)) {
            let (_, basis) = fixtures::appendix_d();
            let z = DVector::from_vec(z);
            let k = basis.unvec(&z).unwrap();
            let back = basis.vec(&k).unwrap();
            prop_assert!((back - z).amax() <= 1e-12);
        }
    }

    #[test]
    fn qi_truth_table() {
        let (spec, basis) = fixtures::appendix_d();
        let cp12 = assemble_block_operators(&spec).cp12;
        assert!(qi_check(&basis, &cp12).quadratically_invariant);
        assert!(qi_check_numeric(&basis, &cp12).quadratically_invariant);

        let (spec3, basis3) = fixtures::b3();
        let cp12_3 = assemble_block_operators(&spec3).cp12;
        let report = qi_check(&basis3, &cp12_3);
        assert!(!report.quadratically_invariant);
        assert!(report.witness.is_some());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let spec = fixtures::random_system(&mut rng, 3, 3);
            let dims = spec.dims();
            let full = basis_from_pattern(&causal_mask(dims.horizon, dims.m, dims.p)).unwrap();
            let cp12 = assemble_block_operators(&spec).cp12;
            assert!(qi_check_numeric(&full, &cp12).quadratically_invariant);
            assert!(qi_check(&full, &cp12).quadratically_invariant);
        }
    }

    #[test]
    fn structural_and_numeric_agree_on_fixtures() {
        for (spec, basis) in [fixtures::appendix_d(), fixtures::b2()] {
            let cp12 = assemble_block_operators(&spec).cp12;
            let pattern = basis.pattern().unwrap();
            assert_eq!(
                qi_check_structural(pattern, &cp12),
                qi_check_numeric(&basis, &cp12).quadratically_invariant
            );
        }
        // A non-QI sparsity pattern: u_1 may see y_0 but u_0 sees y_0 too while
        // u_1 cannot see y_1, yet y_1 depends on u_0.
        let (spec, _) = fixtures::b2();
        let pattern = SparsityPattern::from_rows(shape(1, 1, 2), &[vec![1, 0, 0], vec![0, 1, 0]]).unwrap();
        let basis = basis_from_pattern(&pattern).unwrap();
        let cp12 = assemble_block_operators(&spec).cp12;
        assert!(!qi_check_structural(&pattern, &cp12));
        assert!(!qi_check_numeric(&basis, &cp12).quadratically_invariant);
    }

    fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        a.qr().q()
    }

    #[test]
    fn qi_verdict_is_basis_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cases = [fixtures::appendix_d(), fixtures::b2(), fixtures::b3()];
        for (spec, basis) in cases {
            let cp12 = assemble_block_operators(&spec).cp12;
            let u = random_orthogonal(&mut rng, basis.dim());
            let rotated = basis.rotated(&u).unwrap();
            assert_eq!(
                qi_check(&basis, &cp12).quadratically_invariant,
                qi_check(&rotated, &cp12).quadratically_invariant
            );
        }
    }

    #[test]
    fn b2_h_inverse_by_hand() {
        let (spec, _) = fixtures::b2();
        let cp12 = assemble_block_operators(&spec).cp12;
        let sh = spec.dims().policy_shape();
        let (a, b, c) = (0.7, -1.3, 2.1);
        let k = DMatrix::from_row_slice(2, 3, &[a, 0.0, 0.0, b, c, 0.0]);
        let q = h_inv(&k, &cp12, sh).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[a, 0.0, 0.0, b + a * c, c, 0.0]);
        assert!((&q - expected).amax() < 1e-14);
        let back = h_op(&q, &cp12, sh).unwrap();
        assert!((back - k).amax() < 1e-14);
        assert_eq!(h_op(&DMatrix::zeros(2, 3), &cp12, sh).unwrap(), DMatrix::zeros(2, 3));
    }

    #[test]
    fn h_op_rejects_non_causal_input() {
        let (spec, _) = fixtures::b2();
        let cp12 = assemble_block_operators(&spec).cp12;
        let q = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(h_op(&q, &cp12, spec.dims().policy_shape()), Err(Error::NonCausal { .. })));
    }

    #[test]
    fn b2_h_forward_by_hand() {
        let (spec, basis) = fixtures::b2();
        let cp12 = assemble_block_operators(&spec).cp12;
        let (aq, bq, cq) = (1.5, 0.25, -0.75);
        let z = h_forward(&DVector::from_vec(vec![aq, bq, cq]), &basis, &cp12).unwrap().exact().unwrap();
        let expected = DVector::from_vec(vec![aq, bq - aq * cq, cq]);
        assert!((z - expected).amax() < 1e-14);
        let zero = h_forward(&DVector::zeros(3), &basis, &cp12).unwrap().exact().unwrap();
        assert_eq!(zero, DVector::zeros(3));
    }

    #[test]
    fn h_round_trip_on_appendix_d() {
        let (spec, basis) = fixtures::appendix_d();
        let cp12 = assemble_block_operators(&spec).cp12;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let z = DVector::from_fn(3, |_, _| 8.0 * (rng.random::<f64>() - 0.5));
            let q = h_inverse(&z, &basis, &cp12).unwrap().exact().unwrap();
            let back = h_forward(&q, &basis, &cp12).unwrap().exact().unwrap();
            assert!((back - &z).amax() <= 1e-10);
        }
    }

    #[test]
    fn non_qi_h_forward_reports_residual() {
        let (spec, basis) = fixtures::b3();
        let cp12 = assemble_block_operators(&spec).cp12;
        let out = h_forward(&DVector::from_vec(vec![1.0, 1.0]), &basis, &cp12).unwrap();
        assert!(out.residual > 1e-3);
        assert!(matches!(out.exact(), Err(Error::OutsideSubspace { .. })));
    }

    #[test]
    fn resolvent_is_unimodular_and_nilpotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let spec = fixtures::random_system(&mut rng, 3, 3);
            let dims = spec.dims();
            let sh = dims.policy_shape();
            let cp12 = assemble_block_operators(&spec).cp12;
            let q = DMatrix::from_fn(sh.rows(), sh.cols(), |i, j| {
                if sh.is_causal_entry(i, j) {
                    4.0 * (rng.random::<f64>() - 0.5)
                } else {
                    0.0
                }
            });
            let qc = &q * &cp12;
            let det = (DMatrix::<f64>::identity(qc.nrows(), qc.nrows()) + &qc).determinant();
            assert!((det - 1.0).abs() < 1e-9, "det = {det}");
            let mut power = DMatrix::<f64>::identity(qc.nrows(), qc.nrows());
            for _ in 0..=dims.horizon {
                power = &qc * power;
            }
            assert!(power.amax() <= 1e-12 * (1.0 + qc.amax()).powi(dims.horizon as i32 + 1));
            let k = h_op(&q, &cp12, sh).unwrap();
            let back = h_inv(&k, &cp12, sh).unwrap();
            assert!((back - &q).amax() <= 1e-10 * (1.0 + q.amax()));
        }
    }

    #[test]
    fn spanning_columns_are_orthonormalised_in_order() {
        let (_, basis) = fixtures::b3();
        let p = basis.matrix();
        let gram = p.transpose() * p;
        assert!((gram - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
        let half = std::f64::consts::FRAC_1_SQRT_2;
        let k = basis.unvec(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((k.matrix()[(0, 0)] - half).abs() < 1e-15);
        assert!((k.matrix()[(2, 2)] - half).abs() < 1e-15);
    }

    #[test]
    fn dependent_columns_rejected() {
        let sh = shape(1, 1, 1);
        let cols = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(matches!(SubspaceBasis::from_spanning_columns(sh, &cols), Err(Error::RankDeficient { .. })));
    }
}
