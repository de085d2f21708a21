//! Exact symmetric-matrix primitives.
//!
//! Everything downstream (Riccati iteration, SDP assembly, Lyapunov solves)
//! manipulates symmetric matrices.  [`SymMatrix`] enforces *exact* symmetry —
//! entry `(i, j)` and entry `(j, i)` are the same float, not merely close —
//! so that vectorization round-trips and solver hand-offs are deterministic.
//!
//! The symmetric vectorization [`svec`] stacks the upper triangle row by row
//! and scales off-diagonal entries by `sqrt(2)`, which makes it an isometry:
//! `svec(A) . svec(B) == trace(A B)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// A dense symmetric matrix with exact entry-level symmetry.
///
/// Construction mirrors the upper triangle into the lower one, so the two
/// halves are bit-identical no matter how the input was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Wraps a square matrix, forcing exact symmetry.
    ///
    /// The strict upper triangle is averaged with the strict lower one and
    /// the result copied into both halves.  For inputs that are already
    /// symmetric to round-off this is the identity up to one rounding.
    ///
    /// # Panics
    /// Panics if `m` is not square (a programming error, not a data error).
    pub fn new(mut m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix requires a square matrix");
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { data: m }
    }

    /// Wraps a matrix that is already exactly symmetric (debug-asserted).
    pub fn from_exact(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        debug_assert!({
            let n = m.nrows();
            (0..n).all(|i| (i + 1..n).all(|j| m[(i, j)] == m[(j, i)]))
        });
        Self { data: m }
    }

    /// The `n x n` zero matrix.
    pub fn zeros(n: usize) -> Self {
        Self {
            data: DMatrix::zeros(n, n),
        }
    }

    /// The `n x n` identity.
    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    /// Builds a symmetric matrix from its upper-triangular entries,
    /// `f(i, j)` being called only for `i <= j`.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Self { data }
    }

    /// Side length.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Borrows the underlying dense matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Consumes the wrapper, returning the dense matrix.
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Entry access.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// Trace.
    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    /// Extracts the symmetric sub-block with rows and columns
    /// `start..start + len`.
    pub fn principal_block(&self, start: usize, len: usize) -> SymMatrix {
        SymMatrix::from_exact(self.data.view((start, start), (len, len)).into_owned())
    }

    /// Sum of two symmetric matrices.
    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::from_exact(&self.data + &other.data)
    }

    /// Difference of two symmetric matrices.
    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::from_exact(&self.data - &other.data)
    }

    /// Scalar multiple.
    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix::from_exact(&self.data * s)
    }

    /// The congruence `M^T S M`, symmetric by construction.
    pub fn congruence(&self, m: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::new(m.transpose() * &self.data * m)
    }

    /// Eigenvalues (ascending).  Symmetric eigensolve, always real.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .data
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Smallest eigenvalue.
    pub fn min_eig(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .fold(0.0f64, |acc, &e| acc.max(e.abs()))
    }

    /// Positive semidefiniteness test: `min_eig >= -tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eig() >= -tol
    }
}

/// Symmetric vectorization: upper triangle, row-major, off-diagonal entries
/// scaled by `sqrt(2)`.
///
/// For an `n x n` input the result has length `n (n + 1) / 2` and satisfies
/// `svec(A) . svec(B) == trace(A B)`.
pub fn svec(s: &SymMatrix) -> DVector<f64> {
    let n = s.dim();
    let mut out = Vec::with_capacity(svec_len(n));
    for i in 0..n {
        out.push(s.get(i, i));
        for j in (i + 1)..n {
            out.push(SQRT2 * s.get(i, j));
        }
    }
    DVector::from_vec(out)
}

/// Length of the `svec` image of an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`svec`]: rebuilds the symmetric matrix of side `n`.
///
/// Fails with [`Error::DimensionMismatch`] when `v.len() != n (n + 1) / 2`.
pub fn smat(v: &DVector<f64>, n: usize) -> Result<SymMatrix> {
    if v.len() != svec_len(n) {
        return Err(Error::DimensionMismatch {
            what: "smat",
            expected: format!("{}", svec_len(n)),
            got: format!("{}", v.len()),
        });
    }
    let mut data = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        data[(i, i)] = v[k];
        k += 1;
        for j in (i + 1)..n {
            let val = v[k] / SQRT2;
            data[(i, j)] = val;
            data[(j, i)] = val;
            k += 1;
        }
    }
    Ok(SymMatrix::from_exact(data))
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major vectorization of a dense matrix.
///
/// Satisfies `vec(M G M^T) == kron(M, M) * vec(G)`.
pub fn vec_mat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_mat`] for an `r x c` target.
pub fn unvec_mat(v: &DVector<f64>, r: usize, c: usize) -> Result<DMatrix<f64>> {
    if v.len() != r * c {
        return Err(Error::DimensionMismatch {
            what: "unvec_mat",
            expected: format!("{}", r * c),
            got: format!("{}", v.len()),
        });
    }
    Ok(DMatrix::from_column_slice(r, c, v.as_slice()))
}

/// Block-diagonal direct sum of dense matrices.
///
/// Fails with [`Error::InvalidConfig`] on an empty block list.
pub fn direct_sum(blocks: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if blocks.is_empty() {
        return Err(Error::InvalidConfig(
            "direct_sum needs at least one block".into(),
        ));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(*b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    Ok(out)
}

/// `k`-fold direct sum of one block with itself.
pub fn direct_sum_repeat(block: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let blocks: Vec<&DMatrix<f64>> = std::iter::repeat(block).take(k).collect();
    direct_sum(&blocks)
}

/// Schur complement of the trailing `m x m` block of a symmetric
/// `(n + m) x (n + m)` matrix:
///
/// ```text
/// P(F) = F11 - F12 F22^{-1} F12^T
/// ```
///
/// The solve uses a Cholesky factorization of `F22`; the result is
/// re-symmetrized.  Fails with [`Error::SingularBlock`] (carrying the
/// offending eigenvalue) when `min_eig(F22) <= 1e-10 * (1 + ||F22||_2)`.
pub fn schur_p(f: &SymMatrix, n: usize, m: usize) -> Result<SymMatrix> {
    if f.dim() != n + m {
        return Err(Error::DimensionMismatch {
            what: "schur_p",
            expected: format!("{}x{}", n + m, n + m),
            got: format!("{}x{}", f.dim(), f.dim()),
        });
    }
    let f11 = f.matrix().view((0, 0), (n, n)).into_owned();
    let f12 = f.matrix().view((0, n), (n, m)).into_owned();
    let f22 = f.principal_block(n, m);

    let min_eig = f22.min_eig();
    let tol = 1e-10 * (1.0 + f22.spectral_norm());
    if min_eig <= tol {
        return Err(Error::SingularBlock {
            what: "F22",
            min_eig,
        });
    }
    let chol = f22
        .matrix()
        .clone()
        .cholesky()
        .ok_or(Error::SingularBlock {
            what: "F22",
            min_eig,
        })?;
    // X = F22^{-1} F12^T, so F12 X = F12 F22^{-1} F12^T.
    let x = chol.solve(&f12.transpose());
    Ok(SymMatrix::new(f11 - f12 * x))
}

/// Spectral radius of a general square matrix.
///
/// Uses a Schur decomposition; failure to converge is surfaced as
/// [`Error::NumericalError`].
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            what: "spectral_radius",
            expected: "square matrix".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    // The QR iteration inside nalgebra's Schur never converges on an exactly
    // zero matrix; its spectrum is known anyway.
    if m.is_empty() || m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 100_000)
        .ok_or_else(|| Error::NumericalError("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, e| acc.max(e.norm())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample_sym(n: usize, seed: u64) -> SymMatrix {
        // Cheap deterministic pseudo-random fill; plenty for algebra tests.
        let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 2.0 - 1.0
        };
        SymMatrix::from_upper_fn(n, |_, _| next())
    }

    #[test]
    fn construction_enforces_exact_symmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0 + 1e-12, 4.0]);
        let s = SymMatrix::new(m);
        assert_eq!(s.get(0, 1), s.get(1, 0));
        assert_abs_diff_eq!(s.get(0, 1), 2.0 + 0.5e-12, epsilon = 1e-15);
    }

    #[test]
    #[should_panic(expected = "square")]
    fn construction_rejects_rectangular() {
        let _ = SymMatrix::new(DMatrix::zeros(2, 3));
    }

    #[test]
    fn svec_layout_and_scaling() {
        // [[1, 2], [2, 3]] -> (1, 2*sqrt(2), 3), row-major upper triangle.
        let s = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
        let v = svec(&s);
        assert_eq!(v.len(), 3);
        assert_abs_diff_eq!(v[0], 1.0);
        assert_abs_diff_eq!(v[1], 2.0 * SQRT2, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 3.0);
    }

    #[test]
    fn svec_smat_roundtrip() {
        for n in [1, 2, 3, 5, 8] {
            let s = sample_sym(n, n as u64);
            let back = smat(&svec(&s), n).unwrap();
            assert_abs_diff_eq!((s.matrix() - back.matrix()).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn svec_dot_is_trace_inner_product() {
        for seed in 0..20u64 {
            let a = sample_sym(4, 2 * seed + 1);
            let b = sample_sym(4, 2 * seed + 2);
            let dot = svec(&a).dot(&svec(&b));
            let tr = (a.matrix() * b.matrix()).trace();
            assert_abs_diff_eq!(dot, tr, epsilon = 1e-12 * (1.0 + tr.abs()));
        }
    }

    #[test]
    fn smat_rejects_wrong_length() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            smat(&v, 2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kron_matches_hand_computation() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let k = kron(&a, &b);
        assert_eq!(k.nrows(), 4);
        assert_abs_diff_eq!(k[(0, 1)], 1.0);
        assert_abs_diff_eq!(k[(0, 3)], 2.0);
        assert_abs_diff_eq!(k[(3, 0)], 3.0);
        assert_abs_diff_eq!(k[(2, 3)], 4.0);
    }

    #[test]
    fn vec_identity_for_congruence() {
        // vec(M G M^T) == kron(M, M) vec(G), the identity the Lyapunov
        // solver is built on.
        let m = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.25]);
        let g = sample_sym(2, 7);
        let lhs = vec_mat(&(&m * g.matrix() * m.transpose()));
        let rhs = kron(&m, &m) * vec_mat(g.matrix());
        assert_abs_diff_eq!((lhs - rhs).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn direct_sum_places_blocks() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        let d = direct_sum(&[&a, &b]).unwrap();
        assert_eq!((d.nrows(), d.ncols()), (3, 3));
        assert_abs_diff_eq!(d[(0, 1)], 2.0);
        assert_abs_diff_eq!(d[(1, 2)], 3.0);
        assert_abs_diff_eq!(d[(2, 2)], 4.0);
        assert_abs_diff_eq!(d[(0, 2)], 0.0);
    }

    #[test]
    fn direct_sum_rejects_empty() {
        assert!(matches!(direct_sum(&[]), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn schur_complement_2x2_scalar_blocks() {
        // [[5, 2], [2, 4]] with n = m = 1: 5 - 4/4 = 4.
        let f = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 4.0]));
        let p = schur_p(&f, 1, 1).unwrap();
        assert_abs_diff_eq!(p.get(0, 0), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn schur_complement_block_identity() {
        // For F = [[I + C C^T, C], [C^T, I]] the complement is exactly I.
        let c = DMatrix::from_row_slice(2, 2, &[0.4, -0.1, 0.9, 0.3]);
        let n = 2;
        let mut f = DMatrix::zeros(4, 4);
        f.view_mut((0, 0), (n, n))
            .copy_from(&(DMatrix::identity(n, n) + &c * c.transpose()));
        f.view_mut((0, n), (n, n)).copy_from(&c);
        f.view_mut((n, 0), (n, n)).copy_from(&c.transpose());
        f.view_mut((n, n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        let p = schur_p(&SymMatrix::new(f), n, n).unwrap();
        assert_abs_diff_eq!(
            (p.matrix() - DMatrix::identity(n, n)).norm(),
            0.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn schur_rejects_singular_trailing_block() {
        let f = SymMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 0.0, 0.0, 1e-12],
        ));
        match schur_p(&f, 1, 1) {
            Err(Error::SingularBlock { what, min_eig }) => {
                assert_eq!(what, "F22");
                assert!(min_eig <= 1e-11);
            }
            other => panic!("expected SingularBlock, got {other:?}"),
        }
    }

    #[test]
    fn spectral_radius_of_rotation_scaled() {
        // 0.5 * rotation has both eigenvalues at modulus 0.5.
        let theta = 0.7f64;
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        ) * 0.5;
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, 2.0]);
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn min_eig_and_psd() {
        let s = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]));
        assert_abs_diff_eq!(s.min_eig(), -1.0, epsilon = 1e-12);
        assert!(!s.is_psd(1e-9));
        assert!(SymMatrix::identity(3).is_psd(0.0));
    }

    #[test]
    fn principal_block_extracts_symmetric_part() {
        let s = sample_sym(4, 11);
        let b = s.principal_block(1, 2);
        assert_eq!(b.dim(), 2);
        assert_eq!(b.get(0, 1), s.get(1, 2));
    }
}
