//! Direct solvers: sparse LU over a shared sparsity pattern and dense LU.

use std::sync::OnceLock;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, MatMut};

use super::{CsrMatrix, C64};
use crate::error::{Error, Result};

/// A factorized square operator that can solve with itself and its transpose.
pub trait LinearSolve<T>: Send + Sync {
    /// Order of the system.
    fn dim(&self) -> usize;
    /// Overwrites `x` with `A⁻¹ x`.
    fn solve_in_place(&self, x: &mut [T]);
    /// Overwrites `x` with `A⁻ᵀ x` (plain transpose, no conjugation).
    fn solve_transpose_in_place(&self, x: &mut [T]);
}

/// Scalars supported by the factorization wrappers.
pub trait Scalar: faer::traits::ComplexField + Copy + Send + Sync + 'static {
    /// Lifts a real value.
    fn from_real(v: f64) -> Self;
    /// Modulus, used for pivot diagnostics.
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn from_real(v: f64) -> Self {
        v
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for C64 {
    fn from_real(v: f64) -> Self {
        C64::new(v, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Sparse LU factorization produced by [`MatrixFamily`].
pub struct SparseLu<T: Scalar> {
    n: usize,
    lu: Lu<usize, T>,
}

impl<T: Scalar> LinearSolve<T> for SparseLu<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn solve_in_place(&self, x: &mut [T]) {
        let n = self.n;
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(x, n, 1));
    }

    fn solve_transpose_in_place(&self, x: &mut [T]) {
        let n = self.n;
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(x, n, 1));
    }
}

/// A set of square sparse matrices sharing one union sparsity pattern.
///
/// Linear combinations `Σ cₖ Aₖ` are formed by scattering into the union
/// pattern, and the symbolic LU analysis of that pattern is computed once and
/// reused by every numeric factorization.
pub struct MatrixFamily {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    members: Vec<CsrMatrix>,
    positions: Vec<Vec<usize>>,
    symbolic_lu: OnceLock<SymbolicLu<usize>>,
}

impl MatrixFamily {
    /// Builds the union pattern of `members`, which must all be `n × n`.
    ///
    /// The diagonal is always part of the pattern so that shifted
    /// combinations keep a structurally nonzero diagonal.
    pub fn new(members: Vec<CsrMatrix>) -> Self {
        let n = members.first().map(|m| m.nrows()).unwrap_or(0);
        for m in &members {
            assert_eq!((m.nrows(), m.ncols()), (n, n), "family members must be square and equal-sized");
        }
        // Column-wise union of all patterns plus the diagonal.
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, col) in cols.iter_mut().enumerate() {
            col.push(j);
        }
        for m in &members {
            for (i, j, _) in m.triplets() {
                cols[j].push(i);
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in cols.iter_mut() {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        let positions = members
            .iter()
            .map(|m| {
                m.triplets()
                    .map(|(i, j, _)| {
                        let (a, b) = (col_ptr[j], col_ptr[j + 1]);
                        a + row_idx[a..b].binary_search(&i).expect("entry in union pattern")
                    })
                    .collect()
            })
            .collect();
        Self {
            n,
            col_ptr,
            row_idx,
            members,
            positions,
            symbolic_lu: OnceLock::new(),
        }
    }

    /// Order of the member matrices.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of members.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    /// True when the family has no member.
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member `k`.
    pub fn member(&self, k: usize) -> &CsrMatrix {
        &self.members[k]
    }

    /// Replaces member `k`; its pattern must lie inside the union pattern.
    ///
    /// Cached symbolic analyses stay valid because the union pattern is unchanged.
    pub fn replace_member(&mut self, k: usize, m: CsrMatrix) {
        assert_eq!((m.nrows(), m.ncols()), (self.n, self.n), "replacement must match the family order");
        let (col_ptr, row_idx) = (&self.col_ptr, &self.row_idx);
        self.positions[k] = m
            .triplets()
            .map(|(i, j, _)| {
                let (a, b) = (col_ptr[j], col_ptr[j + 1]);
                a + row_idx[a..b]
                    .binary_search(&i)
                    .expect("replacement entry outside the union pattern")
            })
            .collect();
        self.members[k] = m;
    }

    fn combine<T: Scalar>(&self, coeffs: &[T]) -> Vec<T> {
        assert_eq!(coeffs.len(), self.members.len(), "one coefficient per member");
        let mut vals = vec![T::from_real(0.0); self.row_idx.len()];
        for ((m, pos), &c) in self.members.iter().zip(&self.positions).zip(coeffs) {
            if c == T::from_real(0.0) {
                continue;
            }
            for (&p, &v) in pos.iter().zip(m.values()) {
                vals[p] = vals[p] + c * T::from_real(v);
            }
        }
        vals
    }

    fn symbolic(&self) -> SymbolicSparseColMat<usize> {
        SymbolicSparseColMat::new_checked(self.n, self.n, self.col_ptr.clone(), None, self.row_idx.clone())
    }

    fn symbolic_lu(&self) -> Result<SymbolicLu<usize>> {
        if let Some(s) = self.symbolic_lu.get() {
            return Ok(s.clone());
        }
        let sym = self.symbolic();
        let s = SymbolicLu::try_new(sym.as_ref())
            .map_err(|e| Error::Singular(format!("symbolic LU analysis failed: {e:?}")))?;
        Ok(self.symbolic_lu.get_or_init(|| s).clone())
    }

    /// Factorizes `Σ cₖ Aₖ`.
    pub fn factor<T: Scalar>(&self, coeffs: &[T]) -> Result<SparseLu<T>> {
        let vals = self.combine(coeffs);
        let sym = self.symbolic();
        let mat = SparseColMatRef::new(sym.as_ref(), &vals);
        let lu = Lu::try_new_with_symbolic(self.symbolic_lu()?, mat)
            .map_err(|e| Error::Singular(format!("sparse LU failed: {e:?}")))?;
        Ok(SparseLu { n: self.n, lu })
    }

    /// `y += Σ cₖ Aₖ x` without forming the combination.
    pub fn apply_add(&self, coeffs: &[f64], x: &[f64], y: &mut [f64]) {
        for (m, &c) in self.members.iter().zip(coeffs) {
            if c != 0.0 {
                m.matvec_add(c, x, y);
            }
        }
    }
}

/// Dense LU with partial pivoting.
pub struct DenseLu<T: Scalar> {
    n: usize,
    lu: PartialPivLu<T>,
}

impl<T: Scalar> DenseLu<T> {
    /// Factorizes a dense row-major matrix, rejecting numerically singular input.
    pub fn new(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let m = Mat::<T>::from_fn(n, n, |i, j| rows[i][j]);
        let lu = m.partial_piv_lu();
        let scale = rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |a, v| a.max(v.modulus()))
            .max(f64::MIN_POSITIVE);
        let u = lu.U();
        for i in 0..n {
            if u[(i, i)].modulus() <= 1e-14 * scale {
                return Err(Error::Singular(format!(
                    "dense LU: pivot {i} is numerically zero"
                )));
            }
        }
        Ok(Self { n, lu })
    }
}

impl<T: Scalar> LinearSolve<T> for DenseLu<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn solve_in_place(&self, x: &mut [T]) {
        let n = self.n;
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(x, n, 1));
    }

    fn solve_transpose_in_place(&self, x: &mut [T]) {
        let n = self.n;
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(x, n, 1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_family() -> MatrixFamily {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 3.0), (2, 2, 2.0), (2, 0, 1.0)]);
        let b = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (1, 2, 0.5)]);
        MatrixFamily::new(vec![a, b])
    }

    #[test]
    fn complex_combination_solves_and_transposes() {
        let fam = small_family();
        let c = [C64::new(1.0, 0.0), C64::new(0.0, 2.0)];
        let lu = fam.factor(&c).unwrap();
        let rhs = vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-2.0, 0.5)];
        let mut x = rhs.clone();
        lu.solve_in_place(&mut x);
        let mut back = vec![C64::new(0.0, 0.0); 3];
        for (k, &ck) in c.iter().enumerate() {
            fam.member(k).cmatvec_add(ck, &x, &mut back);
        }
        for (b, r) in back.iter().zip(&rhs) {
            assert!((b - r).norm() < 1e-13);
        }
        let mut y = rhs.clone();
        lu.solve_transpose_in_place(&mut y);
        let mut back_t = vec![C64::new(0.0, 0.0); 3];
        for (k, &ck) in c.iter().enumerate() {
            fam.member(k).cmatvec_transpose_add(ck, &y, &mut back_t);
        }
        for (b, r) in back_t.iter().zip(&rhs) {
            assert!((b - r).norm() < 1e-13);
        }
    }

    #[test]
    fn dense_lu_rejects_singular() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(DenseLu::<f64>::new(&rows).is_err());
    }
}
