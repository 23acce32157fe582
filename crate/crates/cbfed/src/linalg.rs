//! Sparse matrix storage and the linear-solve contract for the saddle-point
//! systems.
//!
//! The solve contract is normative, not the method: the relative residual
//! `||Ax - b||_2 / max(||b||_2, 1)` must not exceed `1e-10`, checked after
//! every factorization solve. The backend is a sparse LU with pivoting and
//! fill-reducing ordering (faer); the saddle-point blocks are indefinite, so
//! Cholesky is not an option.

use std::io::{self, Write};

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};

use crate::CbfedError;

/// Relative residual bound enforced on every solve.
pub const RESIDUAL_LIMIT: f64 = 1e-10;

/// Dense vector of real values.
pub type DenseVector = Vec<f64>;

/// Compressed sparse row matrix with strictly increasing column indices per
/// row and no duplicate entries.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from unordered triplets, merging duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        // entries are sorted, so duplicates are adjacent
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &entries {
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Matrix-vector product with fixed left-to-right per-row summation.
    pub fn spmv(&self, x: &[f64]) -> Result<DenseVector, CbfedError> {
        if x.len() != self.n_cols {
            return Err(CbfedError::DimensionMismatch(format!(
                "spmv: matrix has {} columns, vector has length {}",
                self.n_cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// Entry lookup (zero if not stored).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Writes the matrix in MatrixMarket coordinate format.
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for i in 0..self.n_rows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                writeln!(w, "{} {} {:.17e}", i + 1, self.col_indices[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<(), CbfedError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CbfedError::InvalidInput(format!("{what} contains NaN or Inf")));
    }
    Ok(())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A sparse LU factorization retained for repeated right-hand sides.
pub struct LuFactorization {
    lu: Lu<usize, f64>,
    matrix: CsrMatrix,
}

impl LuFactorization {
    pub fn new(a: &CsrMatrix) -> Result<LuFactorization, CbfedError> {
        if a.n_rows != a.n_cols {
            return Err(CbfedError::DimensionMismatch(format!(
                "solve requires a square matrix, got {}x{}",
                a.n_rows, a.n_cols
            )));
        }
        check_finite(&a.values, "matrix")?;
        let mut triplets = Vec::with_capacity(a.nnz());
        for i in 0..a.n_rows {
            for k in a.row_offsets[i]..a.row_offsets[i + 1] {
                triplets.push(Triplet::new(i, a.col_indices[k], a.values[k]));
            }
        }
        let mat = SparseColMat::try_new_from_triplets(a.n_rows, a.n_cols, &triplets)
            .map_err(|e| CbfedError::SolveFailure(format!("matrix construction: {e:?}")))?;
        let symbolic = SymbolicLu::try_new(mat.symbolic())
            .map_err(|e| CbfedError::SolveFailure(format!("symbolic analysis: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic, mat.rb())
            .map_err(|e| CbfedError::SolveFailure(format!("numeric factorization (singular to working precision?): {e:?}")))?;
        Ok(LuFactorization { lu, matrix: a.clone() })
    }

    /// Solves `Ax = b` and enforces the residual contract.
    pub fn solve(&self, b: &[f64]) -> Result<DenseVector, CbfedError> {
        if b.len() != self.matrix.n_rows {
            return Err(CbfedError::DimensionMismatch(format!(
                "solve: matrix dimension {}, rhs length {}",
                self.matrix.n_rows,
                b.len()
            )));
        }
        check_finite(b, "right-hand side")?;
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let x: Vec<f64> = (0..b.len()).map(|i| x[(i, 0)]).collect();
        let ax = self.matrix.spmv(&x)?;
        let res: Vec<f64> = ax.iter().zip(b).map(|(a, b)| a - b).collect();
        let rel = norm2(&res) / norm2(b).max(1.0);
        if !(rel <= RESIDUAL_LIMIT) {
            return Err(CbfedError::ResidualContract {
                residual: rel,
                limit: RESIDUAL_LIMIT,
            });
        }
        Ok(x)
    }
}

/// One-shot sparse direct solve with the residual contract.
pub fn solve(a: &CsrMatrix, b: &[f64]) -> Result<DenseVector, CbfedError> {
    LuFactorization::new(a)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spmv_and_solve() {
        let triplets: Vec<(usize, usize, f64)> = (0..5).map(|i| (i, i, 1.0)).collect();
        let a = CsrMatrix::from_triplets(5, 5, &triplets);
        let x = vec![3.0, -1.0, 0.5, 2.0, 7.0];
        assert_eq!(a.spmv(&x).unwrap(), x);
        assert_eq!(solve(&a, &x).unwrap(), x);
    }

    #[test]
    fn small_upper_triangular() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0)]);
        let y = a.spmv(&[1.0, 1.0]).unwrap();
        assert_eq!(y, vec![3.0, 3.0]);
    }

    #[test]
    fn duplicate_triplets_merge() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.5), (1, 0, 1.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 0), 3.5);
        assert_eq!(a.get(1, 0), 1.0);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn spd_solve_matches_hand_inverse() {
        // A = [[4,1,0],[1,3,1],[0,1,2]]; inverse computed by hand from the
        // adjugate: det = 4*(6-1) - 1*(2-0) = 18
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 4.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 3.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (2, 2, 2.0),
            ],
        );
        let b = vec![1.0, 2.0, 3.0];
        let x = solve(&a, &b).unwrap();
        // x = A^{-1} b with A^{-1} = (1/18) [[5,-2,1],[-2,8,-4],[1,-4,11]]
        let expected = [
            (5.0 - 4.0 + 3.0) / 18.0,
            (-2.0 + 16.0 - 12.0) / 18.0,
            (1.0 - 8.0 + 33.0) / 18.0,
        ];
        for (xi, ei) in x.iter().zip(expected) {
            assert!((xi - ei).abs() <= 1e-12);
        }
    }

    #[test]
    fn random_spmv_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let mut dense = vec![vec![0.0; n]; n];
        let mut triplets = Vec::new();
        for i in 0..n {
            dense[i][i] = 1.0;
            triplets.push((i, i, 1.0));
            for _ in 0..5 {
                let j = rng.gen_range(0..n);
                let v: f64 = rng.gen_range(-1.0..1.0);
                dense[i][j] += v;
                triplets.push((i, j, v));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &triplets);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = a.spmv(&x).unwrap();
        for i in 0..n {
            let oracle: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
            assert!((y[i] - oracle).abs() <= 1e-13 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_nonfinite_and_mismatched() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        assert!(solve(&a, &[1.0, f64::NAN]).is_err());
        assert!(solve(&a, &[1.0]).is_err());
        assert!(a.spmv(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn singular_matrix_is_an_error() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 1.0)]);
        assert!(solve(&a, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn deterministic_solve() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0)],
        );
        let b = vec![0.3, -0.7, 1.1];
        let x1 = solve(&a, &b).unwrap();
        let x2 = solve(&a, &b).unwrap();
        assert_eq!(x1, x2);
    }

    #[test]
    fn matrix_market_header() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]);
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n2 2 2\n"));
    }
}
