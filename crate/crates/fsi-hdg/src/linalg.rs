//! Sparse matrices and a sparse direct LU solver.
//!
//! Matrix assembly and the solver-facing API are defined here; the numeric
//! factorization (partial-pivoted sparse LU behind a fill-reducing ordering)
//! is delegated to `faer`, pinned to sequential execution. The pattern
//! analysis depends only on the sparsity structure, so callers that refactor
//! matrices with a fixed pattern compute it once and reuse it.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu as FaerLu, SymbolicLu};
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinAlgError {
    #[error("triplet index ({row}, {col}) outside matrix shape {nrows} x {ncols}")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("matrix entry at ({row}, {col}) is not finite")]
    NotFinite { row: usize, col: usize },
    #[error("expected a square matrix, got {nrows} x {ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("dimension mismatch: matrix is {nrows} x {ncols}, vector has length {len}")]
    DimensionMismatch {
        nrows: usize,
        ncols: usize,
        len: usize,
    },
    #[error("matrix is numerically singular at pivot column {column} (|pivot| = {pivot:.3e}, threshold = {threshold:.3e})")]
    SingularMatrix {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("linear algebra backend: {msg}")]
    Backend { msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from (row, col, value) triplets. Duplicate entries are
    /// summed. The summation order is a fixed total order on (row, col, value
    /// bits), so any permutation of the input produces bit-identical results.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, LinAlgError> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(row, col, value) in triplets {
            if row >= nrows || col >= ncols {
                return Err(LinAlgError::IndexOutOfRange {
                    row,
                    col,
                    nrows,
                    ncols,
                });
            }
            if !value.is_finite() {
                return Err(LinAlgError::NotFinite { row, col });
            }
            entries.push((row, col, value));
        }
        entries.sort_unstable_by(|a, b| {
            (a.0, a.1, a.2.to_bits()).cmp(&(b.0, b.1, b.2.to_bits()))
        });

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut it = entries.into_iter().peekable();
        while let Some((row, col, mut value)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == row && c2 == col {
                    value += v2;
                    it.next();
                } else {
                    break;
                }
            }
            row_ptr[row + 1] += 1;
            col_idx.push(col);
            values.push(value);
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, LinAlgError> {
        if x.len() != self.ncols {
            return Err(LinAlgError::DimensionMismatch {
                nrows: self.nrows,
                ncols: self.ncols,
                len: x.len(),
            });
        }
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market(&self, mut w: impl Write) -> Result<(), LinAlgError> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Reusable sparsity-pattern analysis: fill-reducing ordering plus symbolic
/// factorization. Matrices sharing one pattern (Newton re-assemblies of a
/// fixed discretization) are factored against a single analysis.
#[derive(Clone)]
pub struct LuSymbolic {
    inner: SymbolicLu<usize>,
}

/// Partial-pivoted sparse LU factorization.
pub struct LuFactor {
    n: usize,
    inner: FaerLu<usize, f64>,
}

const PIVOT_REL_THRESHOLD: f64 = 1e-14;

/// Factorization and solves run sequentially: output bytes must not depend
/// on worker count.
fn sequential_backend() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

fn to_faer(a: &SparseMatrix) -> Result<SparseColMat<usize, f64>, LinAlgError> {
    let mut trips = Vec::with_capacity(a.nnz());
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            trips.push(Triplet::new(i, j, v));
        }
    }
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &trips)
        .map_err(|e| LinAlgError::Backend { msg: format!("sparse conversion failed: {e:?}") })
}

/// Analyzes the pattern of `a` for later numeric factorizations.
pub fn lu_symbolic(a: &SparseMatrix) -> Result<LuSymbolic, LinAlgError> {
    sequential_backend();
    if a.nrows() != a.ncols() {
        return Err(LinAlgError::NotSquare { nrows: a.nrows(), ncols: a.ncols() });
    }
    let mat = to_faer(a)?;
    let inner = SymbolicLu::try_new(mat.symbolic())
        .map_err(|e| LinAlgError::Backend { msg: format!("symbolic analysis failed: {e:?}") })?;
    Ok(LuSymbolic { inner })
}

/// Factors `a` from scratch (pattern analysis plus numeric factorization).
pub fn lu_factor(a: &SparseMatrix) -> Result<LuFactor, LinAlgError> {
    let symbolic = lu_symbolic(a)?;
    lu_factor_with(&symbolic, a)
}

/// Numeric factorization against an existing analysis of a matrix with
/// identical sparsity structure.
pub fn lu_factor_with(symbolic: &LuSymbolic, a: &SparseMatrix) -> Result<LuFactor, LinAlgError> {
    sequential_backend();
    if a.nrows() != a.ncols() {
        return Err(LinAlgError::NotSquare { nrows: a.nrows(), ncols: a.ncols() });
    }
    let n = a.nrows();
    let mat = to_faer(a)?;
    let inner = FaerLu::try_new_with_symbolic(symbolic.inner.clone(), mat.as_ref()).map_err(
        |e| match e {
            LuError::SymbolicSingular { index } => LinAlgError::SingularMatrix {
                column: index,
                pivot: 0.0,
                threshold: PIVOT_REL_THRESHOLD * a.max_abs(),
            },
            LuError::Generic(err) => LinAlgError::Backend { msg: format!("{err:?}") },
        },
    )?;
    let factor = LuFactor { n, inner };
    // A zero pivot surfaces as non-finite factors rather than an error, so
    // probe with a one-column solve and report exact singularity here.
    let probe = factor.solve(&vec![1.0; n])?;
    if probe.iter().any(|v| !v.is_finite()) {
        return Err(LinAlgError::SingularMatrix {
            column: n,
            pivot: 0.0,
            threshold: PIVOT_REL_THRESHOLD * a.max_abs(),
        });
    }
    Ok(factor)
}

impl LuFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves a x = b for the matrix this factorization was computed from.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinAlgError> {
        if b.len() != self.n {
            return Err(LinAlgError::DimensionMismatch {
                nrows: self.n,
                ncols: self.n,
                len: b.len(),
            });
        }
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.inner.solve_in_place(rhs.as_mut());
        Ok((0..self.n).map(|i| rhs[(i, 0)]).collect())
    }
}

/// Factors `a` and solves a x = b, with one step of iterative refinement.
pub fn lu_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, LinAlgError> {
    let factor = lu_factor(a)?;
    lu_solve_factored(a, &factor, b)
}

/// Solves with an existing factorization plus one step of iterative refinement.
pub fn lu_solve_factored(
    a: &SparseMatrix,
    factor: &LuFactor,
    b: &[f64],
) -> Result<Vec<f64>, LinAlgError> {
    let mut x = factor.solve(b)?;
    let ax = a.mul_vec(&x)?;
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
    if r.iter().any(|v| *v != 0.0) {
        let dx = factor.solve(&r)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_from_triplets(n: usize, m: usize, t: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; m]; n];
        for &(i, j, v) in t {
            d[i][j] += v;
        }
        d
    }

    #[test]
    fn two_by_two_solve() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
            .unwrap();
        let x = lu_solve(&a, &[3.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn duplicates_sum_order_independent() {
        let triplets = vec![
            (0, 0, 1.0),
            (1, 2, 0.25),
            (0, 0, 1e-17),
            (2, 1, -3.0),
            (0, 0, 2.5),
            (1, 2, 0.5),
        ];
        let a = SparseMatrix::from_triplets(3, 3, &triplets).unwrap();
        let mut shuffled = triplets.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        let b = SparseMatrix::from_triplets(3, 3, &shuffled).unwrap();
        assert_eq!(a, b);
        let dense = dense_from_triplets(3, 3, &triplets);
        // Bitwise equality of the duplicate sums is the point; compare values too.
        assert!((a.get(1, 2) - dense[1][2]).abs() < 1e-15);
    }

    #[test]
    fn index_out_of_range_rejected() {
        let err = SparseMatrix::from_triplets(2, 2, &[(0, 5, 1.0)]).unwrap_err();
        assert!(matches!(err, LinAlgError::IndexOutOfRange { col: 5, .. }));
    }

    #[test]
    fn matches_dense_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let mut triplets = Vec::new();
        for _ in 0..600 {
            triplets.push((
                rng.gen_range(0..n),
                rng.gen_range(0..n),
                rng.gen_range(-1.0..1.0),
            ));
        }
        let a = SparseMatrix::from_triplets(n, n, &triplets).unwrap();
        let dense = dense_from_triplets(n, n, &triplets);
        for i in 0..n {
            for j in 0..n {
                assert!((a.get(i, j) - dense[i][j]).abs() <= 1e-15 * dense[i][j].abs().max(1.0));
            }
        }
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
        // A = R R^T + n I with sparse-ish R keeps the matrix well conditioned.
        let mut r = vec![vec![0.0; n]; n];
        for row in r.iter_mut() {
            for v in row.iter_mut() {
                if rng.gen_bool(0.15) {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += r[i][k] * r[j][k];
                }
                if i == j {
                    acc += n as f64;
                }
                if acc != 0.0 {
                    triplets.push((i, j, acc));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &triplets).unwrap()
    }

    /// Conjugate gradients, used as an independent solve oracle for SPD systems.
    fn cg_solve(a: &SparseMatrix, b: &[f64], tol: f64) -> Vec<f64> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut rs: f64 = r.iter().map(|v| v * v).sum();
        for _ in 0..10 * n {
            let ap = a.mul_vec(&p).unwrap();
            let pap: f64 = p.iter().zip(&ap).map(|(pi, ai)| pi * ai).sum();
            let alpha = rs / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new: f64 = r.iter().map(|v| v * v).sum();
            if rs_new.sqrt() <= tol {
                break;
            }
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        x
    }

    #[test]
    fn spd_100_matches_cg_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random_spd(100, &mut rng);
        let b: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x_lu = lu_solve(&a, &b).unwrap();
        let x_cg = cg_solve(&a, &b, 1e-13);
        let num: f64 = x_lu
            .iter()
            .zip(&x_cg)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        let den: f64 = x_cg.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den <= 1e-8, "LU vs CG relative diff {}", num / den);
    }

    #[test]
    fn residual_small_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..5 {
            let n = 80;
            let mut triplets = Vec::new();
            for i in 0..n {
                triplets.push((i, i, 4.0 + rng.gen_range(0.0..1.0)));
                for _ in 0..6 {
                    let j = rng.gen_range(0..n);
                    triplets.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
            let a = SparseMatrix::from_triplets(n, n, &triplets).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = lu_solve(&a, &b).unwrap();
            let ax = a.mul_vec(&x).unwrap();
            let rnorm: f64 = b
                .iter()
                .zip(&ax)
                .map(|(bi, ai)| (bi - ai) * (bi - ai))
                .sum::<f64>()
                .sqrt();
            let bnorm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                rnorm <= 1e-10 * bnorm.max(1.0),
                "trial {trial}: relative residual {}",
                rnorm / bnorm
            );
        }
    }

    #[test]
    fn singular_matrix_detected() {
        // Second column is identically zero.
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 2, 1.0), (2, 0, 2.0), (2, 2, -1.0)])
            .unwrap();
        let err = lu_solve(&a, &[1.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, LinAlgError::SingularMatrix { .. }));
    }

    #[test]
    fn symbolic_analysis_is_reusable_across_values() {
        // 2D five-point Laplacian pattern on a 20 x 20 grid, two value sets.
        let g = 20;
        let n = g * g;
        let idx = |i: usize, j: usize| i * g + j;
        let mut triplets = Vec::new();
        for i in 0..g {
            for j in 0..g {
                triplets.push((idx(i, j), idx(i, j), 4.0));
                if i > 0 {
                    triplets.push((idx(i, j), idx(i - 1, j), -1.0));
                }
                if i + 1 < g {
                    triplets.push((idx(i, j), idx(i + 1, j), -1.0));
                }
                if j > 0 {
                    triplets.push((idx(i, j), idx(i, j - 1), -1.0));
                }
                if j + 1 < g {
                    triplets.push((idx(i, j), idx(i, j + 1), -1.0));
                }
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &triplets).unwrap();
        let shifted: Vec<(usize, usize, f64)> = triplets
            .iter()
            .map(|&(r, c, v)| (r, c, if r == c { v + 1.5 } else { v }))
            .collect();
        let a2 = SparseMatrix::from_triplets(n, n, &shifted).unwrap();

        let symbolic = lu_symbolic(&a).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        for m in [&a, &a2] {
            let reused = lu_factor_with(&symbolic, m).unwrap();
            let fresh = lu_factor(m).unwrap();
            let x1 = lu_solve_factored(m, &reused, &b).unwrap();
            let x2 = lu_solve_factored(m, &fresh, &b).unwrap();
            assert_eq!(x1, x2, "reused analysis must not change the solution");
            let ax = m.mul_vec(&x1).unwrap();
            let num: f64 = b.iter().zip(&ax).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            let den: f64 = b.iter().map(|u| u * u).sum::<f64>().sqrt();
            assert!(num / den <= 1e-12, "residual {num} too large");
        }
    }

    #[test]
    fn matrix_market_roundtrip() {
        let a = SparseMatrix::from_triplets(3, 4, &[(0, 1, 1.5), (2, 3, -2.25), (1, 0, 3.0)]).unwrap();
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("%%MatrixMarket"));
        let header: Vec<usize> = lines
            .next()
            .unwrap()
            .split_whitespace()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(header, vec![3, 4, 3]);
        let mut triplets = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            triplets.push((
                parts[0].parse::<usize>().unwrap() - 1,
                parts[1].parse::<usize>().unwrap() - 1,
                parts[2].parse::<f64>().unwrap(),
            ));
        }
        let b = SparseMatrix::from_triplets(3, 4, &triplets).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refinement_keeps_solution_for_identity() {
        let a = SparseMatrix::from_triplets(4, 4, &(0..4).map(|i| (i, i, 1.0)).collect::<Vec<_>>())
            .unwrap();
        let b = vec![1.0, -2.0, 3.0, -4.0];
        let x = lu_solve(&a, &b).unwrap();
        assert_eq!(x, b);
    }
}
