//! Compressed-column sparse matrices and the direct/Krylov step solvers built on them.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::MatMut;

use crate::error::{Error, Result};

/// Square sparse matrix in compressed-column storage with sorted row indices.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CscMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of bounds for n = {n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                vals.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self { n, col_ptr, row_idx, vals }
    }

    pub fn identity_scaled(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            vals: diag.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    /// Iterates over stored entries as `(row, col, value)`, column by column.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], c, self.vals[p]))
        })
    }

    /// Storage position of entry `(row, col)`, if it is structurally present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        self.row_idx[lo..hi].binary_search(&row).ok().map(|k| lo + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.vals[p])
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[p]] += self.vals[p] * xc;
            }
        }
        y
    }

    /// `y = |A| |x|`, entrywise absolute values.
    pub fn mul_abs_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c].abs();
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[p]] += self.vals[p].abs() * xc;
            }
        }
        y
    }

    /// `y = A^T x`
    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|c| {
                (self.col_ptr[c]..self.col_ptr[c + 1])
                    .map(|p| self.vals[p] * x[self.row_idx[p]])
                    .sum()
            })
            .collect()
    }

    /// Product `A * diag(d) * B`.
    pub fn mul_diag_mat(&self, diag: &[f64], other: &CscMatrix) -> CscMatrix {
        assert_eq!(self.n, other.n);
        let mut triplets = Vec::new();
        for j in 0..other.n {
            for q in other.col_ptr[j]..other.col_ptr[j + 1] {
                let k = other.row_idx[q];
                let bkj = other.vals[q] * diag[k];
                for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                    triplets.push((self.row_idx[p], j, self.vals[p] * bkj));
                }
            }
        }
        CscMatrix::from_triplets(self.n, &triplets)
    }

    /// Maximum absolute row sum of `A` (or of `A^T`).
    pub fn norm_inf(&self, transpose: bool) -> f64 {
        if transpose {
            (0..self.n)
                .map(|c| self.vals[self.col_ptr[c]..self.col_ptr[c + 1]].iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        } else {
            let mut rows = vec![0.0; self.n];
            for (&r, v) in self.row_idx.iter().zip(&self.vals) {
                rows[r] += v.abs();
            }
            rows.into_iter().fold(0.0, f64::max)
        }
    }

    pub(crate) fn symbolic(&self) -> SymbolicSparseColMat<usize> {
        SymbolicSparseColMat::new_checked(
            self.n,
            self.n,
            self.col_ptr.clone(),
            None,
            self.row_idx.clone(),
        )
    }

    /// Matrix with the same pattern as `self` and the given values.
    pub fn with_values(&self, vals: Vec<f64>) -> CscMatrix {
        assert_eq!(vals.len(), self.vals.len());
        CscMatrix {
            n: self.n,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            vals,
        }
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Symbolic analysis shared by every matrix with a fixed sparsity pattern.
pub struct LuPattern {
    symbolic: SymbolicSparseColMat<usize>,
    lu: SymbolicLu<usize>,
}

impl std::fmt::Debug for LuPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuPattern").finish_non_exhaustive()
    }
}

impl LuPattern {
    pub fn analyze(pattern: &CscMatrix) -> Result<Self> {
        let symbolic = pattern.symbolic();
        let lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| Error::InvalidInput(format!("symbolic LU failed: {e:?}")))?;
        Ok(Self { symbolic, lu })
    }

    /// Numeric LU of a matrix sharing this pattern.
    pub fn factor(&self, matrix: &CscMatrix) -> std::result::Result<LuFactor, String> {
        let view = SparseColMatRef::new(self.symbolic.as_ref(), matrix.values());
        let lu = Lu::try_new_with_symbolic(self.lu.clone(), view).map_err(|e| format!("{e:?}"))?;
        Ok(LuFactor { lu })
    }
}

pub struct LuFactor {
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for LuFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactor").finish_non_exhaustive()
    }
}

impl LuFactor {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(rhs, n, 1));
    }

    pub fn solve_transpose_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(rhs, n, 1));
    }
}

/// Which algorithm solves the per-step linear systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolverKind {
    /// Sparse LU of every step matrix.
    DirectLu,
    /// Restarted GMRES preconditioned by the LU of the potential-free step matrix.
    Krylov,
}

/// Solver for one step matrix `S` and its transpose, with a residual check.
#[derive(Debug)]
pub enum StepSolver {
    Direct { matrix: CscMatrix, lu: LuFactor },
    Krylov { matrix: CscMatrix, precond: Arc<LuFactor> },
}

impl StepSolver {
    pub fn matrix(&self) -> &CscMatrix {
        match self {
            StepSolver::Direct { matrix, .. } | StepSolver::Krylov { matrix, .. } => matrix,
        }
    }

    /// Solves `S x = b` (or `S^T x = b`), checking the normwise backward error
    /// `|S x - b|_inf <= tol * (|S|_inf |x|_inf + |b|_inf)`.
    pub fn solve(&self, rhs: &[f64], transpose: bool, tol: f64) -> std::result::Result<Vec<f64>, String> {
        let x = match self {
            StepSolver::Direct { lu, .. } => {
                let mut x = rhs.to_vec();
                if transpose {
                    lu.solve_transpose_in_place(&mut x);
                } else {
                    lu.solve_in_place(&mut x);
                }
                x
            }
            StepSolver::Krylov { matrix, precond } => gmres(matrix, precond, rhs, transpose, tol)?,
        };
        let ax = if transpose {
            self.matrix().mul_vec_transpose(&x)
        } else {
            self.matrix().mul_vec(&x)
        };
        let res = ax.iter().zip(rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = self.matrix().norm_inf(transpose) * inf_norm(&x) + inf_norm(rhs);
        if !res.is_finite() || res > tol * scale {
            return Err(format!("residual {res:e} above {:e}", tol * scale));
        }
        Ok(x)
    }
}

/// Right-preconditioned restarted GMRES(30).
fn gmres(
    a: &CscMatrix,
    precond: &LuFactor,
    b: &[f64],
    transpose: bool,
    tol: f64,
) -> std::result::Result<Vec<f64>, String> {
    const RESTART: usize = 30;
    const MAX_CYCLES: usize = 40;
    let n = b.len();
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut z = v.to_vec();
        if transpose {
            precond.solve_transpose_in_place(&mut z);
            a.mul_vec_transpose(&z)
        } else {
            precond.solve_in_place(&mut z);
            a.mul_vec(&z)
        }
    };
    let precondition = |v: &[f64]| -> Vec<f64> {
        let mut z = v.to_vec();
        if transpose {
            precond.solve_transpose_in_place(&mut z);
        } else {
            precond.solve_in_place(&mut z);
        }
        z
    };
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let anorm = a.norm_inf(transpose);
    let mut x = vec![0.0; n];
    for _ in 0..MAX_CYCLES {
        let ax = if transpose { a.mul_vec_transpose(&x) } else { a.mul_vec(&x) };
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = dot(&r, &r).sqrt();
        // Aim comfortably inside the caller's backward-error check.
        let target = 1e-2 * tol * (anorm * inf_norm(&x) + inf_norm(b));
        if inf_norm(&r) <= target {
            return Ok(x);
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; RESTART]; RESTART + 1];
        let mut cs = vec![0.0; RESTART];
        let mut sn = vec![0.0; RESTART];
        let mut g = vec![0.0; RESTART + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..RESTART {
            let mut w = apply(&basis[j]);
            for (i, v) in basis.iter().enumerate() {
                let h = dot(&w, v);
                hess[i][j] = h;
                w.iter_mut().zip(v).for_each(|(w, v)| *w -= h * v);
            }
            let hn = dot(&w, &w).sqrt();
            hess[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = (hess[j][j].powi(2) + hess[j + 1][j].powi(2)).sqrt();
            cs[j] = hess[j][j] / denom;
            sn[j] = hess[j + 1][j] / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() <= 0.1 * target || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut coef = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|k| hess[i][k] * coef[k]).sum();
            coef[i] = (g[i] - s) / hess[i][i];
        }
        let mut update = vec![0.0; n];
        for (c, v) in coef.iter().zip(&basis) {
            update.iter_mut().zip(v).for_each(|(u, v)| *u += c * v);
        }
        let dx = precondition(&update);
        x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
    }
    Err("GMRES did not converge".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, skew: f64) -> CscMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0 + skew));
                t.push((i + 1, i, -1.0 - skew));
            }
        }
        CscMatrix::from_triplets(n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CscMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn transpose_product_matches_definition() {
        let m = tridiag(6, 0.3);
        let x: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).cos()).collect();
        let lhs: f64 = m.mul_vec(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(m.mul_vec_transpose(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn direct_and_krylov_agree() {
        let m = tridiag(40, 0.2);
        let pattern = LuPattern::analyze(&m).unwrap();
        let lu = pattern.factor(&m).unwrap();
        let base = tridiag(40, 0.0);
        let pre = Arc::new(pattern.factor(&base).unwrap());
        let direct = StepSolver::Direct { matrix: m.clone(), lu };
        let krylov = StepSolver::Krylov { matrix: m, precond: pre };
        let b: Vec<f64> = (0..40).map(|i| 1.0 + (i as f64).cos()).collect();
        for transpose in [false, true] {
            let x1 = direct.solve(&b, transpose, 1e-10).unwrap();
            let x2 = krylov.solve(&b, transpose, 1e-10).unwrap();
            let d = x1.iter().zip(&x2).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(d < 1e-9, "transpose={transpose} diff={d}");
        }
    }
}
