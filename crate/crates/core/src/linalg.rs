//! Sparse matrices, direct solves and symmetric inertia.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < r.len() {
                let j = r[k].0;
                let mut v = 0.0;
                while k < r.len() && r[k].0 == j {
                    v += r[k].1;
                    k += 1;
                }
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            t.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        t
    }

    /// Returns `s * self + diag(diag)`.
    pub fn scale_add_diagonal(&self, s: f64, diag: &[f64]) -> Self {
        assert_eq!(diag.len(), self.nrows);
        let mut t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, s * v)).collect();
        t.extend(diag.iter().enumerate().map(|(i, &v)| (i, i, v)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Returns `diag(w) * self`.
    pub fn row_scaled(&self, w: &[f64]) -> Self {
        let mut m = self.clone();
        for i in 0..self.nrows {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                m.values[k] *= w[i];
            }
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.nrows).map(|i| self.row(i).map(|e| e.1.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Sparse LU factorization of a square matrix.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if triplets.iter().any(|t| !t.2.is_finite()) {
            return Err(Error::SingularJacobian("non-finite matrix entry".into()));
        }
        let t: Vec<_> = triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
            .map_err(|e| Error::SingularJacobian(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::SingularJacobian(format!("{e:?}")))?;
        Ok(Self { n, lu })
    }

    pub fn from_csr(a: &CsrMatrix) -> Result<Self> {
        Self::new(a.nrows(), &a.triplets())
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n);
        let b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::SingularJacobian("non-finite solution".into()))
        }
    }
}

/// Solves a square sparse system.
pub fn sparse_solve(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let lu = SparseLu::from_csr(a)?;
    let x = lu.solve(rhs)?;
    check_solution(a, &x, rhs)?;
    Ok(x)
}

/// Rejects solutions whose backward error shows the matrix was numerically singular.
fn check_solution(a: &CsrMatrix, x: &[f64], rhs: &[f64]) -> Result<()> {
    let r = a.mul_vec(x);
    let err = r.iter().zip(rhs).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let growth = a.max_abs_row_sum() * inf_norm(x);
    if err > 1e-6 * (growth + inf_norm(rhs)).max(f64::MIN_POSITIVE) {
        return Err(Error::SingularJacobian(format!("backward error {err:e}")));
    }
    if growth > 1e13 * inf_norm(rhs) {
        return Err(Error::SingularJacobian(format!("solution growth {:e}", growth / inf_norm(rhs))));
    }
    Ok(())
}

/// Solves `[[J, B], [C^T, D]] x = rhs` where `B` and `C` hold `k` dense columns each.
pub fn bordered_solve(
    j: &CsrMatrix,
    border_cols: &[Vec<f64>],
    border_rows: &[Vec<f64>],
    corner: &[Vec<f64>],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = j.nrows();
    let k = border_cols.len();
    if border_rows.len() != k || corner.len() != k || rhs.len() != n + k {
        return Err(Error::InvalidArgument("bordered system dimensions".into()));
    }
    let mut t = j.triplets();
    for (c, col) in border_cols.iter().enumerate() {
        t.extend(col.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(i, &v)| (i, n + c, v)));
    }
    for (r, row) in border_rows.iter().enumerate() {
        t.extend(row.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(i, &v)| (n + r, i, v)));
        t.extend(corner[r].iter().enumerate().map(|(c, &v)| (n + r, n + c, v)));
    }
    let a = CsrMatrix::from_triplets(n + k, n + k, &t);
    sparse_solve(&a, rhs).map_err(|e| match e {
        Error::SingularJacobian(m) => Error::SingularBorderedSystem(m),
        other => other,
    })
}

/// Eigenvalue sign counts of a symmetric matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// Inertia of `a - shift * diag(w)` (or `a - shift*I` when `w` is `None`) by banded LDL^T.
///
/// `a` must be symmetric. A vanishing pivot is reported as a zero eigenvalue.
pub fn inertia(a: &CsrMatrix, shift: f64, w: Option<&[f64]>) -> Result<Inertia> {
    let n = a.nrows();
    let b = a.bandwidth();
    let width = b + 1;
    let mut band = vec![0.0; n * width];
    let at = |i: usize, k: usize| i * width + (k + b - i);
    for i in 0..n {
        for (j, v) in a.row(i) {
            if j <= i {
                band[at(i, j)] = v;
            }
        }
        band[at(i, i)] -= shift * w.map_or(1.0, |w| w[i]);
    }
    let scale = a.max_abs_row_sum().max(shift.abs()).max(f64::MIN_POSITIVE);
    let mut d = vec![0.0; n];
    let mut inertia = Inertia { positive: 0, negative: 0, zero: 0 };
    for j in 0..n {
        let lo = j.saturating_sub(b);
        let mut dj = band[at(j, j)];
        for k in lo..j {
            let l = band[at(j, k)];
            dj -= l * l * d[k];
        }
        if !dj.is_finite() {
            return Err(Error::FactorizationFailure(format!("non-finite pivot at {j}")));
        }
        if dj.abs() <= 1e-14 * scale {
            inertia.zero += 1;
            dj = 1e-14 * scale;
        } else if dj > 0.0 {
            inertia.positive += 1;
        } else {
            inertia.negative += 1;
        }
        d[j] = dj;
        for i in j + 1..(j + width).min(n) {
            let lo_i = i.saturating_sub(b).max(lo);
            let mut s = band[at(i, j)];
            for k in lo_i..j {
                s -= band[at(i, k)] * band[at(j, k)] * d[k];
            }
            band[at(i, j)] = s / dj;
        }
    }
    Ok(inertia)
}

/// Ascending eigenvalues of a symmetric matrix via a dense solve.
pub fn dense_eigenvalues(a: &CsrMatrix) -> Result<Vec<f64>> {
    a.to_dense()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::FactorizationFailure(format!("{e:?}")))
}

/// Ascending eigenpairs of a symmetric matrix via a dense solve.
pub fn dense_eigen(a: &CsrMatrix) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = a.nrows();
    let e = a
        .to_dense()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::FactorizationFailure(format!("{e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    Ok((0..n).map(|k| (s[k], (0..n).map(|i| u[(i, k)]).collect())).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn normalize(a: &mut [f64]) -> f64 {
    let n = norm2(a);
    if n > 0.0 {
        a.iter_mut().for_each(|v| *v /= n);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, diag: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, diag));
            if i + 1 < n {
                t.push((i, i + 1, 1.0));
                t.push((i + 1, i, 1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 1.0)]);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn inertia_matches_dense_eigenvalues() {
        let a = tridiag(30, 0.3);
        let ev = dense_eigenvalues(&a).unwrap();
        let i = inertia(&a, 0.0, None).unwrap();
        assert_eq!(i.positive, ev.iter().filter(|&&v| v > 0.0).count());
        assert_eq!(i.negative, ev.iter().filter(|&&v| v < 0.0).count());
        let shifted = inertia(&a, 1.0, None).unwrap();
        assert_eq!(shifted.positive, ev.iter().filter(|&&v| v > 1.0).count());
    }

    #[test]
    fn bordered_identity_with_zero_border() {
        let j = CsrMatrix::identity(3);
        let x = bordered_solve(&j, &[vec![0.0; 3]], &[vec![0.0; 3]], &[vec![1.0]], &[1.0, 2.0, 3.0, 4.0])
            .unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bordering_a_rank_deficient_matrix_with_its_kernel() {
        // 5x5 symmetric matrix with kernel spanned by phi.
        let phi = [1.0, -2.0, 0.5, 1.0, 0.0];
        let pn = norm2(&phi);
        let phi: Vec<f64> = phi.iter().map(|v| v / pn).collect();
        let base = [
            [4.0, 1.0, 0.0, 0.5, 0.2],
            [1.0, 3.0, 0.3, 0.0, 0.1],
            [0.0, 0.3, 2.0, 0.4, 0.0],
            [0.5, 0.0, 0.4, 5.0, 0.6],
            [0.2, 0.1, 0.0, 0.6, 1.0],
        ];
        // P A P with P = I - phi phi^T.
        let p = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - phi[i] * phi[j];
        let mut t = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..5 {
                    for l in 0..5 {
                        s += p(i, k) * base[k][l] * p(l, j);
                    }
                }
                t.push((i, j, s));
            }
        }
        let j = CsrMatrix::from_triplets(5, 5, &t);
        assert!(sparse_solve(&j, &[1.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        let rhs = [1.0, 2.0, -1.0, 0.5, 3.0, 0.7];
        let x = bordered_solve(&j, &[phi.clone()], &[phi.clone()], &[vec![0.0]], &rhs).unwrap();
        let mut r = j.mul_vec(&x[..5]);
        axpy(x[5], &phi, &mut r);
        for i in 0..5 {
            assert!((r[i] - rhs[i]).abs() < 1e-12);
        }
        assert!((dot(&phi, &x[..5]) - rhs[5]).abs() < 1e-12);
    }
}
