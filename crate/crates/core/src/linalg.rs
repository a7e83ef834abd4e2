//! Dense Cholesky for element blocks and a sparse SPD solver for the global
//! normal equations.
//!
//! The direct sparse path uses `faer`'s supernodal Cholesky with its
//! fill-reducing ordering; CG is Jacobi-preconditioned.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Lower Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCholesky {
    pub l: DMatrix<f64>,
}

/// Cholesky factorization of a symmetric matrix; only the lower triangle is read.
pub fn dense_cholesky(a: &DMatrix<f64>) -> Result<DenseCholesky> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "dense_cholesky: matrix must be square");
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(DenseCholesky { l })
}

impl DenseCholesky {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Overwrites `b` with `L⁻¹ b` (column-wise).
    pub fn forward_in_place(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        for c in 0..b.ncols() {
            for i in 0..n {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s / self.l[(i, i)];
            }
        }
    }

    pub fn forward_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.forward_in_place(&mut m);
        DVector::from_column_slice(m.as_slice())
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = self.forward_vec(b);
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }
}

/// Symmetric sparse matrix stored as the compressed columns of its lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    pub dim: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Builds from `(row, col, value)` entries; entries above the diagonal are
    /// mirrored into the lower triangle and duplicates are summed in input order.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
        for &(r, c, v) in triplets {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            cols[c].push((r, v));
        }
        let mut col_ptr = Vec::with_capacity(dim + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in &mut cols {
            // stable sort keeps the summation order deterministic
            col.sort_by_key(|&(r, _)| r);
            let mut iter = col.iter().peekable();
            while let Some(&(r, v)) = iter.next() {
                let mut sum = v;
                while let Some(&&(r2, v2)) = iter.peek() {
                    if r2 != r {
                        break;
                    }
                    sum += v2;
                    iter.next();
                }
                row_idx.push(r);
                values.push(sum);
            }
            col_ptr.push(row_idx.len());
        }
        Self { dim, col_ptr, row_idx, values }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for j in 0..a.ncols() {
            for i in j..a.nrows() {
                if a[(i, j)] != 0.0 {
                    trip.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), &trip)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for c in 0..self.dim {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                if self.row_idx[k] == c {
                    d[c] = self.values[k];
                }
            }
        }
        d
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for c in 0..self.dim {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim, self.dim);
        for c in 0..self.dim {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                a[(r, c)] = self.values[k];
                a[(c, r)] = self.values[k];
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Direct,
    Cg,
}

/// Above this many unknowns the default solver switches to CG.
pub const DIRECT_SOLVER_LIMIT: usize = 200_000;

impl SolverMethod {
    pub fn default_for(dim: usize) -> Self {
        if dim <= DIRECT_SOLVER_LIMIT {
            SolverMethod::Direct
        } else {
            SolverMethod::Cg
        }
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
///
/// `tol` is the relative residual target of CG and is ignored by the direct path.
pub fn solve_spd(a: &SparseSymMatrix, b: &[f64], method: SolverMethod, tol: f64) -> Result<Vec<f64>> {
    assert_eq!(a.dim, b.len());
    match method {
        SolverMethod::Direct => solve_direct(a, b),
        SolverMethod::Cg => solve_cg(a, b, tol, 20 * a.dim.max(50)),
    }
}

fn solve_direct(a: &SparseSymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    use faer::linalg::solvers::Solve;
    use faer::sparse::{SparseColMat, Triplet};

    if a.dim == 0 {
        return Ok(Vec::new());
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let mut trip = Vec::with_capacity(a.nnz());
    for c in 0..a.dim {
        for k in a.col_ptr[c]..a.col_ptr[c + 1] {
            trip.push(Triplet::new(a.row_idx[k], c, a.values[k]));
        }
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(a.dim, a.dim, &trip)
        .map_err(|e| Error::IndefiniteSystem(format!("sparse matrix construction failed: {e:?}")))?;
    let llt = mat
        .sp_cholesky(faer::Side::Lower)
        .map_err(|e| Error::IndefiniteSystem(format!("sparse Cholesky failed: {e:?}")))?;
    let mut rhs = faer::Mat::<f64>::from_fn(a.dim, 1, |i, _| b[i]);
    llt.solve_in_place(&mut rhs);
    let x: Vec<f64> = (0..a.dim).map(|i| rhs[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::IndefiniteSystem("non-finite solution".into()));
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve_cg(a: &SparseSymMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim;
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for it in 0..max_iter {
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::IndefiniteSystem(format!("cg breakdown at iteration {it}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            // confirm with the true residual
            let ax = a.mul_vec(&x);
            let true_res = ax.iter().zip(b).map(|(ax, b)| (b - ax).powi(2)).sum::<f64>().sqrt() / bnorm;
            if true_res <= tol {
                return Ok(x);
            }
            r = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged { iterations: max_iter, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * (n as f64) * 0.1
    }

    #[test]
    fn cholesky_examples() {
        let id = dense_cholesky(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(id.l, DMatrix::identity(3, 3));

        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = dense_cholesky(&a).unwrap();
        assert_abs_diff_eq!(f.l[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.l[(1, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.l[(1, 1)], 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(f.l[(0, 1)], 0.0);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(dense_cholesky(&bad), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn cholesky_reconstructs_and_solves() {
        let a = random_spd(30, 1);
        let f = dense_cholesky(&a).unwrap();
        let rec = &f.l * f.l.transpose();
        assert!((rec - &a).norm() <= 1e-11 * a.norm());
        let b = DVector::from_fn(30, |i, _| (i as f64).sin());
        let x = f.solve(&b);
        assert!((&a * x - b).norm() < 1e-10);
    }

    #[test]
    fn sparse_solver_examples() {
        let id = SparseSymMatrix::from_dense(&DMatrix::identity(4, 4));
        let b = [1.0, -2.0, 3.5, 0.25];
        for method in [SolverMethod::Direct, SolverMethod::Cg] {
            let x = solve_spd(&id, &b, method, 1e-14).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(x[i], b[i], epsilon = 1e-14);
            }
            let d = SparseSymMatrix::from_triplets(2, &[(0, 0, 2.0), (1, 1, 4.0)]);
            let x = solve_spd(&d, &[2.0, 8.0], method, 1e-14).unwrap();
            assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn random_spd_matches_dense_oracle() {
        let a = random_spd(50, 2);
        let sparse = SparseSymMatrix::from_dense(&a);
        assert_eq!(sparse.to_dense(), a);
        let b: Vec<f64> = (0..50).map(|i| (0.3 * i as f64).cos()).collect();
        let oracle = dense_cholesky(&a).unwrap().solve(&DVector::from_column_slice(&b));
        for method in [SolverMethod::Direct, SolverMethod::Cg] {
            let x = solve_spd(&sparse, &b, method, 1e-13).unwrap();
            for i in 0..50 {
                assert_abs_diff_eq!(x[i], oracle[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn triplets_are_summed_and_mirrored() {
        let m = SparseSymMatrix::from_triplets(3, &[(0, 1, 1.0), (1, 0, 2.0), (2, 2, 5.0), (2, 2, 1.0)]);
        assert_eq!(m.nnz(), 2);
        let d = m.to_dense();
        assert_eq!(d[(0, 1)], 3.0);
        assert_eq!(d[(1, 0)], 3.0);
        assert_eq!(d[(2, 2)], 6.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 3.0, 6.0]);
    }

    #[test]
    fn indefinite_sparse_system_is_reported() {
        let m = SparseSymMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(solve_spd(&m, &[1.0, 1.0], SolverMethod::Direct, 0.0).is_err());
        assert!(solve_spd(&m, &[1.0, 0.0], SolverMethod::Cg, 1e-12).is_err());
    }

    #[test]
    fn cg_reports_non_convergence() {
        let a = random_spd(40, 9);
        let sparse = SparseSymMatrix::from_dense(&a);
        let b = vec![1.0; 40];
        match solve_cg(&sparse, &b, 1e-15, 2) {
            Err(Error::CgNotConverged { iterations: 2, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
