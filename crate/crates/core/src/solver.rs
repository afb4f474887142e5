//! Sparse symmetric positive definite linear solves.
//!
//! Systems are assembled into a compressed sparse row matrix with a
//! precomputed symmetric pattern. Solves go through a sparse Cholesky
//! factorization by default and fall back to Jacobi-preconditioned
//! conjugate gradients if the factorization fails; either route must
//! reach a relative residual of `1e-10` or the solve reports failure.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

pub const RESIDUAL_TOL: f64 = 1e-10;

/// Square CSR matrix with a fixed symmetric sparsity pattern.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Build a zero matrix from per-row neighbor lists (diagonal included
    /// automatically). Neighbor lists need not be sorted or deduplicated.
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Self {
        let n = adjacency.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for (i, nbrs) in adjacency.iter_mut().enumerate() {
            nbrs.push(i);
            nbrs.sort_unstable();
            nbrs.dedup();
            cols.extend_from_slice(nbrs);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        SparseMatrix {
            n,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set_zero(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Add `v` at `(i, j)`; the entry must exist in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        let k = self.cols[lo..hi]
            .binary_search(&j)
            .expect("entry outside sparsity pattern");
        self.vals[lo + k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.cols[lo..hi].binary_search(&j) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn add_to_diagonal(&mut self, d: &[f64]) {
        for i in 0..self.n {
            self.add(i, i, d[i]);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
        y
    }

    /// Row `i` as parallel column/value slices.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    /// Extract the principal submatrix on `keep` (indices sorted); `pos`
    /// maps global index -> position in `keep` (or `usize::MAX`).
    pub fn submatrix(&self, keep: &[usize], pos: &[usize]) -> SparseMatrix {
        let m = keep.len();
        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for &i in keep {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                if pos[j] != usize::MAX {
                    cols.push(pos[j]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            n: m,
            row_ptr,
            cols,
            vals,
        }
    }

    fn to_csc(&self) -> CscMatrix<f64> {
        let mut coo = CooMatrix::new(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                coo.push(i, self.cols[k], self.vals[k]);
            }
        }
        CscMatrix::from(&coo)
    }
}

/// Factorized SPD operator ready for repeated solves.
pub struct Factorized {
    mat: SparseMatrix,
    backend: Backend,
}

enum Backend {
    Direct(CscCholesky<f64>),
    Iterative,
}

impl Factorized {
    pub fn new(mat: SparseMatrix) -> Self {
        let backend = match CscCholesky::factor(&mat.to_csc()) {
            Ok(f) => Backend::Direct(f),
            Err(_) => Backend::Iterative,
        };
        Factorized { mat, backend }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.mat
    }

    /// Solve to a relative residual of `1e-10` or report breakdown.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let rhs_norm = l2(rhs);
        if rhs_norm == 0.0 {
            return Ok(vec![0.0; self.mat.n]);
        }
        let mut x = match &self.backend {
            Backend::Direct(chol) => {
                let b = DMatrix::from_column_slice(rhs.len(), 1, rhs);
                chol.solve(&b).column(0).iter().copied().collect::<Vec<_>>()
            }
            Backend::Iterative => vec![0.0; rhs.len()],
        };
        // Iterative refinement; also the whole solve in the CG branch.
        for round in 0..3 {
            let r: Vec<f64> = self
                .mat
                .mul_vec(&x)
                .iter()
                .zip(rhs)
                .map(|(ax, b)| b - ax)
                .collect();
            if l2(&r) <= RESIDUAL_TOL * rhs_norm {
                return Ok(x);
            }
            let budget = if round == 0 {
                20 * self.mat.n
            } else {
                4 * self.mat.n
            };
            let dx = jacobi_cg(&self.mat, &r, budget)?;
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        let r: Vec<f64> = self
            .mat
            .mul_vec(&x)
            .iter()
            .zip(rhs)
            .map(|(ax, b)| b - ax)
            .collect();
        let rel = l2(&r) / rhs_norm;
        if rel <= RESIDUAL_TOL {
            Ok(x)
        } else {
            Err(Error::SolverBreakdown(format!(
                "relative residual {rel:.3e} after refinement"
            )))
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
fn jacobi_cg(mat: &SparseMatrix, rhs: &[f64], max_iter: usize) -> Result<Vec<f64>> {
    let n = mat.n();
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = mat.get(i, i);
            if d <= 0.0 {
                0.0
            } else {
                1.0 / d
            }
        })
        .collect();
    if inv_diag.iter().any(|&d| d == 0.0) {
        return Err(Error::SolverBreakdown(
            "non-positive diagonal in CG preconditioner".into(),
        ));
    }
    let rhs_norm = l2(rhs);
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        if l2(&r) <= 0.1 * RESIDUAL_TOL * rhs_norm {
            break;
        }
        let ap = mat.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::SolverBreakdown(
                "matrix not positive definite in CG".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(x)
}
