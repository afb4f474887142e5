//! Piecewise-constant material coefficients on a triangulation.
//!
//! The conductivity is one positive real per triangle. The reaction
//! nonlinearity is a truncated Taylor series in the state variable,
//!
//! ```text
//! a(x, y) = sum_{k=2..K} a_k(x) y^k / k!
//! ```
//!
//! with per-triangle coefficient functions `a_k` and no constant or
//! linear part, so `a(x, 0) = 0` and `d/dy a(x, 0) = 0` by construction.

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Positivity floor used when no explicit bound is supplied.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

/// One positive real per triangle with a uniform lower bound.
#[derive(Clone, Debug)]
pub struct PiecewiseCoefficient {
    values: Vec<f64>,
    floor: f64,
}

impl PiecewiseCoefficient {
    pub fn new(values: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coefficient floor must be positive, got {floor}"
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v >= floor) {
                return Err(Error::NonPositiveSigma { index: i, value: v });
            }
        }
        Ok(PiecewiseCoefficient { values, floor })
    }

    pub fn uniform(n_triangles: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n_triangles], DEFAULT_SIGMA_FLOOR)
    }

    /// Expand per-region values through the mesh region labels.
    pub fn from_regions(mesh: &Mesh, per_region: &[f64], floor: f64) -> Result<Self> {
        let values = mesh
            .cell_regions
            .iter()
            .map(|&r| {
                per_region.get(r).copied().ok_or(Error::LengthMismatch {
                    expected: mesh.n_regions(),
                    got: per_region.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values, floor)
    }

    pub fn value(&self, tri: usize) -> f64 {
        self.values[tri]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Truncated reaction series with per-triangle coefficients `a_2..a_K`.
#[derive(Clone, Debug)]
pub struct NonlinearitySeries {
    k_max: usize,
    /// Row-major: `coeffs[t * (k_max - 1) + (k - 2)]` is `a_k` on triangle `t`.
    coeffs: Vec<f64>,
}

impl NonlinearitySeries {
    pub fn new(k_max: usize, n_triangles: usize, coeffs: Vec<f64>) -> Result<Self> {
        if k_max < 2 {
            return Err(Error::SeriesOrder { k_max });
        }
        let expected = n_triangles * (k_max - 1);
        if coeffs.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(NonlinearitySeries { k_max, coeffs })
    }

    /// The zero series (purely linear model).
    pub fn zero(n_triangles: usize) -> Self {
        NonlinearitySeries {
            k_max: 2,
            coeffs: vec![0.0; n_triangles],
        }
    }

    /// Zero series truncated at the given order.
    pub fn zero_with_order(n_triangles: usize, k_max: usize) -> Self {
        let k_max = k_max.max(2);
        NonlinearitySeries {
            k_max,
            coeffs: vec![0.0; n_triangles * (k_max - 1)],
        }
    }

    /// Replace the order-`k` coefficient on every triangle, extending
    /// the truncation order if needed.
    pub fn set_order(&mut self, k: usize, values: &[f64]) -> Result<()> {
        if k < 2 {
            return Err(Error::SeriesOrder { k_max: k });
        }
        let n = self.n_triangles();
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: values.len(),
            });
        }
        if k > self.k_max {
            let old = self.k_max - 1;
            let new = k - 1;
            let mut coeffs = vec![0.0; n * new];
            for t in 0..n {
                coeffs[t * new..t * new + old]
                    .copy_from_slice(&self.coeffs[t * old..(t + 1) * old]);
            }
            self.k_max = k;
            self.coeffs = coeffs;
        }
        let stride = self.k_max - 1;
        for (t, &v) in values.iter().enumerate() {
            self.coeffs[t * stride + (k - 2)] = v;
        }
        Ok(())
    }

    /// Same coefficient row `a_2..a_K` on every triangle.
    pub fn uniform(n_triangles: usize, row: &[f64]) -> Result<Self> {
        let k_max = row.len() + 1;
        let mut coeffs = Vec::with_capacity(n_triangles * row.len());
        for _ in 0..n_triangles {
            coeffs.extend_from_slice(row);
        }
        Self::new(k_max, n_triangles, coeffs)
    }

    /// Expand per-region coefficient rows through the mesh region labels.
    pub fn from_regions(mesh: &Mesh, k_max: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if k_max < 2 {
            return Err(Error::SeriesOrder { k_max });
        }
        for row in rows {
            if row.len() != k_max - 1 {
                return Err(Error::LengthMismatch {
                    expected: k_max - 1,
                    got: row.len(),
                });
            }
        }
        let mut coeffs = Vec::with_capacity(mesh.n_triangles() * (k_max - 1));
        for &r in &mesh.cell_regions {
            let row = rows.get(r).ok_or(Error::LengthMismatch {
                expected: mesh.n_regions(),
                got: rows.len(),
            })?;
            coeffs.extend_from_slice(row);
        }
        Self::new(k_max, mesh.n_triangles(), coeffs)
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn n_triangles(&self) -> usize {
        self.coeffs.len() / (self.k_max - 1)
    }

    /// Taylor coefficient `a_k` on a triangle; zero outside `2..=k_max`.
    pub fn coeff(&self, tri: usize, k: usize) -> f64 {
        if (2..=self.k_max).contains(&k) {
            self.coeffs[tri * (self.k_max - 1) + (k - 2)]
        } else {
            0.0
        }
    }

    /// `a(x, y)` on triangle `tri`.
    pub fn eval(&self, tri: usize, y: f64) -> f64 {
        self.eval_deriv(tri, y, 0)
    }

    /// `l`-th derivative in the state variable, `d^l/dy^l a(x, y)`,
    /// i.e. `sum_{k >= max(2,l)} a_k y^(k-l) / (k-l)!`.
    pub fn eval_deriv(&self, tri: usize, y: f64, l: usize) -> f64 {
        if l > self.k_max {
            return 0.0;
        }
        let mut result = 0.0;
        for k in l.max(2)..=self.k_max {
            result += self.coeff(tri, k) * y_pow_over_factorial(y, k - l);
        }
        result
    }

    /// Largest coefficient magnitude over all triangles and orders.
    pub fn sup_bound(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, &c| m.max(c.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Raw coefficient row for a triangle (`a_2..a_K`).
    pub fn row(&self, tri: usize) -> &[f64] {
        let s = self.k_max - 1;
        &self.coeffs[tri * s..(tri + 1) * s]
    }
}

fn y_pow_over_factorial(y: f64, j: usize) -> f64 {
    let mut t = 1.0;
    for i in 1..=j {
        t *= y / i as f64;
    }
    t
}
