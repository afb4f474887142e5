//! P1 finite element forward solves and boundary flux measurements.
//!
//! The model problem on the meshed domain is
//!
//! ```text
//! -div(sigma grad u) + a(x, u) = s   in the domain,
//! u = f on the data arc,  u = 0 on the rest of the boundary,
//! ```
//!
//! with piecewise-constant `sigma`, reaction series `a`, and optional
//! volume source `s` (zero in the measurement setting). The nonlinear
//! term is integrated with the barycentric vertex rule, which lumps its
//! Jacobian onto the diagonal; Newton iteration then only updates a
//! diagonal perturbation of the stiffness factorization.
//!
//! Flux measurements are variational: the discrete conormal flux paired
//! against a boundary hat function equals the residual of the interior
//! equation evaluated at that hat function's row, so no gradient is ever
//! differenced at the boundary. This makes the pairing independent of
//! how boundary data is extended into the domain, up to solver tolerance.

use crate::coeff::{NonlinearitySeries, PiecewiseCoefficient};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodeTag};
use crate::solver::{Factorized, SparseMatrix};

pub type NodalField = Vec<f64>;

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dirichlet values on the data arc, one real per arc node (implicitly
/// zero on the rest of the boundary).
#[derive(Clone, Debug)]
pub struct BoundaryData {
    values: Vec<f64>,
    sup: f64,
}

impl BoundaryData {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        let g = mesh.gamma_nodes().len();
        if g == 0 {
            return Err(Error::EmptyGamma);
        }
        if values.len() != g {
            return Err(Error::LengthMismatch {
                expected: g,
                got: values.len(),
            });
        }
        let sup = sup_norm(&values);
        Ok(BoundaryData { values, sup })
    }

    pub fn zero(mesh: &Mesh) -> Result<Self> {
        Self::new(mesh, vec![0.0; mesh.gamma_nodes().len()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> BoundaryData {
        BoundaryData {
            values: self.values.iter().map(|v| c * v).collect(),
            sup: self.sup * c.abs(),
        }
    }

    /// Weighted sum of compatible boundary data terms.
    pub fn combine(terms: &[(f64, &BoundaryData)]) -> Result<BoundaryData> {
        let n = terms
            .first()
            .map(|(_, d)| d.len())
            .ok_or_else(|| Error::InvalidParameter("empty combination".into()))?;
        let mut values = vec![0.0; n];
        for (c, d) in terms {
            if d.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: d.len(),
                });
            }
            for (acc, v) in values.iter_mut().zip(d.values()) {
                *acc += c * v;
            }
        }
        let sup = sup_norm(&values);
        Ok(BoundaryData { values, sup })
    }

    /// Expand to a full nodal vector (zero away from the data arc).
    pub fn to_full(&self, mesh: &Mesh) -> NodalField {
        let mut full = vec![0.0; mesh.n_vertices()];
        for (&g, &v) in mesh.gamma_nodes().iter().zip(&self.values) {
            full[g] = v;
        }
        full
    }
}

/// Conormal flux functional on the data arc: component `i` is the flux
/// paired against the hat function of the `i`-th arc node.
#[derive(Clone, Debug, PartialEq)]
pub struct DnMeasurement {
    pub values: Vec<f64>,
}

impl DnMeasurement {
    /// Pairing with boundary data `g` expanded in arc hat functions.
    pub fn pair(&self, g: &BoundaryData) -> f64 {
        assert_eq!(self.values.len(), g.len(), "pairing across different arcs");
        self.values.iter().zip(g.values()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn sub(&self, other: &DnMeasurement) -> DnMeasurement {
        DnMeasurement {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn combine(terms: &[(f64, &DnMeasurement)]) -> DnMeasurement {
        let n = terms[0].1.values.len();
        let mut values = vec![0.0; n];
        for (c, d) in terms {
            for (acc, v) in values.iter_mut().zip(&d.values) {
                *acc += c * v;
            }
        }
        DnMeasurement { values }
    }
}

/// Volume source term, constant per triangle or sampled at the three
/// corners of each triangle (both integrated with the vertex rule).
#[derive(Clone, Debug)]
pub enum SourceField {
    Zero,
    PerCell(Vec<f64>),
    PerCorner(Vec<[f64; 3]>),
}

impl SourceField {
    pub fn negated(&self) -> SourceField {
        match self {
            SourceField::Zero => SourceField::Zero,
            SourceField::PerCell(v) => SourceField::PerCell(v.iter().map(|x| -x).collect()),
            SourceField::PerCorner(v) => {
                SourceField::PerCorner(v.iter().map(|c| [-c[0], -c[1], -c[2]]).collect())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Absolute l2 tolerance on the interior Newton residual.
    pub newton_tol: f64,
    pub max_iterations: usize,
    /// Reject boundary data with sup norm above this; `None` disables
    /// the gate (divergence is then the only guard).
    pub amplitude_limit: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            newton_tol: 1e-10,
            max_iterations: 25,
            amplitude_limit: Some(0.1),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct NewtonReport {
    /// Number of Jacobian solves performed.
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub step_norms: Vec<f64>,
}

/// Assembled stiffness operator for one (mesh, conductivity) pair, with
/// the interior block factorized for repeated solves.
pub struct FemSystem<'a> {
    pub mesh: &'a Mesh,
    pub sigma: &'a PiecewiseCoefficient,
    stiffness: SparseMatrix,
    free: Vec<usize>,
    pos: Vec<usize>,
    kff: Factorized,
}

/// Full P1 stiffness matrix `int sigma grad phi_i . grad phi_j`.
pub fn assemble_stiffness(mesh: &Mesh, sigma: &PiecewiseCoefficient) -> Result<SparseMatrix> {
    if sigma.len() != mesh.n_triangles() {
        return Err(Error::LengthMismatch {
            expected: mesh.n_triangles(),
            got: sigma.len(),
        });
    }
    let n = mesh.n_vertices();
    let mut adjacency = vec![Vec::new(); n];
    for tri in &mesh.triangles {
        for k in 0..3 {
            adjacency[tri[k]].push(tri[(k + 1) % 3]);
            adjacency[tri[k]].push(tri[(k + 2) % 3]);
        }
    }
    let mut k_mat = SparseMatrix::from_adjacency(adjacency);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        if area <= 0.0 {
            return Err(Error::DegenerateTriangle { index: t });
        }
        let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.vertices[v]).collect();
        let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
        let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
        let s = sigma.value(t) / (4.0 * area);
        for i in 0..3 {
            for j in 0..3 {
                k_mat.add(tri[i], tri[j], s * (b[i] * b[j] + c[i] * c[j]));
            }
        }
    }
    Ok(k_mat)
}

/// Vertex-rule load vector of a volume source.
pub fn assemble_load(mesh: &Mesh, source: &SourceField) -> Result<NodalField> {
    let mut load = vec![0.0; mesh.n_vertices()];
    match source {
        SourceField::Zero => {}
        SourceField::PerCell(vals) => {
            if vals.len() != mesh.n_triangles() {
                return Err(Error::LengthMismatch {
                    expected: mesh.n_triangles(),
                    got: vals.len(),
                });
            }
            for (t, tri) in mesh.triangles.iter().enumerate() {
                let w = mesh.signed_area(t) / 3.0;
                for &v in tri {
                    load[v] += w * vals[t];
                }
            }
        }
        SourceField::PerCorner(vals) => {
            if vals.len() != mesh.n_triangles() {
                return Err(Error::LengthMismatch {
                    expected: mesh.n_triangles(),
                    got: vals.len(),
                });
            }
            for (t, tri) in mesh.triangles.iter().enumerate() {
                let w = mesh.signed_area(t) / 3.0;
                for (k, &v) in tri.iter().enumerate() {
                    load[v] += w * vals[t][k];
                }
            }
        }
    }
    Ok(load)
}

/// Consistent-mass L2 norm of a nodal field.
pub fn l2_mass_norm(mesh: &Mesh, v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.signed_area(t) / 12.0;
        let x = [v[tri[0]], v[tri[1]], v[tri[2]]];
        acc += a
            * (2.0 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
                + 2.0 * (x[0] * x[1] + x[1] * x[2] + x[0] * x[2]));
    }
    acc.max(0.0).sqrt()
}

impl<'a> FemSystem<'a> {
    pub fn new(mesh: &'a Mesh, sigma: &'a PiecewiseCoefficient) -> Result<Self> {
        let stiffness = assemble_stiffness(mesh, sigma)?;
        let n = mesh.n_vertices();
        let free: Vec<usize> = (0..n)
            .filter(|&i| mesh.node_tags[i] == NodeTag::Interior)
            .collect();
        let mut pos = vec![usize::MAX; n];
        for (p, &i) in free.iter().enumerate() {
            pos[i] = p;
        }
        let kff = Factorized::new(stiffness.submatrix(&free, &pos));
        Ok(FemSystem {
            mesh,
            sigma,
            stiffness,
            free,
            pos,
            kff,
        })
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    fn constrained_values(&self, f: &BoundaryData) -> Result<NodalField> {
        if f.len() != self.mesh.gamma_nodes().len() {
            return Err(Error::LengthMismatch {
                expected: self.mesh.gamma_nodes().len(),
                got: f.len(),
            });
        }
        Ok(f.to_full(self.mesh))
    }

    /// Interior residual rows of `K u + N(u) - load`, gathered over the
    /// free nodes.
    fn interior_residual(&self, full_residual: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full_residual[i]).collect()
    }

    fn full_residual(
        &self,
        u: &[f64],
        series: Option<&NonlinearitySeries>,
        load: &[f64],
    ) -> NodalField {
        let mut r = self.stiffness.mul_vec(u);
        if let Some(s) = series {
            for (t, tri) in self.mesh.triangles.iter().enumerate() {
                let w = self.mesh.signed_area(t) / 3.0;
                for &v in tri {
                    r[v] += w * s.eval(t, u[v]);
                }
            }
        }
        for (ri, li) in r.iter_mut().zip(load) {
            *ri -= li;
        }
        r
    }

    /// Solve the linear model `-div(sigma grad v) = source` with data `f`
    /// on the arc and zero on the rest of the boundary.
    pub fn solve_linear(&self, source: &SourceField, f: &BoundaryData) -> Result<NodalField> {
        let mut u = self.constrained_values(f)?;
        let load = assemble_load(self.mesh, source)?;
        let ku = self.stiffness.mul_vec(&u);
        let rhs: Vec<f64> = self.free.iter().map(|&i| load[i] - ku[i]).collect();
        let uf = self.kff.solve(&rhs)?;
        for (&i, v) in self.free.iter().zip(uf) {
            u[i] = v;
        }
        Ok(u)
    }

    /// Newton solve of the semilinear model with small boundary data,
    /// starting from the linear solution.
    pub fn solve_semilinear(
        &self,
        series: &NonlinearitySeries,
        f: &BoundaryData,
        opts: &SolveOptions,
    ) -> Result<(NodalField, NewtonReport)> {
        self.solve_semilinear_with_source(series, f, &SourceField::Zero, opts)
    }

    /// Semilinear solve with an extra volume source (manufactured-solution
    /// studies); the measurement setting uses a zero source.
    pub fn solve_semilinear_with_source(
        &self,
        series: &NonlinearitySeries,
        f: &BoundaryData,
        source: &SourceField,
        opts: &SolveOptions,
    ) -> Result<(NodalField, NewtonReport)> {
        if let Some(limit) = opts.amplitude_limit {
            if f.sup() > limit {
                return Err(Error::AmplitudeTooLarge {
                    sup: f.sup(),
                    limit,
                });
            }
        }
        if series.n_triangles() != self.mesh.n_triangles() {
            return Err(Error::LengthMismatch {
                expected: self.mesh.n_triangles(),
                got: series.n_triangles(),
            });
        }
        let load = assemble_load(self.mesh, source)?;
        let mut u = self.solve_linear(source, f)?;
        let mut report = NewtonReport::default();
        let pure_linear = series.is_zero();
        let mut grew = 0usize;
        let mut prev_norm = f64::INFINITY;
        loop {
            let r_full = self.full_residual(&u, Some(series), &load);
            let r = self.interior_residual(&r_full);
            let rn = l2_norm(&r);
            report.residual_norms.push(rn);
            if rn <= opts.newton_tol {
                return Ok((u, report));
            }
            if !rn.is_finite() || sup_norm(&u) > 1e8 {
                return Err(Error::NewtonDiverged {
                    iterations: report.iterations,
                    residual: rn,
                });
            }
            if rn > prev_norm {
                grew += 1;
                if grew >= 2 {
                    return Err(Error::NewtonDiverged {
                        iterations: report.iterations,
                        residual: rn,
                    });
                }
            } else {
                grew = 0;
            }
            prev_norm = rn;
            if report.iterations >= opts.max_iterations {
                return Err(Error::NewtonMaxIterations {
                    iterations: report.iterations,
                    residual: rn,
                });
            }
            let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
            let delta = if pure_linear {
                self.kff.solve(&neg_r)
            } else {
                let mut jff = self.stiffness.submatrix(&self.free, &self.pos);
                // Vertex-rule reaction Jacobian is diagonal: accumulate
                // per-triangle lumped weights of a'(x, u).
                let mut d_full = vec![0.0; self.mesh.n_vertices()];
                for (t, tri) in self.mesh.triangles.iter().enumerate() {
                    let w = self.mesh.signed_area(t) / 3.0;
                    for &v in tri {
                        d_full[v] += w * series.eval_deriv(t, u[v], 1);
                    }
                }
                let dff: Vec<f64> = self.free.iter().map(|&i| d_full[i]).collect();
                jff.add_to_diagonal(&dff);
                Factorized::new(jff).solve(&neg_r)
            };
            let delta = delta.map_err(|_| Error::NewtonDiverged {
                iterations: report.iterations,
                residual: rn,
            })?;
            for (&i, d) in self.free.iter().zip(&delta) {
                u[i] += d;
            }
            report.iterations += 1;
            report.step_norms.push(l2_norm(&delta));
        }
    }

    /// Flux components of a solution field on the arc nodes: the residual
    /// of the interior form evaluated at each arc hat function row.
    pub fn dn_components(&self, u: &[f64], series: Option<&NonlinearitySeries>) -> DnMeasurement {
        let zero_load = vec![0.0; self.mesh.n_vertices()];
        let r = self.full_residual(u, series, &zero_load);
        DnMeasurement {
            values: self.mesh.gamma_nodes().iter().map(|&g| r[g]).collect(),
        }
    }

    /// Validated flux measurement of a semilinear solution with data `f`.
    pub fn dn_measure(
        &self,
        series: &NonlinearitySeries,
        u: &[f64],
        f: &BoundaryData,
    ) -> Result<DnMeasurement> {
        if u.len() != self.mesh.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: self.mesh.n_vertices(),
                got: u.len(),
            });
        }
        let full_f = self.constrained_values(f)?;
        let btol = 1e-9 * f.sup().max(1.0);
        for i in 0..u.len() {
            if self.mesh.node_tags[i] != NodeTag::Interior && (u[i] - full_f[i]).abs() > btol {
                return Err(Error::NotASolution {
                    residual: (u[i] - full_f[i]).abs(),
                });
            }
        }
        let zero_load = vec![0.0; self.mesh.n_vertices()];
        let r_full = self.full_residual(u, Some(series), &zero_load);
        let r = self.interior_residual(&r_full);
        let scale = l2_norm(&self.stiffness.mul_vec(u)).max(1e-300);
        let rel = l2_norm(&r) / scale;
        if rel > 1e-6 {
            return Err(Error::NotASolution { residual: rel });
        }
        Ok(DnMeasurement {
            values: self.mesh.gamma_nodes().iter().map(|&g| r_full[g]).collect(),
        })
    }
}

/// One-shot validated flux measurement (assembles the operator).
pub fn dn_measure(
    mesh: &Mesh,
    sigma: &PiecewiseCoefficient,
    series: &NonlinearitySeries,
    u: &[f64],
    f: &BoundaryData,
) -> Result<DnMeasurement> {
    FemSystem::new(mesh, sigma)?.dn_measure(series, u, f)
}
