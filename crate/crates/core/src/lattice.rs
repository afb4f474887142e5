//! Mixed derivatives of the solution map in two boundary-data directions.
//!
//! For boundary data `t1 f1 + t2 f2` the solution of the semilinear
//! model is smooth in `(t1, t2)` near zero, and its mixed derivatives at
//! the origin satisfy a triangular family of linear problems: the first
//! derivatives solve the linear model with data `f1` or `f2`, and each
//! higher derivative solves the linear model with zero boundary data and
//! a volume source assembled from lower lattice entries through the
//! chain rule of the reaction term. Because the reaction is integrated
//! with the vertex rule, the lattice is the exact derivative of the
//! discrete solution map, so central finite differences of the full
//! nonlinear solver reproduce lattice flux measurements to stencil
//! truncation order; that comparison is the main correctness check.

use std::collections::BTreeMap;

use crate::chain::chain_rule_terms;
use crate::coeff::NonlinearitySeries;
use crate::error::{Error, Result};
use crate::fem::{BoundaryData, DnMeasurement, FemSystem, NodalField, SolveOptions, SourceField};

/// Mixed solution derivatives indexed by direction orders `(p, q)`.
pub struct DerivativeLattice {
    levels: BTreeMap<(usize, usize), NodalField>,
    /// Vertex values of the chain-rule reaction derivative per triangle
    /// corner, for levels of total order at least two.
    chain_corners: BTreeMap<(usize, usize), Vec<[f64; 3]>>,
    max_p: usize,
    max_q: usize,
}

impl DerivativeLattice {
    /// Solution derivative field at level `(p, q)`.
    pub fn field(&self, p: usize, q: usize) -> Option<&NodalField> {
        self.levels.get(&(p, q))
    }

    /// Per-corner chain-rule reaction derivative at level `(p, q)`;
    /// `None` for levels of total order below two.
    pub fn chain_corners(&self, p: usize, q: usize) -> Option<&Vec<[f64; 3]>> {
        self.chain_corners.get(&(p, q))
    }

    pub fn max_orders(&self) -> (usize, usize) {
        (self.max_p, self.max_q)
    }
}

fn chain_corner_values(
    series: &NonlinearitySeries,
    mesh: &crate::mesh::Mesh,
    levels: &BTreeMap<(usize, usize), NodalField>,
    p: usize,
    q: usize,
) -> Result<Vec<[f64; 3]>> {
    let terms = chain_rule_terms(p, q)?;
    let mut corners = vec![[0.0; 3]; mesh.n_triangles()];
    for term in &terms {
        if term.a_order > series.k_max() {
            continue;
        }
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let a = series.coeff(t, term.a_order);
            if a == 0.0 {
                continue;
            }
            for (c, &v) in tri.iter().enumerate() {
                let mut prod = 1.0;
                for &(pb, qb) in &term.blocks {
                    prod *= levels[&(pb, qb)][v];
                }
                corners[t][c] += term.count as f64 * a * prod;
            }
        }
    }
    Ok(corners)
}

/// Build all lattice levels `(p, q)` with `p <= max_p`, `q <= max_q`,
/// reusing one interior factorization for every solve.
pub fn build_lattice(
    system: &FemSystem,
    series: &NonlinearitySeries,
    f1: &BoundaryData,
    f2: &BoundaryData,
    max_p: usize,
    max_q: usize,
) -> Result<DerivativeLattice> {
    if series.n_triangles() != system.mesh.n_triangles() {
        return Err(Error::LengthMismatch {
            expected: system.mesh.n_triangles(),
            got: series.n_triangles(),
        });
    }
    let zero = BoundaryData::zero(system.mesh)?;
    let mut levels = BTreeMap::new();
    let mut chain_corners = BTreeMap::new();
    for p in 0..=max_p {
        for q in 0..=max_q {
            let field = match (p, q) {
                (0, 0) => vec![0.0; system.mesh.n_vertices()],
                (1, 0) => system.solve_linear(&SourceField::Zero, f1)?,
                (0, 1) => system.solve_linear(&SourceField::Zero, f2)?,
                _ => {
                    let corners = chain_corner_values(series, system.mesh, &levels, p, q)?;
                    let source = SourceField::PerCorner(corners.clone());
                    chain_corners.insert((p, q), corners);
                    system.solve_linear(&source.negated(), &zero)?
                }
            };
            levels.insert((p, q), field);
        }
    }
    Ok(DerivativeLattice {
        levels,
        chain_corners,
        max_p,
        max_q,
    })
}

/// Flux measurement of the `(p, q)` derivative: stiffness action of the
/// lattice field plus the chain-rule reaction contribution, read off at
/// the arc rows.
pub fn dn_derivative(
    system: &FemSystem,
    lattice: &DerivativeLattice,
    p: usize,
    q: usize,
) -> Result<DnMeasurement> {
    let field = lattice.field(p, q).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "lattice level ({p},{q}) outside built range {:?}",
            lattice.max_orders()
        ))
    })?;
    let mut r = system.stiffness().mul_vec(field);
    if let Some(corners) = lattice.chain_corners.get(&(p, q)) {
        for (t, tri) in system.mesh.triangles.iter().enumerate() {
            let w = system.mesh.signed_area(t) / 3.0;
            for (c, &v) in tri.iter().enumerate() {
                r[v] += w * corners[t][c];
            }
        }
    }
    Ok(DnMeasurement {
        values: system.mesh.gamma_nodes().iter().map(|&g| r[g]).collect(),
    })
}

/// Central difference stencil of the given derivative order with second
/// order accuracy, as `(offset, weight)` pairs.
fn stencil(order: usize) -> Result<Vec<(i32, f64)>> {
    Ok(match order {
        0 => vec![(0, 1.0)],
        1 => vec![(-1, -0.5), (1, 0.5)],
        2 => vec![(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => vec![(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        4 => vec![(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)],
        _ => return Err(Error::FdOrderUnsupported { order }),
    })
}

/// Finite-difference estimate of the `(p, q)` flux derivative from full
/// nonlinear solves on a tensor product of central stencils.
pub fn fd_dn_derivative(
    system: &FemSystem,
    series: &NonlinearitySeries,
    f1: &BoundaryData,
    f2: &BoundaryData,
    p: usize,
    q: usize,
    step: f64,
    opts: &SolveOptions,
) -> Result<DnMeasurement> {
    if step <= 0.0 {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let s1 = stencil(p)?;
    let s2 = stencil(q)?;
    let mut acc: Option<Vec<f64>> = None;
    for &(i, wi) in &s1 {
        for &(j, wj) in &s2 {
            let w = wi * wj;
            if w == 0.0 {
                continue;
            }
            let t1 = i as f64 * step;
            let t2 = j as f64 * step;
            let f = BoundaryData::combine(&[(t1, f1), (t2, f2)])?;
            let (u, _) = system.solve_semilinear(series, &f, opts).map_err(|e| {
                Error::StencilPointFailed {
                    t1,
                    t2,
                    source: Box::new(e),
                }
            })?;
            let dn = system.dn_components(&u, Some(series));
            let acc = acc.get_or_insert_with(|| vec![0.0; dn.values.len()]);
            for (a, v) in acc.iter_mut().zip(&dn.values) {
                *a += w * v;
            }
        }
    }
    let scale = step.powi((p + q) as i32);
    let mut values = acc.expect("stencil has at least one nonzero weight");
    for v in values.iter_mut() {
        *v /= scale;
    }
    Ok(DnMeasurement { values })
}
