//! Boundary data whose solution mass concentrates on one region while
//! draining from another.
//!
//! For disjoint triangle regions `D1` and `D2`, consider maximizing the
//! squared L2 mass of the solution on `D1` subject to a bound on the
//! mass on `D2` plus a small multiple of the boundary data norm.
//! Expanding solutions of the linear model over arc hat functions turns
//! both masses into Gram matrices of the hat solutions, and the
//! optimizer is the top eigenvector of a generalized eigenvalue
//! problem. Halving the boundary penalty per step yields a sequence of
//! data whose `D1` mass grows while the `D2` mass shrinks; that
//! separation is the quantitative tool behind the piecewise comparison
//! functional.
//!
//! Stored boundary data is sup normalized; each step also carries a
//! scale such that the rescaled solution has `D2` mass exactly the
//! square root of that step's penalty, making the reported mass
//! sequences monotone in opposite directions when localization works.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fem::{BoundaryData, FemSystem, NodalField, SourceField};
use crate::mesh::{triangle_components, EdgeTag, Mesh, NodeTag, RegionMask};

/// Squared L2 mass of a nodal field on a triangle region, by exact
/// quadrature of the piecewise-linear interpolant.
pub fn energy_on_region(mesh: &Mesh, v: &[f64], mask: &RegionMask) -> f64 {
    region_mass_pairing(mesh, mask, v, v)
}

/// Bilinear region mass `int over masked T of u v`.
pub fn region_mass_pairing(mesh: &Mesh, mask: &RegionMask, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in mask.iter() {
        let tri = mesh.triangles[t];
        let a = mesh.signed_area(t) / 12.0;
        let (u0, u1, u2) = (u[tri[0]], u[tri[1]], u[tri[2]]);
        let (v0, v1, v2) = (v[tri[0]], v[tri[1]], v[tri[2]]);
        acc += a
            * (2.0 * (u0 * v0 + u1 * v1 + u2 * v2)
                + u0 * (v1 + v2)
                + u1 * (v0 + v2)
                + u2 * (v0 + v1));
    }
    acc
}

/// Gram matrices of the arc hat solutions: region masses on `D1` and
/// `D2` plus the arc mass matrix, with the hat solutions retained.
pub struct EnergyOperators {
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub arc_mass: DMatrix<f64>,
    pub hat_solutions: Vec<NodalField>,
}

pub fn build_energy_operators(
    system: &FemSystem,
    d1: &RegionMask,
    d2: &RegionMask,
) -> Result<EnergyOperators> {
    let mesh = system.mesh;
    if d1.len() != mesh.n_triangles() || d2.len() != mesh.n_triangles() {
        return Err(Error::LengthMismatch {
            expected: mesh.n_triangles(),
            got: d1.len().max(d2.len()),
        });
    }
    if !d1.disjoint(d2) {
        return Err(Error::RegionsNotDisjoint);
    }
    if d1.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if !d2.is_empty() {
        let (_, n_components) = triangle_components(mesh, d2);
        if n_components != 1 {
            return Err(Error::RegionDisconnects);
        }
        let arc_reachable = mesh.triangles.iter().enumerate().any(|(t, tri)| {
            !d2.contains(t) && tri.iter().any(|&v| mesh.node_tags[v] == NodeTag::Gamma)
        });
        if !arc_reachable {
            return Err(Error::RegionDisconnects);
        }
    }
    let g = mesh.gamma_nodes().len();
    if g == 0 {
        return Err(Error::EmptyGamma);
    }
    let mut hat_solutions = Vec::with_capacity(g);
    for b in 0..g {
        let mut vals = vec![0.0; g];
        vals[b] = 1.0;
        let data = BoundaryData::new(mesh, vals)?;
        hat_solutions.push(system.solve_linear(&SourceField::Zero, &data)?);
    }
    let mut m1 = DMatrix::zeros(g, g);
    let mut m2 = DMatrix::zeros(g, g);
    for i in 0..g {
        for j in i..g {
            let e1 = region_mass_pairing(mesh, d1, &hat_solutions[i], &hat_solutions[j]);
            let e2 = region_mass_pairing(mesh, d2, &hat_solutions[i], &hat_solutions[j]);
            m1[(i, j)] = e1;
            m1[(j, i)] = e1;
            m2[(i, j)] = e2;
            m2[(j, i)] = e2;
        }
    }
    let mut arc_mass = DMatrix::zeros(g, g);
    let mut gamma_pos = vec![usize::MAX; mesh.n_vertices()];
    for (p, &n) in mesh.gamma_nodes().iter().enumerate() {
        gamma_pos[n] = p;
    }
    for &(a, b, tag) in &mesh.boundary_edges {
        if tag != EdgeTag::Gamma {
            continue;
        }
        let (pa, pb) = (gamma_pos[a], gamma_pos[b]);
        let va = mesh.vertices[a];
        let vb = mesh.vertices[b];
        let len = ((va[0] - vb[0]).powi(2) + (va[1] - vb[1]).powi(2)).sqrt();
        let w = len / 6.0;
        arc_mass[(pa, pa)] += 2.0 * w;
        arc_mass[(pb, pb)] += 2.0 * w;
        arc_mass[(pa, pb)] += w;
        arc_mass[(pb, pa)] += w;
    }
    Ok(EnergyOperators {
        m1,
        m2,
        arc_mass,
        hat_solutions,
    })
}

/// A sequence of boundary data localizing solution mass onto `D1`.
/// Boundary data is sup normalized; `scale * field` at step `k` has
/// `D2` mass `e2[k]` and `D1` mass `e1[k]`.
#[derive(Clone, Debug)]
pub struct PotentialSequence {
    pub deltas: Vec<f64>,
    pub boundary_data: Vec<BoundaryData>,
    pub fields: Vec<NodalField>,
    pub scales: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

impl PotentialSequence {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// The rescaled solution field of step `k` used by downstream
    /// functionals.
    pub fn scaled_field(&self, k: usize) -> NodalField {
        self.fields[k].iter().map(|&v| self.scales[k] * v).collect()
    }
}

/// Build `n_steps` localizing data by halving the boundary penalty per
/// step, starting at `delta0`.
pub fn localized_potential_sequence(
    system: &FemSystem,
    d1: &RegionMask,
    d2: &RegionMask,
    delta0: f64,
    n_steps: usize,
) -> Result<PotentialSequence> {
    if delta0 <= 0.0 || n_steps < 2 {
        return Err(Error::InvalidParameter(
            "penalty start must be positive and steps at least two".into(),
        ));
    }
    let ops = build_energy_operators(system, d1, d2)?;
    let g = ops.m1.nrows();
    if ops.m1.amax() == 0.0 {
        return Err(Error::NoLocalization { step: 0 });
    }
    let d2_active = ops.m2.amax() > 0.0;
    let mut seq = PotentialSequence {
        deltas: Vec::new(),
        boundary_data: Vec::new(),
        fields: Vec::new(),
        scales: Vec::new(),
        e1: Vec::new(),
        e2: Vec::new(),
    };
    for k in 0..n_steps {
        let delta = delta0 * 0.5f64.powi(k as i32);
        let b = &ops.m2 + &ops.arc_mass * delta;
        let chol = Cholesky::new(b).ok_or(Error::NoLocalization { step: k })?;
        let l = chol.l();
        // Symmetric reduction L^-1 M1 L^-T of the pencil (M1, B).
        let x = l
            .solve_lower_triangular(&ops.m1)
            .ok_or(Error::NoLocalization { step: k })?;
        let y = l
            .solve_lower_triangular(&x.transpose())
            .ok_or(Error::NoLocalization { step: k })?;
        let sym = (&y + y.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut best = 0;
        for i in 1..g {
            if eig.eigenvalues[i] > eig.eigenvalues[best] {
                best = i;
            }
        }
        let lambda = eig.eigenvalues[best];
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::NoLocalization { step: k });
        }
        let yvec: DVector<f64> = eig.eigenvectors.column(best).into();
        let mut coeffs = l
            .transpose()
            .solve_upper_triangular(&yvec)
            .ok_or(Error::NoLocalization { step: k })?;
        // Deterministic orientation: largest entry positive.
        let mut dominant = 0;
        for i in 1..g {
            if coeffs[i].abs() > coeffs[dominant].abs() {
                dominant = i;
            }
        }
        if coeffs[dominant] < 0.0 {
            coeffs.neg_mut();
        }
        let sup = coeffs.abs().max();
        if sup == 0.0 {
            return Err(Error::NoLocalization { step: k });
        }
        coeffs /= sup;
        let mut field = vec![0.0; system.mesh.n_vertices()];
        for (b_idx, sol) in ops.hat_solutions.iter().enumerate() {
            let c = coeffs[b_idx];
            if c != 0.0 {
                for (f, s) in field.iter_mut().zip(sol) {
                    *f += c * s;
                }
            }
        }
        let eps1 = coeffs.dot(&(&ops.m1 * &coeffs));
        let eps2 = coeffs.dot(&(&ops.m2 * &coeffs));
        let eps_mass = coeffs.dot(&(&ops.arc_mass * &coeffs));
        let scale = if d2_active && eps2 > 1e-30 * eps1 {
            (delta.sqrt() / eps2).sqrt()
        } else {
            1.0 / (delta * eps_mass).sqrt()
        };
        if !scale.is_finite() {
            return Err(Error::NoLocalization { step: k });
        }
        seq.deltas.push(delta);
        seq.boundary_data.push(BoundaryData::new(
            system.mesh,
            coeffs.iter().copied().collect(),
        )?);
        seq.fields.push(field);
        seq.scales.push(scale);
        seq.e1.push(scale * scale * eps1);
        seq.e2
            .push(if d2_active { scale * scale * eps2 } else { 0.0 });
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::PiecewiseCoefficient;
    use crate::mesh::{build_disk_mesh, region_mask_from_disk, tag_gamma, Arc};
    use crate::traces::{trig_trace, TraceShape};
    use std::f64::consts::PI;

    fn disk(h: f64) -> Mesh {
        let mut m = build_disk_mesh(1.0, None, h).unwrap();
        tag_gamma(&mut m, Arc::full()).unwrap();
        m
    }

    fn split_regions(mesh: &Mesh) -> (RegionMask, RegionMask) {
        let d1 = region_mask_from_disk(mesh, [0.5, 0.0], 0.25).unwrap();
        let d2 = region_mask_from_disk(mesh, [-0.5, 0.0], 0.25).unwrap();
        (d1, d2)
    }

    #[test]
    fn region_mass_of_coordinate_field_on_disk() {
        let mesh = disk(0.05);
        let x_field: Vec<f64> = mesh.vertices.iter().map(|v| v[0]).collect();
        let all = RegionMask::from_flags(vec![true; mesh.n_triangles()]);
        let mass = energy_on_region(&mesh, &x_field, &all);
        assert!((mass - PI / 4.0).abs() < 0.01 * PI / 4.0, "mass {mass}");
        let ones = vec![1.0; mesh.n_vertices()];
        let area = energy_on_region(&mesh, &ones, &all);
        assert!((area - mesh.total_area()).abs() < 1e-10);
    }

    #[test]
    fn gram_quadratic_form_matches_direct_solve() {
        let mesh = disk(0.3);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let (d1, d2) = split_regions(&mesh);
        let ops = build_energy_operators(&sys, &d1, &d2).unwrap();
        let phi = trig_trace(&mesh, Arc::full(), TraceShape::Cos(2)).unwrap();
        let u = sys.solve_linear(&SourceField::Zero, &phi).unwrap();
        let coeffs = DVector::from_iterator(phi.len(), phi.values().iter().copied());
        let q1 = coeffs.dot(&(&ops.m1 * &coeffs));
        let q2 = coeffs.dot(&(&ops.m2 * &coeffs));
        let direct1 = energy_on_region(&mesh, &u, &d1);
        let direct2 = energy_on_region(&mesh, &u, &d2);
        assert!(
            (q1 - direct1).abs() < 1e-9 * direct1.abs().max(1e-12),
            "{q1} vs {direct1}"
        );
        assert!((q2 - direct2).abs() < 1e-9 * direct2.abs().max(1e-12));
    }

    #[test]
    fn high_frequency_data_favors_region_near_boundary() {
        let mesh = disk(0.1);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        // Near-boundary ring versus central disk.
        let center = region_mask_from_disk(&mesh, [0.0, 0.0], 0.35).unwrap();
        let ring = RegionMask::from_flags(
            (0..mesh.n_triangles())
                .map(|t| {
                    let b = mesh.barycenter(t);
                    let r = (b[0] * b[0] + b[1] * b[1]).sqrt();
                    r > 0.7
                })
                .collect(),
        );
        let ops = build_energy_operators(&sys, &ring, &center).unwrap();
        let mut ratios = Vec::new();
        for k in [1, 4] {
            let phi = trig_trace(&mesh, Arc::full(), TraceShape::Cos(k)).unwrap();
            let c = DVector::from_iterator(phi.len(), phi.values().iter().copied());
            let q1 = c.dot(&(&ops.m1 * &c));
            let q2 = c.dot(&(&ops.m2 * &c));
            ratios.push(q1 / q2);
        }
        assert!(ratios[1] > 4.0 * ratios[0], "ratios {ratios:?}");
    }

    #[test]
    fn localization_separates_masses() {
        let mesh = disk(0.2);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let (d1, d2) = split_regions(&mesh);
        let seq = localized_potential_sequence(&sys, &d1, &d2, 0.1, 7).unwrap();
        for k in 1..seq.len() {
            assert!(
                seq.e1[k] / seq.e2[k] > seq.e1[k - 1] / seq.e2[k - 1],
                "ratio stalled at step {k}: e1 {:?} e2 {:?}",
                seq.e1,
                seq.e2
            );
            assert!(seq.e2[k] < seq.e2[k - 1]);
        }
        // The penalty normalization pins the D2 mass sequence exactly.
        for k in 0..seq.len() {
            assert!((seq.e2[k] - seq.deltas[k].sqrt()).abs() < 1e-9 * seq.e2[k]);
        }
    }

    #[test]
    fn swapped_regions_reverse_the_trend() {
        let mesh = disk(0.25);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let (d1, d2) = split_regions(&mesh);
        let fwd = localized_potential_sequence(&sys, &d1, &d2, 0.1, 4).unwrap();
        let rev = localized_potential_sequence(&sys, &d2, &d1, 0.1, 4).unwrap();
        // Each run localizes onto its own first region, so the ratio
        // seen from the original labels inverts.
        for k in 1..4 {
            assert!(fwd.e1[k] / fwd.e2[k] > fwd.e1[k - 1] / fwd.e2[k - 1]);
            let from_original = rev.e2[k] / rev.e1[k];
            let prev = rev.e2[k - 1] / rev.e1[k - 1];
            assert!(from_original < prev);
        }
    }

    #[test]
    fn empty_second_region_still_localizes() {
        let mesh = disk(0.25);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let d1 = region_mask_from_disk(&mesh, [0.4, 0.0], 0.3).unwrap();
        let d2 = RegionMask::empty(mesh.n_triangles());
        let seq = localized_potential_sequence(&sys, &d1, &d2, 0.05, 5).unwrap();
        for k in 0..seq.len() {
            assert_eq!(seq.e2[k], 0.0);
            if k > 0 {
                assert!(seq.e1[k] > seq.e1[k - 1]);
            }
        }
    }

    #[test]
    fn overlapping_regions_are_rejected() {
        let mesh = disk(0.3);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let d1 = region_mask_from_disk(&mesh, [0.3, 0.0], 0.4).unwrap();
        let d2 = region_mask_from_disk(&mesh, [0.2, 0.0], 0.4).unwrap();
        let err = localized_potential_sequence(&sys, &d1, &d2, 0.05, 3).unwrap_err();
        assert!(matches!(err, Error::RegionsNotDisjoint));
    }

    #[test]
    fn empty_first_region_is_rejected() {
        let mesh = disk(0.3);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let d1 = RegionMask::empty(mesh.n_triangles());
        let d2 = region_mask_from_disk(&mesh, [0.2, 0.0], 0.3).unwrap();
        let err = localized_potential_sequence(&sys, &d1, &d2, 0.05, 3).unwrap_err();
        assert!(matches!(err, Error::EmptyRegion));
    }

    #[test]
    fn enclosing_second_region_is_rejected() {
        let mesh = disk(0.15);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        // An annular band strictly inside the disk splits the rest into
        // a center island and an outer ring.
        let band = RegionMask::from_flags(
            (0..mesh.n_triangles())
                .map(|t| {
                    let b = mesh.barycenter(t);
                    let r = (b[0] * b[0] + b[1] * b[1]).sqrt();
                    (0.4..0.65).contains(&r)
                })
                .collect(),
        );
        let d1 = region_mask_from_disk(&mesh, [0.0, 0.0], 0.2).unwrap();
        let err = localized_potential_sequence(&sys, &d1, &band, 0.05, 3).unwrap_err();
        assert!(matches!(err, Error::RegionDisconnects));
    }

    #[test]
    fn boundary_data_is_sup_normalized_and_deterministic() {
        let mesh = disk(0.25);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let (d1, d2) = split_regions(&mesh);
        let a = localized_potential_sequence(&sys, &d1, &d2, 0.05, 3).unwrap();
        let b = localized_potential_sequence(&sys, &d1, &d2, 0.05, 3).unwrap();
        for k in 0..a.len() {
            assert!((a.boundary_data[k].sup() - 1.0).abs() < 1e-12);
            assert_eq!(a.fields[k], b.fields[k]);
            assert_eq!(a.e1[k], b.e1[k]);
        }
    }

    #[test]
    fn rayleigh_quotient_matches_reported_masses() {
        let mesh = disk(0.3);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let (d1, d2) = split_regions(&mesh);
        let seq = localized_potential_sequence(&sys, &d1, &d2, 0.05, 2).unwrap();
        for k in 0..seq.len() {
            let w = seq.scaled_field(k);
            let direct1 = energy_on_region(&mesh, &w, &d1);
            let direct2 = energy_on_region(&mesh, &w, &d2);
            assert!(
                (direct1 - seq.e1[k]).abs() <= 1e-8 * seq.e1[k].abs().max(1e-12),
                "step {k}: {direct1} vs {}",
                seq.e1[k]
            );
            assert!((direct2 - seq.e2[k]).abs() <= 1e-8 * seq.e2[k].abs().max(1e-12));
        }
    }
}
