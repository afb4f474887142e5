//! Inverse side: conductivity fitting, sequential reaction-coefficient
//! recovery, cavity detection, and the comparison functional.
//!
//! The conductivity step fits per-region values to first-order flux
//! pairings by Gauss-Newton; the derivative of a pairing with respect
//! to a region value is the gradient correlation of the two solutions
//! over that region, with no adjoint terms thanks to Galerkin
//! orthogonality. The reaction step exploits an exact discrete
//! identity: when conductivity and lower orders match, the defect of
//! the order-`(2, m-2)` flux derivative paired against test data `g`
//! equals a vertex-rule integral of the coefficient defect against
//! `u1^2 u2^(m-2) v_g`, which is linear in the unknown and solved by
//! regularized least squares. Cavity detection first tests the flux
//! residual of nonnegative data against a hole-free simulation, then
//! localizes by scanning candidate hole parameters coarse to fine,
//! comparing pairing matrices of a fixed trace family so meshes of
//! different topology stay comparable.

use nalgebra::{DMatrix, DVector};

use crate::coeff::{NonlinearitySeries, PiecewiseCoefficient};
use crate::error::{Error, Result};
use crate::fem::{BoundaryData, DnMeasurement, FemSystem, NodalField, SourceField};
use crate::lattice::{build_lattice, dn_derivative};
use crate::localize::PotentialSequence;
use crate::mesh::{
    build_disk_mesh, tag_gamma, triangle_components, Arc, Mesh, NodeTag, RegionMask,
};
use crate::traces::standard_family;

/// One flux-derivative experiment at a fixed mixed order.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub f1: BoundaryData,
    pub f2: BoundaryData,
    pub order: (usize, usize),
    pub dn: DnMeasurement,
}

/// A collection of experiments plus the relative noise level applied
/// when the data was generated.
#[derive(Clone, Debug, Default)]
pub struct MeasurementSet {
    pub experiments: Vec<Experiment>,
    pub noise: f64,
}

fn region_gradient_pairing(mesh: &Mesh, mask: &RegionMask, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in mask.iter() {
        let tri = mesh.triangles[t];
        let p: Vec<[f64; 2]> = tri.iter().map(|&i| mesh.vertices[i]).collect();
        let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
        let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
        let w = 1.0 / (4.0 * mesh.signed_area(t));
        let mut gx_u = 0.0;
        let mut gy_u = 0.0;
        let mut gx_v = 0.0;
        let mut gy_v = 0.0;
        for k in 0..3 {
            gx_u += b[k] * u[tri[k]];
            gy_u += c[k] * u[tri[k]];
            gx_v += b[k] * v[tri[k]];
            gy_v += c[k] * v[tri[k]];
        }
        acc += w * (gx_u * gx_v + gy_u * gy_v);
    }
    acc
}

fn check_partition(n_triangles: usize, regions: &[RegionMask]) -> Result<()> {
    if regions.is_empty() {
        return Err(Error::InvalidParameter("empty region partition".into()));
    }
    let mut covered = vec![false; n_triangles];
    for r in regions {
        if r.len() != n_triangles {
            return Err(Error::LengthMismatch {
                expected: n_triangles,
                got: r.len(),
            });
        }
        for t in r.iter() {
            if covered[t] {
                return Err(Error::RegionsNotDisjoint);
            }
            covered[t] = true;
        }
    }
    if covered.iter().any(|&c| !c) {
        return Err(Error::InvalidParameter(
            "region partition does not cover the mesh".into(),
        ));
    }
    Ok(())
}

fn per_triangle_from_regions(
    n_triangles: usize,
    regions: &[RegionMask],
    values: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; n_triangles];
    for (mask, &v) in regions.iter().zip(values) {
        for t in mask.iter() {
            out[t] = v;
        }
    }
    out
}

/// Matrix of flux pairings of the linear model over a data family:
/// entry `(i, j)` pairs the flux of the `i`-th solution with the `j`-th
/// datum.
pub fn pairing_matrix(system: &FemSystem, basis: &[BoundaryData]) -> Result<DMatrix<f64>> {
    let n = basis.len();
    let mut solutions = Vec::with_capacity(n);
    for f in basis {
        solutions.push(system.solve_linear(&SourceField::Zero, f)?);
    }
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let dn = system.dn_components(&solutions[i], None);
        for j in 0..n {
            p[(i, j)] = dn.pair(&basis[j]);
        }
    }
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct SigmaRecovery {
    pub values: Vec<f64>,
    pub misfit: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SigmaOptions {
    pub max_iterations: usize,
    pub floor: f64,
    /// Relative misfit improvement below which iteration stops.
    pub tolerance: f64,
}

impl Default for SigmaOptions {
    fn default() -> Self {
        SigmaOptions {
            max_iterations: 30,
            floor: crate::coeff::DEFAULT_SIGMA_FLOOR,
            tolerance: 1e-12,
        }
    }
}

/// Fit per-region conductivity values to first-order pairing data by
/// Gauss-Newton with a positivity floor.
pub fn recover_sigma_linearized(
    mesh: &Mesh,
    regions: &[RegionMask],
    basis: &[BoundaryData],
    data: &DMatrix<f64>,
    initial: &[f64],
    opts: &SigmaOptions,
) -> Result<SigmaRecovery> {
    check_partition(mesh.n_triangles(), regions)?;
    let nr = regions.len();
    if nr > 12 {
        return Err(Error::InvalidParameter(format!(
            "{nr} regions exceed the supported partition size"
        )));
    }
    if initial.len() != nr {
        return Err(Error::LengthMismatch {
            expected: nr,
            got: initial.len(),
        });
    }
    let nb = basis.len();
    if data.nrows() != nb || data.ncols() != nb {
        return Err(Error::LengthMismatch {
            expected: nb,
            got: data.nrows().max(data.ncols()),
        });
    }
    // Upper triangle including the diagonal; the pairing is symmetric.
    let rows: Vec<(usize, usize)> = (0..nb).flat_map(|i| (i..nb).map(move |j| (i, j))).collect();
    if rows.len() < nr {
        return Err(Error::InsufficientData(format!(
            "{} pairings for {} regions",
            rows.len(),
            nr
        )));
    }
    let mut values: Vec<f64> = initial.iter().map(|&v| v.max(opts.floor)).collect();
    let misfit_of = |vals: &[f64]| -> Result<(f64, Vec<NodalField>, DMatrix<f64>)> {
        let per_tri = per_triangle_from_regions(mesh.n_triangles(), regions, vals);
        let sigma = PiecewiseCoefficient::new(per_tri, opts.floor)?;
        let sys = FemSystem::new(mesh, &sigma)?;
        let mut sols = Vec::with_capacity(nb);
        for f in basis {
            sols.push(sys.solve_linear(&SourceField::Zero, f)?);
        }
        let mut sim = DMatrix::zeros(nb, nb);
        for i in 0..nb {
            let dn = sys.dn_components(&sols[i], None);
            for j in 0..nb {
                sim[(i, j)] = dn.pair(&basis[j]);
            }
        }
        let mut m = 0.0;
        for &(i, j) in &rows {
            let d = sim[(i, j)] - data[(i, j)];
            m += d * d;
        }
        Ok((m, sols, sim))
    };
    let (mut misfit, mut sols, mut sim) = misfit_of(&values)?;
    let mut iterations = 0;
    while misfit > opts.tolerance && iterations < opts.max_iterations {
        let mut jac = DMatrix::zeros(rows.len(), nr);
        let mut resid = DVector::zeros(rows.len());
        for (row, &(i, j)) in rows.iter().enumerate() {
            resid[row] = sim[(i, j)] - data[(i, j)];
            for (r, mask) in regions.iter().enumerate() {
                jac[(row, r)] = region_gradient_pairing(mesh, mask, &sols[i], &sols[j]);
            }
        }
        if iterations == 0 {
            let svd = jac.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smax == 0.0 || smin / smax < 1e-10 {
                return Err(Error::InsufficientData(format!(
                    "pairing Jacobian is rank deficient (condition {:e})",
                    if smin > 0.0 {
                        smax / smin
                    } else {
                        f64::INFINITY
                    }
                )));
            }
        }
        let normal = jac.transpose() * &jac;
        let rhs = -(jac.transpose() * &resid);
        let step = normal
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InsufficientData("normal equations singular".into()))?;
        let mut accepted = false;
        let mut damping = 1.0;
        for _ in 0..10 {
            let trial: Vec<f64> = values
                .iter()
                .zip(step.iter())
                .map(|(&v, &d)| (v + damping * d).max(opts.floor))
                .collect();
            let (trial_misfit, trial_sols, trial_sim) = misfit_of(&trial)?;
            if trial_misfit < misfit {
                values = trial;
                misfit = trial_misfit;
                sols = trial_sols;
                sim = trial_sim;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if iterations == 1 {
                return Err(Error::MisfitNotReduced { misfit });
            }
            break;
        }
    }
    Ok(SigmaRecovery {
        values,
        misfit,
        iterations,
    })
}

#[derive(Clone, Debug)]
pub struct AmRecovery {
    pub values: Vec<f64>,
    pub residual: f64,
    pub condition: f64,
}

/// Recover per-region order-`m` reaction coefficients from flux
/// derivatives of order `(2, m-2)`, given the conductivity and all
/// lower orders.
pub fn recover_am_step(
    system: &FemSystem,
    known: &NonlinearitySeries,
    m: usize,
    regions: &[RegionMask],
    experiments: &[Experiment],
    test_basis: &[BoundaryData],
    lambda: f64,
) -> Result<AmRecovery> {
    let mesh = system.mesh;
    check_partition(mesh.n_triangles(), regions)?;
    if m < 2 {
        return Err(Error::SeriesOrder { k_max: m });
    }
    if experiments.is_empty() || test_basis.is_empty() {
        return Err(Error::InsufficientData(
            "no experiments or test data".into(),
        ));
    }
    for e in experiments {
        if e.order != (2, m - 2) {
            return Err(Error::InvalidParameter(format!(
                "experiment order {:?} does not match stage ({}, {})",
                e.order,
                2,
                m - 2
            )));
        }
    }
    let nr = regions.len();
    let n_rows = experiments.len() * test_basis.len();
    if n_rows < nr {
        return Err(Error::InsufficientData(format!(
            "{n_rows} residual rows for {nr} regions"
        )));
    }
    let test_solutions: Vec<NodalField> = test_basis
        .iter()
        .map(|g| system.solve_linear(&SourceField::Zero, g))
        .collect::<Result<_>>()?;
    // Weight matrix rows are fixed by the first linearizations and do
    // not change between passes.
    let mut weights = DMatrix::zeros(n_rows, nr);
    for (e_idx, e) in experiments.iter().enumerate() {
        let u1 = system.solve_linear(&SourceField::Zero, &e.f1)?;
        let u2 = system.solve_linear(&SourceField::Zero, &e.f2)?;
        for (g_idx, v_g) in test_solutions.iter().enumerate() {
            let row = e_idx * test_basis.len() + g_idx;
            for (r, mask) in regions.iter().enumerate() {
                let mut acc = 0.0;
                for t in mask.iter() {
                    let tri = mesh.triangles[t];
                    let w = mesh.signed_area(t) / 3.0;
                    for &v in &tri {
                        acc += w * u1[v] * u1[v] * u2[v].powi((m - 2) as i32) * v_g[v];
                    }
                }
                weights[(row, r)] = acc;
            }
        }
    }
    let svd = weights.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if smax == 0.0 || smin / smax < 1e-12 {
        return Err(Error::InsufficientData(format!(
            "stage-{m} system is rank deficient (condition {condition:e})"
        )));
    }
    let normal_base = weights.transpose() * &weights;
    let reg = lambda * normal_base.diagonal().mean();
    let mut estimate = vec![0.0; nr];
    let mut residual = 0.0;
    // Two passes: solve, insert the estimate, correct once.
    for _pass in 0..2 {
        let mut series = known.clone();
        series.set_order(
            m,
            &per_triangle_from_regions(mesh.n_triangles(), regions, &estimate),
        )?;
        let mut rhs = DVector::zeros(n_rows);
        for (e_idx, e) in experiments.iter().enumerate() {
            let lattice = build_lattice(system, &series, &e.f1, &e.f2, 2, m - 2)?;
            let sim = dn_derivative(system, &lattice, 2, m - 2)?;
            let defect = e.dn.sub(&sim);
            for (g_idx, g) in test_basis.iter().enumerate() {
                rhs[e_idx * test_basis.len() + g_idx] = defect.pair(g);
            }
        }
        residual = rhs.norm();
        let mut normal = normal_base.clone();
        for i in 0..nr {
            normal[(i, i)] += reg;
        }
        let delta = normal
            .lu()
            .solve(&(weights.transpose() * &rhs))
            .ok_or_else(|| Error::InsufficientData("normal equations singular".into()))?;
        for (v, d) in estimate.iter_mut().zip(delta.iter()) {
            *v += d;
        }
    }
    Ok(AmRecovery {
        values: estimate,
        residual,
        condition,
    })
}

/// Scan configuration for cavity detection: domain, data arc, assumed
/// conductivity, trace family size, relative noise floor, and the
/// coarse-to-fine schedule.
#[derive(Clone, Debug)]
pub struct CavityScan {
    pub radius: f64,
    pub h: f64,
    pub arc: Arc,
    pub sigma: f64,
    pub n_family: usize,
    pub noise_floor: f64,
    pub grid_step: f64,
    pub radius_range: (f64, f64),
    pub refine_rounds: usize,
}

impl CavityScan {
    pub fn standard(radius: f64, h: f64, arc: Arc, noise_floor: f64) -> Self {
        CavityScan {
            radius,
            h,
            arc,
            sigma: 1.0,
            n_family: 5,
            noise_floor,
            grid_step: 0.2,
            radius_range: (0.2, 0.45),
            refine_rounds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CavityVerdict {
    None,
    Inconclusive,
    Detected {
        center: [f64; 2],
        radius: f64,
        misfit: f64,
    },
}

#[derive(Clone, Debug)]
pub struct CavityReport {
    pub verdict: CavityVerdict,
    /// Relative flux residual of nonnegative data against the hole-free
    /// model.
    pub stage1_residual: f64,
    /// Evaluated candidates as `(cx, cy, radius, misfit)`.
    pub landscape: Vec<(f64, f64, f64, f64)>,
}

fn family_pairings_on(
    radius: f64,
    cavity: Option<([f64; 2], f64)>,
    h: f64,
    arc: Arc,
    sigma_value: f64,
    n_family: usize,
) -> Result<DMatrix<f64>> {
    let mut mesh = build_disk_mesh(radius, cavity, h)?;
    tag_gamma(&mut mesh, arc)?;
    let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), sigma_value)?;
    let sys = FemSystem::new(&mesh, &sigma)?;
    let family = standard_family(&mesh, arc, n_family)?;
    pairing_matrix(&sys, &family)
}

/// Two-stage cavity test: a flux-residual existence check with
/// nonnegative data, then a coarse-to-fine parameter scan matching
/// pairing matrices.
pub fn detect_cavity(scan: &CavityScan, data: &DMatrix<f64>) -> Result<CavityReport> {
    let n = scan.n_family;
    if data.nrows() != n || data.ncols() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: data.nrows().max(data.ncols()),
        });
    }
    let p0 = family_pairings_on(scan.radius, None, scan.h, scan.arc, scan.sigma, n)?;
    // The first family member is the nonnegative bump.
    let stage1_residual = (data[(0, 0)] - p0[(0, 0)]).abs() / p0[(0, 0)].abs().max(1e-300);
    let empty_misfit = (data - &p0).norm();
    let mut landscape = Vec::new();
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let evaluate = |cx: f64,
                    cy: f64,
                    rho: f64,
                    landscape: &mut Vec<(f64, f64, f64, f64)>,
                    best: &mut Option<(f64, f64, f64, f64)>| {
        if rho < 1e-6 {
            return;
        }
        match family_pairings_on(
            scan.radius,
            Some(([cx, cy], rho)),
            scan.h,
            scan.arc,
            scan.sigma,
            n,
        ) {
            Ok(pc) => {
                let misfit = (data - &pc).norm();
                landscape.push((cx, cy, rho, misfit));
                if best.is_none() || misfit < best.unwrap().3 {
                    *best = Some((cx, cy, rho, misfit));
                }
            }
            // Candidates violating mesh feasibility are skipped.
            Err(_) => {}
        }
    };
    let step = scan.grid_step;
    let reach = scan.radius - scan.radius_range.0;
    let n_steps = (reach / step).ceil() as i32;
    for ix in -n_steps..=n_steps {
        for iy in -n_steps..=n_steps {
            let cx = ix as f64 * step;
            let cy = iy as f64 * step;
            let mut rho = scan.radius_range.0;
            while rho <= scan.radius_range.1 + 1e-12 {
                evaluate(cx, cy, rho, &mut landscape, &mut best);
                rho += step;
            }
        }
    }
    let mut refined = best.ok_or_else(|| {
        Error::InsufficientData("no feasible cavity candidate on the scan grid".into())
    })?;
    let mut local_step = step / 2.0;
    for _ in 0..scan.refine_rounds {
        let (cx, cy, rho, _) = refined;
        for dx in [-1.0, 0.0, 1.0] {
            for dy in [-1.0, 0.0, 1.0] {
                for dr in [-1.0, 0.0, 1.0] {
                    if dx == 0.0 && dy == 0.0 && dr == 0.0 {
                        continue;
                    }
                    let mut best_slot = Some(refined);
                    evaluate(
                        cx + dx * local_step,
                        cy + dy * local_step,
                        rho + dr * local_step,
                        &mut landscape,
                        &mut best_slot,
                    );
                    refined = best_slot.unwrap();
                }
            }
        }
        local_step /= 2.0;
    }
    let (cx, cy, rho, misfit) = refined;
    let verdict = if stage1_residual > 3.0 * scan.noise_floor {
        CavityVerdict::Detected {
            center: [cx, cy],
            radius: rho,
            misfit,
        }
    } else if misfit < 0.5 * empty_misfit {
        // Existence not established, yet a candidate fits the data far
        // better than the hole-free model: report both, decide nothing.
        CavityVerdict::Inconclusive
    } else {
        CavityVerdict::None
    };
    Ok(CavityReport {
        verdict,
        stage1_residual,
        landscape,
    })
}

/// Which comparison case a sign split realizes: the first field
/// dominates on the kept side, or the second does.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignOrientation {
    FirstDominates,
    SecondDominates,
}

#[derive(Clone, Debug)]
pub struct SignSplit {
    pub d1: RegionMask,
    pub d2: RegionMask,
    pub orientation: SignOrientation,
}

/// Split the domain into a definite-sign region `D1` reachable from the
/// data arc and an opposite-sign remainder `D2` whose removal keeps the
/// domain connected, from two per-region coefficient fields.
pub fn piecewise_sign_regions(mesh: &Mesh, a: &[f64], b: &[f64]) -> Result<SignSplit> {
    let nr = mesh.n_regions();
    if a.len() != nr || b.len() != nr {
        return Err(Error::LengthMismatch {
            expected: nr,
            got: a.len().max(b.len()),
        });
    }
    let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if delta.iter().all(|&d| d == 0.0) {
        return Err(Error::FieldsEqual);
    }
    let tri_delta: Vec<f64> = mesh.cell_regions.iter().map(|&r| delta[r]).collect();
    let mut candidates: Vec<SignSplit> = Vec::new();
    for (sign, orientation) in [
        (1.0, SignOrientation::FirstDominates),
        (-1.0, SignOrientation::SecondDominates),
    ] {
        let opposite = RegionMask::from_flags(tri_delta.iter().map(|&d| sign * d < 0.0).collect());
        let (comp, n_comp) = triangle_components(mesh, &opposite);
        if n_comp == 0 {
            continue;
        }
        // Components touching the data arc, ranked by area.
        let mut comp_area = vec![0.0; n_comp];
        let mut comp_touches_arc = vec![false; n_comp];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if comp[t] == usize::MAX {
                continue;
            }
            comp_area[comp[t]] += mesh.area(t);
            if tri.iter().any(|&v| mesh.node_tags[v] == NodeTag::Gamma) {
                comp_touches_arc[comp[t]] = true;
            }
        }
        let kept = (0..n_comp)
            .filter(|&c| comp_touches_arc[c])
            .max_by(|&x, &y| comp_area[x].total_cmp(&comp_area[y]));
        let Some(kept) = kept else { continue };
        let d1 = RegionMask::from_flags(
            (0..mesh.n_triangles())
                .map(|t| comp[t] == kept && sign * tri_delta[t] > 0.0)
                .collect(),
        );
        if d1.is_empty() {
            continue;
        }
        let d2 = RegionMask::from_flags((0..mesh.n_triangles()).map(|t| comp[t] != kept).collect());
        candidates.push(SignSplit {
            d1,
            d2,
            orientation,
        });
    }
    // Larger D1 wins; an exact tie keeps the first orientation.
    let mut best: Option<SignSplit> = None;
    let mut best_area = f64::NEG_INFINITY;
    for cand in candidates {
        let area: f64 = cand.d1.iter().map(|t| mesh.area(t)).sum();
        if area > best_area {
            best_area = area;
            best = Some(cand);
        }
    }
    best.ok_or(Error::NoValidSplit)
}

/// Per-step contributions of the comparison functional along a
/// localized-potential sequence, split by region.
#[derive(Clone, Debug)]
pub struct ContradictionTrace {
    pub d1_part: Vec<f64>,
    pub d2_part: Vec<f64>,
    pub rest_part: Vec<f64>,
    pub total: Vec<f64>,
}

/// Evaluate `int delta_a w_k^2 u_psi^(m-1)` by the vertex rule at every
/// step of the sequence, splitting the `D1`, `D2`, and remaining
/// contributions; `psi` must be nonnegative.
pub fn contradiction_functional(
    system: &FemSystem,
    delta_a: &[f64],
    m: usize,
    d1: &RegionMask,
    d2: &RegionMask,
    seq: &PotentialSequence,
    psi: &BoundaryData,
) -> Result<ContradictionTrace> {
    let mesh = system.mesh;
    if delta_a.len() != mesh.n_triangles() {
        return Err(Error::LengthMismatch {
            expected: mesh.n_triangles(),
            got: delta_a.len(),
        });
    }
    if m < 2 {
        return Err(Error::SeriesOrder { k_max: m });
    }
    if psi.values().iter().any(|&v| v < -1e-12) {
        return Err(Error::InvalidParameter(
            "test data must be nonnegative".into(),
        ));
    }
    if !d1.disjoint(d2) {
        return Err(Error::RegionsNotDisjoint);
    }
    let u_psi = system.solve_linear(&SourceField::Zero, psi)?;
    let mut trace = ContradictionTrace {
        d1_part: Vec::with_capacity(seq.len()),
        d2_part: Vec::with_capacity(seq.len()),
        rest_part: Vec::with_capacity(seq.len()),
        total: Vec::with_capacity(seq.len()),
    };
    for k in 0..seq.len() {
        let w = seq.scaled_field(k);
        let mut parts = [0.0; 3];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if delta_a[t] == 0.0 {
                continue;
            }
            let weight = mesh.signed_area(t) / 3.0;
            let mut cell = 0.0;
            for &v in tri {
                cell += weight * delta_a[t] * w[v] * w[v] * u_psi[v].powi((m - 1) as i32);
            }
            let slot = if d1.contains(t) {
                0
            } else if d2.contains(t) {
                1
            } else {
                2
            };
            parts[slot] += cell;
        }
        trace.d1_part.push(parts[0]);
        trace.d2_part.push(parts[1]);
        trace.rest_part.push(parts[2]);
        trace.total.push(parts[0] + parts[1] + parts[2]);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localize::localized_potential_sequence;
    use crate::mesh::region_mask_from_disk;
    use crate::traces::{trig_trace, TraceShape};

    fn disk_with_regions(h: f64, inner_radius: f64) -> Mesh {
        let mut m = build_disk_mesh(1.0, None, h).unwrap();
        tag_gamma(&mut m, Arc::full()).unwrap();
        m.set_regions_from_disks(&[([0.0, 0.0], inner_radius)]);
        m
    }

    fn partition(mesh: &Mesh) -> Vec<RegionMask> {
        (0..mesh.n_regions()).map(|r| mesh.region_mask(r)).collect()
    }

    fn sigma_from(mesh: &Mesh, regions: &[RegionMask], vals: &[f64]) -> PiecewiseCoefficient {
        let per_tri = per_triangle_from_regions(mesh.n_triangles(), regions, vals);
        PiecewiseCoefficient::new(per_tri, 1e-3).unwrap()
    }

    #[test]
    fn sigma_recovery_is_exact_at_the_truth() {
        let mesh = disk_with_regions(0.2, 0.5);
        let regions = partition(&mesh);
        let basis = standard_family(&mesh, Arc::full(), 5).unwrap();
        let sigma = sigma_from(&mesh, &regions, &[1.0, 1.0]);
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let data = pairing_matrix(&sys, &basis).unwrap();
        let rec = recover_sigma_linearized(
            &mesh,
            &regions,
            &basis,
            &data,
            &[1.0, 1.0],
            &SigmaOptions::default(),
        )
        .unwrap();
        for v in &rec.values {
            assert!((v - 1.0).abs() < 1e-6, "{:?}", rec.values);
        }
    }

    #[test]
    fn sigma_two_region_contrast_is_recovered() {
        let mesh = disk_with_regions(0.15, 0.5);
        let regions = partition(&mesh);
        let basis = standard_family(&mesh, Arc::full(), 8).unwrap();
        let truth = [2.0, 1.0];
        let sigma = sigma_from(&mesh, &regions, &truth);
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let data = pairing_matrix(&sys, &basis).unwrap();
        let rec = recover_sigma_linearized(
            &mesh,
            &regions,
            &basis,
            &data,
            &[1.0, 1.0],
            &SigmaOptions::default(),
        )
        .unwrap();
        for (v, t) in rec.values.iter().zip(&truth) {
            assert!((v - t).abs() / t < 0.01, "{:?} vs {truth:?}", rec.values);
        }
    }

    #[test]
    fn nested_single_region_model_keeps_larger_misfit() {
        let mesh = disk_with_regions(0.2, 0.5);
        let regions = partition(&mesh);
        let basis = standard_family(&mesh, Arc::full(), 6).unwrap();
        let sigma = sigma_from(&mesh, &regions, &[2.0, 1.0]);
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let data = pairing_matrix(&sys, &basis).unwrap();
        let coarse = vec![RegionMask::from_flags(vec![true; mesh.n_triangles()])];
        let rec1 = recover_sigma_linearized(
            &mesh,
            &coarse,
            &basis,
            &data,
            &[1.0],
            &SigmaOptions::default(),
        )
        .unwrap();
        let rec2 = recover_sigma_linearized(
            &mesh,
            &regions,
            &basis,
            &data,
            &[1.0, 1.0],
            &SigmaOptions::default(),
        )
        .unwrap();
        assert!(rec1.misfit > 1e-8, "one-region misfit {}", rec1.misfit);
        assert!(rec1.misfit > 10.0 * rec2.misfit.max(1e-300));
    }

    #[test]
    fn sigma_recovery_needs_enough_pairings() {
        let mesh = disk_with_regions(0.25, 0.5);
        let regions = partition(&mesh);
        let basis = standard_family(&mesh, Arc::full(), 1).unwrap();
        let sigma = sigma_from(&mesh, &regions, &[1.0, 1.0]);
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let data = pairing_matrix(&sys, &basis).unwrap();
        let err = recover_sigma_linearized(
            &mesh,
            &regions,
            &basis,
            &data,
            &[1.0, 1.0],
            &SigmaOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    fn am_experiments(
        sys: &FemSystem,
        truth: &NonlinearitySeries,
        m: usize,
        pairs: &[(BoundaryData, BoundaryData)],
    ) -> Vec<Experiment> {
        pairs
            .iter()
            .map(|(f1, f2)| {
                let lat = build_lattice(sys, truth, f1, f2, 2, m - 2).unwrap();
                Experiment {
                    f1: f1.clone(),
                    f2: f2.clone(),
                    order: (2, m - 2),
                    dn: dn_derivative(sys, &lat, 2, m - 2).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn second_order_coefficient_recovered_per_region() {
        let mesh = disk_with_regions(0.2, 0.5);
        let regions = partition(&mesh);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        // Region 0 is the outer part, region 1 the inner disk.
        let truth_vals = [0.0, 1.0];
        let mut truth = NonlinearitySeries::zero(mesh.n_triangles());
        truth
            .set_order(
                2,
                &per_triangle_from_regions(mesh.n_triangles(), &regions, &truth_vals),
            )
            .unwrap();
        let f_a = trig_trace(&mesh, Arc::full(), TraceShape::Bump)
            .unwrap()
            .scaled(0.05);
        let f_b = trig_trace(&mesh, Arc::full(), TraceShape::Cos(1))
            .unwrap()
            .scaled(0.05);
        let pairs = vec![(f_a.clone(), f_a.clone()), (f_b.clone(), f_b.clone())];
        let experiments = am_experiments(&sys, &truth, 2, &pairs);
        let test_basis = standard_family(&mesh, Arc::full(), 3).unwrap();
        let known = NonlinearitySeries::zero(mesh.n_triangles());
        let rec =
            recover_am_step(&sys, &known, 2, &regions, &experiments, &test_basis, 1e-8).unwrap();
        for (v, t) in rec.values.iter().zip(&truth_vals) {
            assert!((v - t).abs() < 0.02, "{:?} vs {truth_vals:?}", rec.values);
        }
    }

    #[test]
    fn zero_coefficient_stays_zero() {
        let mesh = disk_with_regions(0.25, 0.5);
        let regions = partition(&mesh);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let truth = NonlinearitySeries::zero(mesh.n_triangles());
        let f_a = trig_trace(&mesh, Arc::full(), TraceShape::Bump)
            .unwrap()
            .scaled(0.05);
        let f_b = trig_trace(&mesh, Arc::full(), TraceShape::Cos(1))
            .unwrap()
            .scaled(0.05);
        let pairs = vec![(f_a.clone(), f_a.clone()), (f_b.clone(), f_b.clone())];
        let experiments = am_experiments(&sys, &truth, 2, &pairs);
        let test_basis = vec![trig_trace(&mesh, Arc::full(), TraceShape::Bump).unwrap()];
        let rec = recover_am_step(
            &sys,
            &NonlinearitySeries::zero(mesh.n_triangles()),
            2,
            &regions,
            &experiments,
            &test_basis,
            1e-8,
        )
        .unwrap();
        for v in &rec.values {
            assert!(v.abs() < 1e-8, "{:?}", rec.values);
        }
    }

    #[test]
    fn third_order_stage_uses_known_second_order() {
        let mesh = disk_with_regions(0.2, 0.5);
        let regions = partition(&mesh);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let a2 = vec![0.8; mesh.n_triangles()];
        let a3_vals = [0.5, 1.5];
        let mut truth = NonlinearitySeries::zero_with_order(mesh.n_triangles(), 3);
        truth.set_order(2, &a2).unwrap();
        truth
            .set_order(
                3,
                &per_triangle_from_regions(mesh.n_triangles(), &regions, &a3_vals),
            )
            .unwrap();
        let f_a = trig_trace(&mesh, Arc::full(), TraceShape::Bump)
            .unwrap()
            .scaled(0.05);
        let f_b = trig_trace(&mesh, Arc::full(), TraceShape::Cos(1))
            .unwrap()
            .scaled(0.05);
        let pairs = vec![(f_a.clone(), f_a.clone()), (f_b.clone(), f_a.clone())];
        let experiments = am_experiments(&sys, &truth, 3, &pairs);
        let test_basis = vec![trig_trace(&mesh, Arc::full(), TraceShape::Bump).unwrap()];
        let mut known = NonlinearitySeries::zero_with_order(mesh.n_triangles(), 3);
        known.set_order(2, &a2).unwrap();
        let rec =
            recover_am_step(&sys, &known, 3, &regions, &experiments, &test_basis, 1e-8).unwrap();
        for (v, t) in rec.values.iter().zip(&a3_vals) {
            assert!((v - t).abs() / t < 0.05, "{:?} vs {a3_vals:?}", rec.values);
        }
    }

    #[test]
    fn doubling_the_defect_doubles_the_estimate() {
        let mesh = disk_with_regions(0.25, 0.5);
        let regions = partition(&mesh);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let mut truth = NonlinearitySeries::zero(mesh.n_triangles());
        truth.set_order(2, &vec![0.3; mesh.n_triangles()]).unwrap();
        let f_a = trig_trace(&mesh, Arc::full(), TraceShape::Bump)
            .unwrap()
            .scaled(0.05);
        let f_b = trig_trace(&mesh, Arc::full(), TraceShape::Cos(1))
            .unwrap()
            .scaled(0.05);
        let pairs = vec![(f_a.clone(), f_a.clone()), (f_b.clone(), f_b.clone())];
        let base = am_experiments(&sys, &truth, 2, &pairs);
        // Synthetic data whose defect against the zero model is doubled.
        let zero = NonlinearitySeries::zero(mesh.n_triangles());
        let doubled: Vec<Experiment> = base
            .iter()
            .map(|e| {
                let lat0 = build_lattice(&sys, &zero, &e.f1, &e.f2, 2, 0).unwrap();
                let sim0 = dn_derivative(&sys, &lat0, 2, 0).unwrap();
                let defect = e.dn.sub(&sim0);
                Experiment {
                    f1: e.f1.clone(),
                    f2: e.f2.clone(),
                    order: e.order,
                    dn: DnMeasurement::combine(&[(1.0, &sim0), (2.0, &defect)]),
                }
            })
            .collect();
        let test_basis = vec![trig_trace(&mesh, Arc::full(), TraceShape::Bump).unwrap()];
        let rec1 = recover_am_step(&sys, &zero, 2, &regions, &base, &test_basis, 1e-10).unwrap();
        let rec2 = recover_am_step(&sys, &zero, 2, &regions, &doubled, &test_basis, 1e-10).unwrap();
        for (a, b) in rec1.values.iter().zip(&rec2.values) {
            assert!((2.0 * a - b).abs() < 0.05 * a.abs().max(1e-6), "{a} vs {b}");
        }
    }

    #[test]
    fn hole_free_data_reports_no_cavity() {
        let arc = Arc {
            start: 0.0,
            end: std::f64::consts::PI,
        };
        let scan = CavityScan::standard(1.0, 0.2, arc, 0.02);
        let data = family_pairings_on(1.0, None, 0.2, arc, 1.0, scan.n_family).unwrap();
        let report = detect_cavity(&scan, &data).unwrap();
        assert_eq!(report.verdict, CavityVerdict::None);
        assert!(report.stage1_residual < 1e-8);
    }

    #[test]
    fn centered_hole_is_found_by_the_scan() {
        let arc = Arc {
            start: 0.0,
            end: std::f64::consts::PI,
        };
        let scan = CavityScan::standard(1.0, 0.15, arc, 0.02);
        let data = family_pairings_on(1.0, Some(([0.0, 0.0], 0.3)), 0.15, arc, 1.0, scan.n_family)
            .unwrap();
        let report = detect_cavity(&scan, &data).unwrap();
        match report.verdict {
            CavityVerdict::Detected { center, radius, .. } => {
                let off = (center[0].powi(2) + center[1].powi(2)).sqrt();
                assert!(off <= 0.15, "center {center:?}");
                assert!((radius - 0.3).abs() <= 0.3, "radius {radius}");
            }
            other => panic!("expected detection, got {other:?}"),
        }
    }

    #[test]
    fn bigger_holes_leave_bigger_residuals() {
        let arc = Arc::full();
        let p0 = family_pairings_on(1.0, None, 0.1, arc, 1.0, 1).unwrap();
        let mut prev = 0.0;
        for rho in [0.3, 0.31, 0.35] {
            let p = family_pairings_on(1.0, Some(([0.0, 0.0], rho)), 0.1, arc, 1.0, 1).unwrap();
            let r = (p[(0, 0)] - p0[(0, 0)]).abs();
            assert!(r > prev, "rho {rho}: residual {r} after {prev}");
            prev = r;
        }
    }

    #[test]
    fn one_sided_difference_keeps_whole_domain() {
        let mesh = disk_with_regions(0.25, 0.5);
        let split = piecewise_sign_regions(&mesh, &[2.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(split.orientation, SignOrientation::FirstDominates);
        assert!(split.d2.is_empty());
        assert_eq!(split.d1.count(), mesh.n_triangles());
    }

    #[test]
    fn equal_fields_are_rejected() {
        let mesh = disk_with_regions(0.25, 0.5);
        let err = piecewise_sign_regions(&mesh, &[1.0, 2.0], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::FieldsEqual));
    }

    #[test]
    fn enclosed_pocket_moves_to_the_suppressed_side() {
        // Inner disk favors the first field, the surrounding band the
        // second: the pocket cannot be reached from the arc without
        // crossing the band, so the band side must win and the pocket
        // lands in D2.
        let mut mesh = build_disk_mesh(1.0, None, 0.15).unwrap();
        tag_gamma(&mut mesh, Arc::full()).unwrap();
        mesh.set_regions_from_disks(&[([0.0, 0.0], 0.3), ([0.0, 0.0], 0.6)]);
        // Labels: 1 = inner disk, 2 = band, 0 = outer rest.
        let a = [0.5, 1.0, 0.0];
        let b = [0.5, 0.0, 1.0];
        let split = piecewise_sign_regions(&mesh, &a, &b).unwrap();
        assert_eq!(split.orientation, SignOrientation::SecondDominates);
        for t in mesh.region_mask(1).iter() {
            assert!(split.d2.contains(t), "pocket triangle {t} kept");
            assert!(!split.d1.contains(t));
        }
        assert!(!split.d1.is_empty());
        for t in split.d1.iter() {
            assert_eq!(mesh.cell_regions[t], 2, "d1 strayed off the band");
        }
    }

    #[test]
    fn opposite_halves_split_cleanly() {
        let mut mesh = build_disk_mesh(1.0, None, 0.2).unwrap();
        tag_gamma(&mut mesh, Arc::full()).unwrap();
        // Two custom regions: left and right half.
        let labels: Vec<usize> = (0..mesh.n_triangles())
            .map(|t| usize::from(mesh.barycenter(t)[0] >= 0.0))
            .collect();
        mesh.cell_regions = labels;
        let split = piecewise_sign_regions(&mesh, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(!split.d1.is_empty());
        assert!(!split.d2.is_empty());
        assert_eq!(split.d1.count() + split.d2.count(), mesh.n_triangles());
        let d1_area: f64 = split.d1.iter().map(|t| mesh.area(t)).sum();
        let d2_area: f64 = split.d2.iter().map(|t| mesh.area(t)).sum();
        assert!((d1_area - d2_area).abs() < 0.3 * d1_area.max(d2_area));
    }

    #[test]
    fn doubling_the_test_data_scales_the_functional() {
        let mesh = disk_with_regions(0.25, 0.5);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let d1 = region_mask_from_disk(&mesh, [0.5, 0.0], 0.25).unwrap();
        let d2 = region_mask_from_disk(&mesh, [-0.5, 0.0], 0.25).unwrap();
        let seq = localized_potential_sequence(&sys, &d1, &d2, 0.05, 3).unwrap();
        let psi = trig_trace(&mesh, Arc::full(), TraceShape::Bump)
            .unwrap()
            .scaled(0.1);
        let mut delta = vec![0.0; mesh.n_triangles()];
        for t in d1.iter() {
            delta[t] = 1.0;
        }
        for m in [2usize, 3, 4] {
            let one = contradiction_functional(&sys, &delta, m, &d1, &d2, &seq, &psi).unwrap();
            let two = contradiction_functional(&sys, &delta, m, &d1, &d2, &seq, &psi.scaled(2.0))
                .unwrap();
            let expect = 2f64.powi((m - 1) as i32);
            for (a, b) in one.total.iter().zip(&two.total) {
                assert!(
                    (b - expect * a).abs() <= 1e-12 * a.abs().max(1e-30),
                    "order {m}"
                );
            }
        }
    }

    #[test]
    fn functional_vanishes_when_fields_agree() {
        let mesh = disk_with_regions(0.25, 0.5);
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let d1 = region_mask_from_disk(&mesh, [0.5, 0.0], 0.25).unwrap();
        let d2 = region_mask_from_disk(&mesh, [-0.5, 0.0], 0.25).unwrap();
        let seq = localized_potential_sequence(&sys, &d1, &d2, 0.05, 3).unwrap();
        let psi = trig_trace(&mesh, Arc::full(), TraceShape::Bump)
            .unwrap()
            .scaled(0.1);
        let delta = vec![0.0; mesh.n_triangles()];
        let trace = contradiction_functional(&sys, &delta, 2, &d1, &d2, &seq, &psi).unwrap();
        for v in &trace.total {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn unit_defect_on_d1_drives_the_functional_apart() {
        let mut mesh = build_disk_mesh(1.0, None, 0.15).unwrap();
        tag_gamma(
            &mut mesh,
            Arc {
                start: 0.0,
                end: std::f64::consts::PI,
            },
        )
        .unwrap();
        let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0).unwrap();
        let sys = FemSystem::new(&mesh, &sigma).unwrap();
        let d1 = region_mask_from_disk(&mesh, [0.0, 0.45], 0.3).unwrap();
        let d2 = region_mask_from_disk(&mesh, [0.0, -0.45], 0.3).unwrap();
        // Start past the regularizer-dominated transient so the growth
        // window covers the whole sequence.
        let seq = localized_potential_sequence(&sys, &d1, &d2, 0.00625, 6).unwrap();
        let psi = trig_trace(
            &mesh,
            Arc {
                start: 0.0,
                end: std::f64::consts::PI,
            },
            TraceShape::Bump,
        )
        .unwrap()
        .scaled(0.1);
        let mut delta = vec![0.0; mesh.n_triangles()];
        for t in d1.iter() {
            delta[t] = 1.0;
        }
        for t in d2.iter() {
            delta[t] = -1.0;
        }
        let trace = contradiction_functional(&sys, &delta, 2, &d1, &d2, &seq, &psi).unwrap();
        for k in 1..seq.len() {
            assert!(
                trace.d1_part[k] > trace.d1_part[k - 1],
                "d1 part stalled: {:?}",
                trace.d1_part
            );
        }
        let first = trace.d2_part[0].abs();
        let last = trace.d2_part.last().unwrap().abs();
        assert!(last < first, "d2 part {last} vs {first}");
        assert!(trace.rest_part.iter().all(|&v| v == 0.0));
    }
}
