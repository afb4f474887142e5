//! The seven runnable scenarios.
//!
//! Each scenario builds its phantom from the config, simulates
//! measurements, runs the matching reconstruction or diagnostic, and
//! returns a `RunReport` whose checks encode the configured pass/fail
//! tolerances. Auxiliary files (meshes, coefficient files) are written
//! into the output directory by the scenario itself; metric tables and
//! `summary.json` are written by the caller.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use semirec_core::coeff::{NonlinearitySeries, PiecewiseCoefficient};
use semirec_core::fem::{l2_mass_norm, BoundaryData, FemSystem, SolveOptions, SourceField};
use semirec_core::io::{write_coef_file, write_mesh_file};
use semirec_core::lattice::{build_lattice, dn_derivative, fd_dn_derivative};
use semirec_core::localize::localized_potential_sequence;
use semirec_core::mesh::{
    build_disk_mesh, region_mask_from_disk, tag_gamma, Arc, Mesh, RegionMask,
};
use semirec_core::recovery::{
    detect_cavity, pairing_matrix, recover_am_step, recover_sigma_linearized, CavityScan,
    CavityVerdict, Experiment, SigmaOptions,
};
use semirec_core::traces::{standard_family, trig_trace, TraceShape};

use crate::config::{Scenario, ScenarioConfig};
use crate::report::{fmt, Check, CsvTable, RunReport};
use crate::rng::{derive, Stream};

pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<RunReport> {
    match config.scenario {
        Scenario::ForwardConvergence => forward_convergence(config),
        Scenario::LinearizationCheck => linearization_check(config),
        Scenario::LocalizedPotentials => localized_potentials(config),
        Scenario::RecoverCoefficients => recover_coefficients(config, out_dir),
        Scenario::DetectCavity => detect_cavity_scenario(config),
        Scenario::FullPipeline => full_pipeline(config, out_dir),
        Scenario::ContradictionWitness => contradiction_witness(config),
    }
}

/// Mesh with arc tags and region labels from the config.
pub fn build_domain(config: &ScenarioConfig) -> Result<Mesh> {
    build_domain_with(config, config.mesh.cavity.map(|d| (d.center, d.radius)))
}

fn build_domain_with(config: &ScenarioConfig, cavity: Option<([f64; 2], f64)>) -> Result<Mesh> {
    let mut mesh = build_disk_mesh(config.mesh.radius, cavity, config.mesh.h)
        .context("mesh construction failed")?;
    tag_gamma(&mut mesh, config.arc()).context("arc tagging failed")?;
    let disks: Vec<([f64; 2], f64)> = config
        .regions
        .disks
        .iter()
        .map(|d| (d.center, d.radius))
        .collect();
    mesh.set_regions_from_disks(&disks);
    Ok(mesh)
}

fn region_masks(mesh: &Mesh, labels: usize) -> Vec<RegionMask> {
    (0..labels).map(|r| mesh.region_mask(r)).collect()
}

/// Per-region conductivity values from the phantom, defaulting to one.
fn sigma_values(config: &ScenarioConfig) -> Vec<f64> {
    if config.phantom.sigma.is_empty() {
        vec![1.0; config.n_region_labels()]
    } else {
        config.phantom.sigma.clone()
    }
}

pub fn phantom_sigma(config: &ScenarioConfig, mesh: &Mesh) -> Result<PiecewiseCoefficient> {
    PiecewiseCoefficient::from_regions(mesh, &sigma_values(config), 1e-6)
        .context("phantom conductivity is invalid")
}

pub fn phantom_series(config: &ScenarioConfig, mesh: &Mesh) -> Result<NonlinearitySeries> {
    if config.phantom.a.is_empty() {
        return Ok(NonlinearitySeries::zero(mesh.n_triangles()));
    }
    let k_max = config.phantom.a[0].len() + 1;
    NonlinearitySeries::from_regions(mesh, k_max, &config.phantom.a)
        .context("phantom reaction series is invalid")
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Multiplies each value by `1 + noise * z` with independent standard
/// normal draws.
pub fn perturb(values: &mut [f64], noise: f64, rng: &mut ChaCha8Rng) {
    if noise == 0.0 {
        return;
    }
    for v in values.iter_mut() {
        *v *= 1.0 + noise * standard_normal(rng);
    }
}

/// `||a - b|| / max(||a||, ||b||, floor)`; the floor keeps levels whose
/// true derivative is near zero comparable at the measurement scale.
fn rel_l2_gap(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let mut num = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - y).powi(2);
        na += x.powi(2);
        nb += y.powi(2);
    }
    num.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Spreads per-region values onto triangles.
fn per_triangle(masks: &[RegionMask], n_triangles: usize, values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n_triangles];
    for (mask, &v) in masks.iter().zip(values) {
        for t in mask.iter() {
            out[t] = v;
        }
    }
    out
}

/// Discretization study against the manufactured solution `x^2 + y^2`
/// with unit conductivity; the boundary arc is forced to the full
/// circle because the manufactured data lives on all of it.
fn forward_convergence(config: &ScenarioConfig) -> Result<RunReport> {
    let mut report = RunReport::new(config.scenario.name(), config.seed);
    let hs = &config.convergence.h_values;
    if hs.len() < 2 {
        bail!("convergence.h_values needs at least two entries");
    }
    let errors: Vec<f64> = hs
        .par_iter()
        .map(|&h| -> Result<f64> {
            let mut mesh = build_disk_mesh(config.mesh.radius, None, h)?;
            tag_gamma(&mut mesh, Arc::full())?;
            let sigma = PiecewiseCoefficient::uniform(mesh.n_triangles(), 1.0)?;
            let system = FemSystem::new(&mesh, &sigma)?;
            let boundary: Vec<f64> = mesh
                .gamma_nodes()
                .iter()
                .map(|&g| {
                    let v = mesh.vertices[g];
                    v[0] * v[0] + v[1] * v[1]
                })
                .collect();
            let f = BoundaryData::new(&mesh, boundary)?;
            let source = SourceField::PerCell(vec![-4.0; mesh.n_triangles()]);
            let u = system.solve_linear(&source, &f)?;
            let diff: Vec<f64> = mesh
                .vertices
                .iter()
                .zip(&u)
                .map(|(v, &ui)| ui - (v[0] * v[0] + v[1] * v[1]))
                .collect();
            Ok(l2_mass_norm(&mesh, &diff))
        })
        .collect::<Result<_>>()?;
    let mut table = CsvTable::new("convergence", &["h", "l2_error", "observed_rate"]);
    for (i, (&h, &e)) in hs.iter().zip(&errors).enumerate() {
        let rate = if i == 0 {
            String::new()
        } else {
            fmt((errors[i - 1] / e).ln() / (hs[i - 1] / h).ln())
        };
        table.push(vec![fmt(h), fmt(e), rate]);
    }
    report.tables.push(table);
    let logs_h: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let logs_e: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let slope = least_squares_slope(&logs_h, &logs_e);
    report.metric("finest_l2_error", *errors.last().unwrap());
    report.check(Check::ge(
        "l2_slope_min",
        slope,
        config.convergence.slope_min,
    ));
    report.check(Check::le(
        "l2_slope_max",
        slope,
        config.convergence.slope_max,
    ));
    report.metric("l2_slope", slope);
    Ok(report)
}

/// Random boundary datum: a random combination of the standard family,
/// rescaled to the configured amplitude.
fn random_trace(
    family: &[BoundaryData],
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BoundaryData> {
    let coeffs: Vec<(f64, &BoundaryData)> = family
        .iter()
        .map(|f| (rng.gen_range(-1.0..1.0), f))
        .collect();
    let raw = BoundaryData::combine(&coeffs)?;
    let sup = raw.sup();
    if sup < 1e-9 {
        return Ok(family[0].scaled(amplitude));
    }
    Ok(raw.scaled(amplitude / sup))
}

fn fd_step_for(total: usize) -> f64 {
    match total {
        0 | 1 | 2 => 0.05,
        3 => 0.1,
        _ => 0.2,
    }
}

/// Compares every lattice flux derivative up to the configured order
/// against central finite differences of the full nonlinear solver,
/// over random phantoms and random data directions, plus one run with
/// the reaction switched off where the map is exactly linear.
fn linearization_check(config: &ScenarioConfig) -> Result<RunReport> {
    let mut report = RunReport::new(config.scenario.name(), config.seed);
    let mesh = build_domain(config)?;
    let labels = config.n_region_labels();
    let family = standard_family(&mesh, config.arc(), 5)?;
    let lin = &config.linearization;
    let max_order = lin.max_order;
    let orders: Vec<(usize, usize)> = (0..=max_order)
        .flat_map(|p| (0..=max_order).map(move |q| (p, q)))
        .filter(|&(p, q)| (1..=max_order).contains(&(p + q)))
        .collect();
    let opts = SolveOptions {
        newton_tol: 1e-13,
        max_iterations: 60,
        amplitude_limit: None,
    };

    let runs: Vec<(usize, bool)> = (0..lin.configs)
        .map(|i| (i, false))
        .chain(std::iter::once((lin.configs, true)))
        .collect();
    let results: Vec<Vec<(usize, usize, usize, f64, f64, bool)>> = runs
        .par_iter()
        .map(|&(idx, zero_series)| -> Result<_> {
            let mut trace_rng = derive(config.seed, Stream::TraceShape, idx as u64);
            let f1 = random_trace(&family, config.data.amplitude, &mut trace_rng)?;
            let f2 = random_trace(&family, config.data.amplitude, &mut trace_rng)?;
            let series = if zero_series {
                NonlinearitySeries::zero(mesh.n_triangles())
            } else {
                let mut series_rng = derive(config.seed, Stream::SeriesValues, idx as u64);
                let k_top = series_rng.gen_range(2..=lin.k_max);
                let rows: Vec<Vec<f64>> = (0..labels)
                    .map(|_| {
                        (2..=lin.k_max)
                            .map(|k| {
                                if k <= k_top {
                                    series_rng.gen_range(-1.0..1.0)
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                NonlinearitySeries::from_regions(&mesh, lin.k_max, &rows)?
            };
            let sigma = phantom_sigma(config, &mesh)?;
            let system = FemSystem::new(&mesh, &sigma)?;
            let lattice = build_lattice(&system, &series, &f1, &f2, max_order, max_order)?;
            let ref_norm = dn_derivative(&system, &lattice, 1, 0)?
                .norm()
                .max(dn_derivative(&system, &lattice, 0, 1)?.norm());
            let floor = 1e-3 * ref_norm;
            let mut rows = Vec::new();
            for &(p, q) in &orders {
                let exact = dn_derivative(&system, &lattice, p, q)?;
                let step = fd_step_for(p + q);
                let fd = fd_dn_derivative(&system, &series, &f1, &f2, p, q, step, &opts)?;
                let gap = rel_l2_gap(&exact.values, &fd.values, floor);
                rows.push((idx, p, q, step, gap, zero_series));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(
        "linearization",
        &["config", "p", "q", "fd_step", "rel_gap", "zero_series"],
    );
    let mut max_gap: f64 = 0.0;
    let mut zero_max_gap: f64 = 0.0;
    for rows in &results {
        for &(idx, p, q, step, gap, zero) in rows {
            if zero {
                zero_max_gap = zero_max_gap.max(gap);
            } else {
                max_gap = max_gap.max(gap);
            }
            table.push(vec![
                idx.to_string(),
                p.to_string(),
                q.to_string(),
                fmt(step),
                fmt(gap),
                (zero as u8).to_string(),
            ]);
        }
    }
    report.tables.push(table);
    report.check(Check::le("max_rel_gap", max_gap, lin.tol));
    report.check(Check::le(
        "zero_series_max_gap",
        zero_max_gap,
        lin.tol_zero_series,
    ));
    Ok(report)
}

/// Builds the localizing data sequence and checks that solution mass
/// concentrates on the target region while the control region decays.
fn localized_potentials(config: &ScenarioConfig) -> Result<RunReport> {
    let mut report = RunReport::new(config.scenario.name(), config.seed);
    let loc = config
        .localization
        .as_ref()
        .ok_or_else(|| anyhow!("missing [localization] section"))?;
    let mesh = build_domain(config)?;
    let sigma = phantom_sigma(config, &mesh)?;
    let system = FemSystem::new(&mesh, &sigma)?;
    let d1 = region_mask_from_disk(&mesh, loc.d1.center, loc.d1.radius)?;
    let d2 = match &loc.d2 {
        Some(d) => region_mask_from_disk(&mesh, d.center, d.radius)?,
        None => RegionMask::empty(mesh.n_triangles()),
    };
    let seq = localized_potential_sequence(&system, &d1, &d2, loc.delta0, loc.steps)?;

    let mut table = CsvTable::new(
        "localization",
        &["step", "delta", "d1_energy", "d2_energy", "ratio"],
    );
    let has_d2 = !d2.is_empty();
    let mut ratios = Vec::new();
    for k in 0..seq.len() {
        let ratio = if has_d2 {
            seq.e1[k] / seq.e2[k]
        } else {
            f64::NAN
        };
        ratios.push(ratio);
        table.push(vec![
            k.to_string(),
            fmt(seq.deltas[k]),
            fmt(seq.e1[k]),
            fmt(seq.e2[k]),
            if has_d2 { fmt(ratio) } else { String::new() },
        ]);
    }
    report.tables.push(table);

    if has_d2 {
        let mut longest = 0usize;
        let mut run = 0usize;
        for k in 1..ratios.len() {
            if ratios[k] > ratios[k - 1] {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        let total_growth = ratios[ratios.len() - 1] / ratios[0];
        let max_d2_increase = (1..seq.len())
            .map(|k| seq.e2[k] - seq.e2[k - 1])
            .fold(f64::NEG_INFINITY, f64::max);
        report.check(Check::ge(
            "ratio_increasing_steps",
            longest as f64,
            loc.min_increasing_steps as f64,
        ));
        report.check(Check::ge(
            "ratio_total_growth",
            total_growth,
            loc.min_total_ratio,
        ));
        report.check(Check::le("d2_energy_max_increase", max_d2_increase, 0.0));
    } else {
        let min_e1_increment = (1..seq.len())
            .map(|k| seq.e1[k] - seq.e1[k - 1])
            .fold(f64::INFINITY, f64::min);
        report.check(Check::ge("d1_energy_min_increment", min_e1_increment, 0.0));
    }
    report.metric("final_d1_energy", *seq.e1.last().unwrap());
    report.metric("final_d2_energy", *seq.e2.last().unwrap());
    Ok(report)
}

/// Reaction-stage experiment designs: boundary data pairs chosen so the
/// weight rows stay informative on symmetric meshes.
fn stage_designs(
    mesh: &Mesh,
    arc: Arc,
) -> Result<(Vec<(BoundaryData, BoundaryData)>, Vec<BoundaryData>)> {
    let bump = trig_trace(mesh, arc, TraceShape::Bump)?;
    let cos1 = trig_trace(mesh, arc, TraceShape::Cos(1))?;
    let sin1 = trig_trace(mesh, arc, TraceShape::Sin(1))?;
    let pairs = vec![
        (bump.clone(), bump.clone()),
        (cos1.clone(), bump.clone()),
        (sin1, bump.clone()),
        (cos1.clone(), cos1.clone()),
    ];
    Ok((pairs, vec![bump, cos1]))
}

/// Simulates the order `(2, m-2)` flux derivatives of the phantom for
/// each design pair, with optional relative noise.
fn simulate_stage(
    system_true: &FemSystem,
    series_true: &NonlinearitySeries,
    pairs: &[(BoundaryData, BoundaryData)],
    m: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Experiment>> {
    let mut out = Vec::with_capacity(pairs.len());
    for (f1, f2) in pairs {
        let lattice = build_lattice(system_true, series_true, f1, f2, 2, m - 2)?;
        let mut dn = dn_derivative(system_true, &lattice, 2, m - 2)?;
        perturb(&mut dn.values, noise, rng);
        out.push(Experiment {
            f1: f1.clone(),
            f2: f2.clone(),
            order: (2, m - 2),
            dn,
        });
    }
    Ok(out)
}

/// Regularization weight: the configured floor, raised in proportion to
/// the noise level.
fn effective_lambda(config: &ScenarioConfig) -> f64 {
    config.recovery.lambda.max(1e-2 * config.data.noise)
}

struct StagedRecovery {
    sigma_hat: Vec<f64>,
    sigma_iterations: usize,
    a_hat: Vec<Vec<f64>>,
    conditions: Vec<f64>,
}

/// Shared reconstruction path: conductivity first (unless known), then
/// the reaction orders stage by stage with the running estimate
/// inserted before each next stage.
fn staged_recovery(
    config: &ScenarioConfig,
    mesh_model: &Mesh,
    data_mesh_system: &FemSystem,
    series_true: &NonlinearitySeries,
) -> Result<StagedRecovery> {
    let labels = config.n_region_labels();
    let masks_model = region_masks(mesh_model, labels);
    let noise = config.data.noise;
    let rec = &config.recovery;

    let (sigma_hat, sigma_iterations) = if rec.sigma_known {
        (sigma_values(config), 0)
    } else {
        let arc = config.arc();
        let basis = standard_family(data_mesh_system.mesh, arc, config.data.family)?;
        let mut data = pairing_matrix(data_mesh_system, &basis)?;
        let mut rng = derive(config.seed, Stream::Noise, 0);
        perturb(data.as_mut_slice(), noise, &mut rng);
        let basis_model = standard_family(mesh_model, arc, config.data.family)?;
        let initial = if rec.initial_sigma.is_empty() {
            vec![1.0; labels]
        } else {
            rec.initial_sigma.clone()
        };
        let fit = recover_sigma_linearized(
            mesh_model,
            &masks_model,
            &basis_model,
            &data,
            &initial,
            &SigmaOptions::default(),
        )?;
        (fit.values, fit.iterations)
    };

    let sigma_model = PiecewiseCoefficient::from_regions(mesh_model, &sigma_hat, 1e-6)?;
    let system_model = FemSystem::new(mesh_model, &sigma_model)?;
    let (pairs, test_basis) = stage_designs(data_mesh_system.mesh, config.arc())?;
    let (pairs_model, test_basis_model) = if std::ptr::eq(mesh_model, data_mesh_system.mesh) {
        (None, None)
    } else {
        let (p, t) = stage_designs(mesh_model, config.arc())?;
        (Some(p), Some(t))
    };

    let lambda = effective_lambda(config);
    let mut known = NonlinearitySeries::zero_with_order(mesh_model.n_triangles(), 2);
    let mut a_hat = Vec::new();
    let mut conditions = Vec::new();
    for m in 2..=rec.stages {
        let mut rng = derive(config.seed, Stream::Noise, 10 + m as u64);
        let mut experiments =
            simulate_stage(data_mesh_system, series_true, &pairs, m, noise, &mut rng)?;
        if let (Some(pm), Some(_)) = (&pairs_model, &test_basis_model) {
            for (e, (f1, f2)) in experiments.iter_mut().zip(pm) {
                e.f1 = f1.clone();
                e.f2 = f2.clone();
            }
        }
        let test = test_basis_model.as_ref().unwrap_or(&test_basis);
        let fit = recover_am_step(
            &system_model,
            &known,
            m,
            &masks_model,
            &experiments,
            test,
            lambda,
        )?;
        known.set_order(
            m,
            &per_triangle(&masks_model, mesh_model.n_triangles(), &fit.values),
        )?;
        conditions.push(fit.condition);
        a_hat.push(fit.values);
    }
    Ok(StagedRecovery {
        sigma_hat,
        sigma_iterations,
        a_hat,
        conditions,
    })
}

fn reaction_checks(config: &ScenarioConfig, recovery: &StagedRecovery, report: &mut RunReport) {
    let labels = config.n_region_labels();
    let mut table = CsvTable::new(
        "reaction",
        &[
            "stage",
            "region",
            "truth",
            "estimate",
            "abs_error",
            "rel_error",
        ],
    );
    for (s, values) in recovery.a_hat.iter().enumerate() {
        let m = s + 2;
        let scale = (0..labels)
            .map(|r| config.phantom.a[r][m - 2].abs())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let mut worst = 0.0f64;
        for r in 0..labels {
            let truth = config.phantom.a[r][m - 2];
            let est = values[r];
            let abs = (est - truth).abs();
            let rel = abs / scale;
            worst = worst.max(rel);
            table.push(vec![
                m.to_string(),
                r.to_string(),
                fmt(truth),
                fmt(est),
                fmt(abs),
                fmt(rel),
            ]);
        }
        report.check(Check::le(
            &format!("a{m}_max_rel_error"),
            worst,
            config.recovery.tol_a,
        ));
        report.metric(&format!("a{m}_condition"), recovery.conditions[s]);
        if recovery.conditions[s] > 1e10 {
            report.warn(format!(
                "stage {m} normal equations are poorly conditioned ({:.3e})",
                recovery.conditions[s]
            ));
        }
    }
    report.tables.push(table);
}

fn sigma_checks(config: &ScenarioConfig, recovery: &StagedRecovery, report: &mut RunReport) {
    let truth = sigma_values(config);
    let mut table = CsvTable::new("sigma", &["region", "truth", "estimate", "rel_error"]);
    let mut worst = 0.0f64;
    for (r, (&t, &e)) in truth.iter().zip(&recovery.sigma_hat).enumerate() {
        let rel = (e - t).abs() / t.abs().max(1e-12);
        worst = worst.max(rel);
        table.push(vec![r.to_string(), fmt(t), fmt(e), fmt(rel)]);
    }
    report.tables.push(table);
    report.metric("sigma_iterations", recovery.sigma_iterations as f64);
    if config.recovery.sigma_known {
        report.metric("sigma_max_rel_error", worst);
    } else {
        report.check(Check::le(
            "sigma_max_rel_error",
            worst,
            config.recovery.tol_sigma,
        ));
    }
}

fn write_recovered(
    config: &ScenarioConfig,
    mesh: &Mesh,
    recovery: &StagedRecovery,
    out_dir: &Path,
    report: &mut RunReport,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_mesh_file(&out_dir.join("model.mesh"), mesh)?;
    let labels = config.n_region_labels();
    let masks = region_masks(mesh, labels);
    let sigma = PiecewiseCoefficient::from_regions(mesh, &recovery.sigma_hat, 1e-6)?;
    let mut series = NonlinearitySeries::zero_with_order(mesh.n_triangles(), 2);
    for (s, values) in recovery.a_hat.iter().enumerate() {
        series.set_order(s + 2, &per_triangle(&masks, mesh.n_triangles(), values))?;
    }
    write_coef_file(&out_dir.join("recovered.coef"), &sigma, Some(&series))?;
    report.artifacts.push("model.mesh".into());
    report.artifacts.push("recovered.coef".into());
    Ok(())
}

/// Stagewise reaction recovery (and optionally conductivity recovery)
/// on the phantom's own geometry.
fn recover_coefficients(config: &ScenarioConfig, out_dir: &Path) -> Result<RunReport> {
    let mut report = RunReport::new(config.scenario.name(), config.seed);
    if config.recovery.stages > config.phantom.a[0].len() + 1 {
        bail!(
            "recovery.stages {} exceeds the phantom's highest order {}",
            config.recovery.stages,
            config.phantom.a[0].len() + 1
        );
    }
    let mesh = build_domain(config)?;
    let sigma_true = phantom_sigma(config, &mesh)?;
    let series_true = phantom_series(config, &mesh)?;
    let system_true = FemSystem::new(&mesh, &sigma_true)?;
    let recovery = staged_recovery(config, &mesh, &system_true, &series_true)?;
    sigma_checks(config, &recovery, &mut report);
    reaction_checks(config, &recovery, &mut report);
    write_recovered(config, &mesh, &recovery, out_dir, &mut report)?;
    Ok(report)
}

fn cavity_scan_from(config: &ScenarioConfig, assumed_sigma: f64) -> CavityScan {
    let cs = &config.cavity_scan;
    CavityScan {
        radius: config.mesh.radius,
        h: config.mesh.h,
        arc: config.arc(),
        sigma: assumed_sigma,
        n_family: config.data.family,
        noise_floor: cs.noise_floor,
        grid_step: cs.grid_step,
        radius_range: (cs.radius_range[0], cs.radius_range[1]),
        refine_rounds: cs.refine_rounds,
    }
}

fn cavity_checks(
    config: &ScenarioConfig,
    report: &mut RunReport,
    verdict: &CavityVerdict,
    stage1: f64,
) {
    report.metric("stage1_residual", stage1);
    let flag = match verdict {
        CavityVerdict::None => 0.0,
        CavityVerdict::Inconclusive => 0.5,
        CavityVerdict::Detected { .. } => 1.0,
    };
    report.metric("cavity_flag", flag);
    match config.cavity_scan.expect.as_deref() {
        Some("none") => report.check(Check::eq("cavity_flag_none", flag, 0.0)),
        Some("detected") => {
            report.check(Check::eq("cavity_flag_detected", flag, 1.0));
            if let CavityVerdict::Detected {
                center,
                radius,
                misfit,
            } = verdict
            {
                report.metric("cavity_misfit", *misfit);
                if let Some(truth) = &config.mesh.cavity {
                    let ce = ((center[0] - truth.center[0]).powi(2)
                        + (center[1] - truth.center[1]).powi(2))
                    .sqrt();
                    let re = (radius - truth.radius).abs();
                    let h = config.mesh.h;
                    report.check(Check::le(
                        "cavity_center_error",
                        ce,
                        config.cavity_scan.center_tol_h * h,
                    ));
                    report.check(Check::le(
                        "cavity_radius_error",
                        re,
                        config.cavity_scan.radius_tol_h * h,
                    ));
                }
            }
        }
        _ => {
            if *verdict == CavityVerdict::Inconclusive {
                report.warn(
                    "cavity test inconclusive: flux residual within the noise floor \
                     but the parameter scan found matching structure",
                );
            }
        }
    }
}

fn landscape_table(landscape: &[(f64, f64, f64, f64)]) -> CsvTable {
    let mut table = CsvTable::new("cavity_landscape", &["cx", "cy", "radius", "misfit"]);
    for &(cx, cy, r, misfit) in landscape {
        table.push(vec![fmt(cx), fmt(cy), fmt(r), fmt(misfit)]);
    }
    table
}

/// Simulates the pairing matrix of the phantom (with its cavity, if
/// any) and runs the two-stage cavity test against it.
fn detect_cavity_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    let mut report = RunReport::new(config.scenario.name(), config.seed);
    let mesh = build_domain(config)?;
    let sigma_true = phantom_sigma(config, &mesh)?;
    let system_true = FemSystem::new(&mesh, &sigma_true)?;
    let family = standard_family(&mesh, config.arc(), config.data.family)?;
    let mut data = pairing_matrix(&system_true, &family)?;
    let mut rng = derive(config.seed, Stream::Noise, 1);
    perturb(data.as_mut_slice(), config.data.noise, &mut rng);
    let scan = cavity_scan_from(config, sigma_values(config)[0]);
    let outcome = detect_cavity(&scan, &data)?;
    report.tables.push(landscape_table(&outcome.landscape));
    cavity_checks(
        config,
        &mut report,
        &outcome.verdict,
        outcome.stage1_residual,
    );
    if let CavityVerdict::Detected { center, radius, .. } = outcome.verdict {
        report.metric("cavity_center_x", center[0]);
        report.metric("cavity_center_y", center[1]);
        report.metric("cavity_radius", radius);
    }
    Ok(report)
}

/// Cavity test first, then conductivity and reaction recovery on the
/// geometry the cavity stage produced.
fn full_pipeline(config: &ScenarioConfig, out_dir: &Path) -> Result<RunReport> {
    let mut report = RunReport::new(config.scenario.name(), config.seed);
    if config.recovery.stages > config.phantom.a[0].len() + 1 {
        bail!(
            "recovery.stages {} exceeds the phantom's highest order {}",
            config.recovery.stages,
            config.phantom.a[0].len() + 1
        );
    }
    let mesh_true = build_domain(config)?;
    let sigma_true = phantom_sigma(config, &mesh_true)?;
    let series_true = phantom_series(config, &mesh_true)?;
    let system_true = FemSystem::new(&mesh_true, &sigma_true)?;

    let family = standard_family(&mesh_true, config.arc(), config.data.family)?;
    let mut data = pairing_matrix(&system_true, &family)?;
    let mut rng = derive(config.seed, Stream::Noise, 1);
    perturb(data.as_mut_slice(), config.data.noise, &mut rng);
    let assumed = if config.recovery.initial_sigma.is_empty() {
        1.0
    } else {
        config.recovery.initial_sigma[0]
    };
    let scan = cavity_scan_from(config, assumed);
    let outcome = detect_cavity(&scan, &data)?;
    report.tables.push(landscape_table(&outcome.landscape));
    cavity_checks(
        config,
        &mut report,
        &outcome.verdict,
        outcome.stage1_residual,
    );

    let model_cavity = match outcome.verdict {
        CavityVerdict::Detected { center, radius, .. } => {
            report.metric("cavity_center_x", center[0]);
            report.metric("cavity_center_y", center[1]);
            report.metric("cavity_radius", radius);
            Some((center, radius))
        }
        _ => None,
    };
    let mesh_model = build_domain_with(config, model_cavity)?;
    let recovery = staged_recovery(config, &mesh_model, &system_true, &series_true)?;
    sigma_checks(config, &recovery, &mut report);
    reaction_checks(config, &recovery, &mut report);
    write_recovered(config, &mesh_model, &recovery, out_dir, &mut report)?;
    Ok(report)
}

/// Evaluates the region-split comparison functional along the
/// localizing sequence for a defect supported on the target region, and
/// again for a zero defect.
fn contradiction_witness(config: &ScenarioConfig) -> Result<RunReport> {
    let mut report = RunReport::new(config.scenario.name(), config.seed);
    let con = config
        .contradiction
        .as_ref()
        .ok_or_else(|| anyhow!("missing [contradiction] section"))?;
    let mesh = build_domain(config)?;
    let sigma = phantom_sigma(config, &mesh)?;
    let system = FemSystem::new(&mesh, &sigma)?;
    let d1 = region_mask_from_disk(&mesh, con.d1.center, con.d1.radius)?;
    let d2 = region_mask_from_disk(&mesh, con.d2.center, con.d2.radius)?;
    let seq = localized_potential_sequence(&system, &d1, &d2, con.delta0, con.steps)?;
    let psi = trig_trace(&mesh, config.arc(), TraceShape::Bump)?;

    let mut delta_a = vec![0.0; mesh.n_triangles()];
    for t in d1.iter() {
        delta_a[t] = 1.0;
    }
    let trace = semirec_core::recovery::contradiction_functional(
        &system, &delta_a, con.order, &d1, &d2, &seq, &psi,
    )?;
    let zero_trace = semirec_core::recovery::contradiction_functional(
        &system,
        &vec![0.0; mesh.n_triangles()],
        con.order,
        &d1,
        &d2,
        &seq,
        &psi,
    )?;

    let mut table = CsvTable::new(
        "contradiction",
        &[
            "step",
            "delta",
            "d1_part",
            "d2_part",
            "rest_part",
            "total",
            "zero_total",
        ],
    );
    for k in 0..seq.len() {
        table.push(vec![
            k.to_string(),
            fmt(seq.deltas[k]),
            fmt(trace.d1_part[k]),
            fmt(trace.d2_part[k]),
            fmt(trace.rest_part[k]),
            fmt(trace.total[k]),
            fmt(zero_trace.total[k]),
        ]);
    }
    report.tables.push(table);

    let min_d1_increment = (1..seq.len())
        .map(|k| trace.d1_part[k] - trace.d1_part[k - 1])
        .fold(f64::INFINITY, f64::min);
    let max_d2_abs = trace.d2_part.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let zero_max = zero_trace
        .total
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    report.check(Check::ge("d1_part_min_increment", min_d1_increment, 1e-12));
    report.check(Check::le(
        "d2_part_max_abs",
        max_d2_abs,
        con.d2_drop * trace.total[0].abs(),
    ));
    report.check(Check::le(
        "zero_defect_max_abs",
        zero_max,
        con.quadrature_tol,
    ));
    report.metric("final_d1_part", *trace.d1_part.last().unwrap());
    Ok(report)
}
