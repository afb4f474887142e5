//! Synthetic measurement generation.
//!
//! Writes the phantom mesh, the phantom coefficients, and a JSON
//! measurement file. Each family member is first pushed through the
//! full nonlinear solver as a well-posedness gate (and to record its
//! plain flux); the configured derivative orders are then simulated
//! through the derivative lattice. Noise draws come from per-experiment
//! streams of the run seed, so the file is reproducible and two seeds
//! differ only in measured values.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use semirec_core::fem::{FemSystem, SolveOptions};
use semirec_core::io::{write_coef_file, write_mesh_file};
use semirec_core::lattice::{build_lattice, dn_derivative};
use semirec_core::Error;

use crate::config::ScenarioConfig;
use crate::report::SCHEMA_VERSION;
use crate::rng::{derive, Stream};
use crate::scenarios::{build_domain, perturb, phantom_series, phantom_sigma};

#[derive(Serialize)]
struct MeasurementRecord {
    f1: usize,
    f2: usize,
    order: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize)]
struct MeasurementFile {
    schema_version: u32,
    seed: u64,
    noise: f64,
    amplitude: f64,
    family: Vec<String>,
    newton_iterations: Vec<usize>,
    experiments: Vec<MeasurementRecord>,
}

fn wellposedness_error(e: &Error) -> Option<String> {
    match e {
        Error::AmplitudeTooLarge { sup, limit } => Some(format!(
            "phantom outside the well-posed amplitude range: data sup {sup:.4} exceeds the limit {limit:.4}"
        )),
        Error::NewtonDiverged { .. } | Error::NewtonMaxIterations { .. } => Some(
            "phantom outside the well-posed amplitude range: the nonlinear solve did not converge"
                .into(),
        ),
        _ => None,
    }
}

/// Simulates and writes `phantom.mesh`, `phantom.coef`, and
/// `measurements.json` under `out_dir`; returns the files written.
pub fn generate_synthetic_data(config: &ScenarioConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mesh = build_domain(config)?;
    let sigma = phantom_sigma(config, &mesh)?;
    let series = phantom_series(config, &mesh)?;
    let system = FemSystem::new(&mesh, &sigma).context("operator assembly failed")?;
    let arc = config.arc();
    let family = semirec_core::traces::standard_family(&mesh, arc, config.data.family)?;
    let amplitude = config.data.amplitude;
    let opts = SolveOptions {
        newton_tol: 1e-12,
        max_iterations: 30,
        amplitude_limit: Some(config.data.epsilon_max),
    };

    let mut experiments = Vec::new();
    let mut newton_iterations = Vec::new();
    let mut exp_index = 0u64;
    for (i, f) in family.iter().enumerate() {
        let data = f.scaled(amplitude);
        let (u, newton) = system
            .solve_semilinear(&series, &data, &opts)
            .map_err(|e| match wellposedness_error(&e) {
                Some(msg) => anyhow!(msg),
                None => anyhow!(e).context("nonlinear forward solve failed"),
            })?;
        newton_iterations.push(newton.iterations);
        let mut dn = system.dn_measure(&series, &u, &data)?;
        let mut rng = derive(config.seed, Stream::Noise, 1000 + exp_index);
        perturb(&mut dn.values, config.data.noise, &mut rng);
        exp_index += 1;
        experiments.push(MeasurementRecord {
            f1: i,
            f2: i,
            order: [0, 0],
            values: dn.values,
        });
    }
    for &[p, q] in &config.data.orders {
        for i in 0..family.len() {
            let j = (i + 1) % family.len();
            let lattice = build_lattice(&system, &series, &family[i], &family[j], p, q)?;
            let mut dn = dn_derivative(&system, &lattice, p, q)?;
            let mut rng = derive(config.seed, Stream::Noise, 1000 + exp_index);
            perturb(&mut dn.values, config.data.noise, &mut rng);
            exp_index += 1;
            experiments.push(MeasurementRecord {
                f1: i,
                f2: j,
                order: [p, q],
                values: dn.values,
            });
        }
    }

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    write_mesh_file(&out_dir.join("phantom.mesh"), &mesh)?;
    write_coef_file(&out_dir.join("phantom.coef"), &sigma, Some(&series))?;
    let file = MeasurementFile {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        noise: config.data.noise,
        amplitude,
        family: (0..family.len()).map(family_label).collect(),
        newton_iterations,
        experiments,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(out_dir.join("measurements.json"), text)?;
    Ok(vec![
        PathBuf::from("phantom.mesh"),
        PathBuf::from("phantom.coef"),
        PathBuf::from("measurements.json"),
    ])
}

/// Names the members of the standard trace family in order.
fn family_label(i: usize) -> String {
    if i == 0 {
        return "bump".into();
    }
    let k = (i + 1) / 2;
    if i % 2 == 1 {
        format!("cos{k}")
    } else {
        format!("sin{k}")
    }
}
