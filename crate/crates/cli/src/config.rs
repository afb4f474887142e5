//! Scenario configuration: TOML schema, defaults, and validation.

use std::path::Path;

use anyhow::{bail, Context, Result};
use semirec_core::mesh::Arc;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ForwardConvergence,
    LinearizationCheck,
    LocalizedPotentials,
    RecoverCoefficients,
    DetectCavity,
    FullPipeline,
    ContradictionWitness,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::ForwardConvergence => "forward_convergence",
            Scenario::LinearizationCheck => "linearization_check",
            Scenario::LocalizedPotentials => "localized_potentials",
            Scenario::RecoverCoefficients => "recover_coefficients",
            Scenario::DetectCavity => "detect_cavity",
            Scenario::FullPipeline => "full_pipeline",
            Scenario::ContradictionWitness => "contradiction_witness",
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub cavity: Option<Disk>,
}

fn default_radius() -> f64 {
    1.0
}

fn default_h() -> f64 {
    0.2
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            radius: default_radius(),
            h: default_h(),
            cavity: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcConfig {
    pub start: f64,
    pub end: f64,
}

impl ArcConfig {
    pub fn to_arc(self) -> Arc {
        Arc {
            start: self.start,
            end: self.end,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsConfig {
    #[serde(default)]
    pub disks: Vec<Disk>,
}

/// Per-region coefficient phantom; row order follows region labels
/// (background first, then each region disk).
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    /// Per-region conductivity values.
    #[serde(default)]
    pub sigma: Vec<f64>,
    /// Per-region reaction rows `a_2..a_K`.
    #[serde(default)]
    pub a: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_family")]
    pub family: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_epsilon_max")]
    pub epsilon_max: f64,
    #[serde(default)]
    pub noise: f64,
    /// Derivative orders simulated by `gen-data`.
    #[serde(default = "default_orders")]
    pub orders: Vec<[usize; 2]>,
}

fn default_family() -> usize {
    5
}

fn default_amplitude() -> f64 {
    0.05
}

fn default_epsilon_max() -> f64 {
    0.1
}

fn default_orders() -> Vec<[usize; 2]> {
    vec![[1, 0]]
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            family: default_family(),
            amplitude: default_amplitude(),
            epsilon_max: default_epsilon_max(),
            noise: 0.0,
            orders: default_orders(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default = "default_h_values")]
    pub h_values: Vec<f64>,
    #[serde(default = "default_slope_min")]
    pub slope_min: f64,
    #[serde(default = "default_slope_max")]
    pub slope_max: f64,
}

fn default_h_values() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}

fn default_slope_min() -> f64 {
    1.8
}

fn default_slope_max() -> f64 {
    2.2
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            h_values: default_h_values(),
            slope_min: default_slope_min(),
            slope_max: default_slope_max(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizationConfig {
    #[serde(default = "default_configs")]
    pub configs: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_lin_tol")]
    pub tol: f64,
    #[serde(default = "default_lin_tol_zero")]
    pub tol_zero_series: f64,
}

fn default_configs() -> usize {
    10
}

fn default_k_max() -> usize {
    4
}

fn default_max_order() -> usize {
    4
}

fn default_lin_tol() -> f64 {
    1e-2
}

fn default_lin_tol_zero() -> f64 {
    1e-9
}

impl Default for LinearizationConfig {
    fn default() -> Self {
        LinearizationConfig {
            configs: default_configs(),
            k_max: default_k_max(),
            max_order: default_max_order(),
            tol: default_lin_tol(),
            tol_zero_series: default_lin_tol_zero(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    pub d1: Disk,
    #[serde(default)]
    pub d2: Option<Disk>,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    #[serde(default = "default_loc_steps")]
    pub steps: usize,
    #[serde(default = "default_min_increasing")]
    pub min_increasing_steps: usize,
    #[serde(default = "default_min_ratio")]
    pub min_total_ratio: f64,
}

fn default_delta0() -> f64 {
    0.1
}

fn default_loc_steps() -> usize {
    8
}

fn default_min_increasing() -> usize {
    5
}

fn default_min_ratio() -> f64 {
    10.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Highest reaction order recovered; stages run `2..=stages`.
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_true")]
    pub sigma_known: bool,
    #[serde(default)]
    pub initial_sigma: Vec<f64>,
    #[serde(default = "default_tol_sigma")]
    pub tol_sigma: f64,
    #[serde(default = "default_tol_a")]
    pub tol_a: f64,
}

fn default_lambda() -> f64 {
    1e-8
}

fn default_stages() -> usize {
    2
}

fn default_true() -> bool {
    true
}

fn default_tol_sigma() -> f64 {
    0.01
}

fn default_tol_a() -> f64 {
    0.05
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            lambda: default_lambda(),
            stages: default_stages(),
            sigma_known: default_true(),
            initial_sigma: Vec::new(),
            tol_sigma: default_tol_sigma(),
            tol_a: default_tol_a(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityScanConfig {
    #[serde(default = "default_noise_floor")]
    pub noise_floor: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default = "default_radius_range")]
    pub radius_range: [f64; 2],
    #[serde(default = "default_refine_rounds")]
    pub refine_rounds: usize,
    /// Expected verdict checked against the outcome: `none` or
    /// `detected`.
    #[serde(default)]
    pub expect: Option<String>,
    #[serde(default = "default_center_tol")]
    pub center_tol_h: f64,
    #[serde(default = "default_radius_tol")]
    pub radius_tol_h: f64,
}

fn default_noise_floor() -> f64 {
    1e-6
}

fn default_grid_step() -> f64 {
    0.2
}

fn default_radius_range() -> [f64; 2] {
    [0.2, 0.45]
}

fn default_refine_rounds() -> usize {
    3
}

fn default_center_tol() -> f64 {
    1.0
}

fn default_radius_tol() -> f64 {
    2.0
}

impl Default for CavityScanConfig {
    fn default() -> Self {
        CavityScanConfig {
            noise_floor: default_noise_floor(),
            grid_step: default_grid_step(),
            radius_range: default_radius_range(),
            refine_rounds: default_refine_rounds(),
            expect: None,
            center_tol_h: default_center_tol(),
            radius_tol_h: default_radius_tol(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContradictionConfig {
    pub d1: Disk,
    pub d2: Disk,
    #[serde(default = "default_witness_delta0")]
    pub delta0: f64,
    #[serde(default = "default_witness_steps")]
    pub steps: usize,
    #[serde(default = "default_witness_order")]
    pub order: usize,
    #[serde(default = "default_d2_drop")]
    pub d2_drop: f64,
    #[serde(default = "default_quadrature_tol")]
    pub quadrature_tol: f64,
}

fn default_witness_delta0() -> f64 {
    0.00625
}

fn default_witness_steps() -> usize {
    6
}

fn default_witness_order() -> usize {
    2
}

fn default_d2_drop() -> f64 {
    1e-3
}

fn default_quadrature_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub arc: Option<ArcConfig>,
    #[serde(default)]
    pub regions: RegionsConfig,
    #[serde(default)]
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub linearization: LinearizationConfig,
    #[serde(default)]
    pub localization: Option<LocalizationConfig>,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default)]
    pub cavity_scan: CavityScanConfig,
    #[serde(default)]
    pub contradiction: Option<ContradictionConfig>,
}

fn default_out_dir() -> String {
    "out".into()
}

impl ScenarioConfig {
    pub fn arc(&self) -> Arc {
        self.arc.map_or_else(Arc::full, ArcConfig::to_arc)
    }

    /// Number of region labels: background plus one per region disk.
    pub fn n_region_labels(&self) -> usize {
        self.regions.disks.len() + 1
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ScenarioConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Schema-level checks shared by every subcommand.
    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        if !(m.radius > 0.0) || !m.radius.is_finite() {
            bail!("mesh.radius must be positive, got {}", m.radius);
        }
        if !(m.h > 0.0) || m.h >= m.radius {
            bail!("mesh.h must lie in (0, radius), got {}", m.h);
        }
        if let Some(c) = &m.cavity {
            let dist = (c.center[0].powi(2) + c.center[1].powi(2)).sqrt();
            let clearance = m.radius - (dist + c.radius);
            if c.radius <= 0.0 {
                bail!("mesh.cavity.radius must be positive");
            }
            if clearance < 2.0 * m.h {
                bail!(
                    "cavity clearance {clearance:.3} is below twice the mesh spacing {:.3}",
                    m.h
                );
            }
        }
        if let Some(a) = &self.arc {
            if !a.start.is_finite() || !a.end.is_finite() || a.end <= a.start {
                bail!("arc must satisfy start < end");
            }
        }
        for d in &self.regions.disks {
            if d.radius <= 0.0 {
                bail!("region disk radius must be positive");
            }
        }
        let labels = self.n_region_labels();
        if !self.phantom.sigma.is_empty() && self.phantom.sigma.len() != labels {
            bail!(
                "phantom.sigma has {} entries for {labels} region labels",
                self.phantom.sigma.len()
            );
        }
        if self.phantom.sigma.iter().any(|&s| s <= 0.0) {
            bail!("phantom.sigma values must be positive");
        }
        if !self.phantom.a.is_empty() {
            if self.phantom.a.len() != labels {
                bail!(
                    "phantom.a has {} rows for {labels} region labels",
                    self.phantom.a.len()
                );
            }
            let w = self.phantom.a[0].len();
            if w == 0 {
                bail!("phantom.a rows must list at least one order");
            }
            if self.phantom.a.iter().any(|row| row.len() != w) {
                bail!("phantom.a rows must all have the same length");
            }
        }
        if self.data.family == 0 {
            bail!("data.family must be at least 1");
        }
        if !(self.data.amplitude > 0.0) {
            bail!("data.amplitude must be positive");
        }
        if self.data.amplitude > self.data.epsilon_max {
            bail!(
                "data.amplitude {} exceeds data.epsilon_max {}",
                self.data.amplitude,
                self.data.epsilon_max
            );
        }
        if !(0.0..0.5).contains(&self.data.noise) {
            bail!("data.noise must lie in [0, 0.5)");
        }
        if self.data.orders.iter().any(|&[p, q]| p + q == 0) {
            bail!("data.orders entries must have order at least 1");
        }
        if self.recovery.stages < 2 {
            bail!("recovery.stages must be at least 2");
        }
        if !self.recovery.initial_sigma.is_empty() && self.recovery.initial_sigma.len() != labels {
            bail!(
                "recovery.initial_sigma has {} entries for {labels} region labels",
                self.recovery.initial_sigma.len()
            );
        }
        if let Some(l) = &self.localization {
            if !(l.delta0 > 0.0) {
                bail!("localization.delta0 must be positive");
            }
            if l.steps < 2 {
                bail!("localization.steps must be at least 2");
            }
        }
        if let Some(c) = &self.contradiction {
            if c.order < 2 {
                bail!("contradiction.order must be at least 2");
            }
            if c.steps < 2 {
                bail!("contradiction.steps must be at least 2");
            }
        }
        if let Some(expect) = &self.cavity_scan.expect {
            if expect != "none" && expect != "detected" {
                bail!("cavity_scan.expect must be `none` or `detected`, got `{expect}`");
            }
        }
        match self.scenario {
            Scenario::LocalizedPotentials if self.localization.is_none() => {
                bail!("localized_potentials requires a [localization] section")
            }
            Scenario::ContradictionWitness if self.contradiction.is_none() => {
                bail!("contradiction_witness requires a [contradiction] section")
            }
            Scenario::RecoverCoefficients | Scenario::FullPipeline if self.phantom.a.is_empty() => {
                bail!("{} requires phantom.a rows", self.scenario.name())
            }
            _ => Ok(()),
        }
    }
}
