//! The experiment configuration document.
//!
//! Configs are TOML with one table per concern; unknown keys are
//! rejected so typos surface as errors instead of silently falling back
//! to defaults. The resolved form (defaults filled in) is embedded in
//! every artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use higgs_balance::C64;
use higgs_balance::balance::BalanceOptions;
use higgs_balance::bundle::BundleSpec;
use higgs_balance::flow::FlowOptions;
use higgs_balance::higgs::{HiggsSpec, QuantizationParams};
use higgs_balance::stability::SubbundleSpec;

use crate::CliError;

/// One polynomial: coefficient pairs `[re, im]` in ascending powers.
pub type Poly = Vec<[f64; 2]>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bundle: BundleSection,
    #[serde(default)]
    pub higgs: HiggsSection,
    #[serde(default)]
    pub quantization: QuantizationSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightSection>,
    #[serde(default)]
    pub expansion: ExpansionSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSection {
    /// Splitting degrees, non-increasing.
    pub degrees: Vec<i64>,
    /// Twist of the Higgs field target, `φ: E → E ⊗ O(m)`.
    #[serde(default)]
    pub twist: i64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiggsSection {
    /// Row-major `r²` polynomial entries; omit for the zero field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<Poly>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizationSection {
    /// Level for single-level subcommands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<i64>,
    /// Levels for sweeps and reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_range: Option<Vec<i64>>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Override for the damping weight α, default `2(r-1)τ/k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Override for the damping weight β, default `1/(2(r-1))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl Default for QuantizationSection {
    fn default() -> Self {
        Self {
            level: None,
            k_range: None,
            tau: default_tau(),
            alpha: None,
            beta: None,
        }
    }
}

fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_radial")]
    pub radial: usize,
    #[serde(default = "default_angular")]
    pub angular: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            radial: default_radial(),
            angular: default_angular(),
        }
    }
}

fn default_radial() -> usize {
    16
}

fn default_angular() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_solver_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            damping: default_damping(),
            tolerance: default_solver_tolerance(),
            max_iterations: default_max_iterations(),
        }
    }
}

fn default_damping() -> f64 {
    1.0
}

fn default_solver_tolerance() -> f64 {
    1e-10
}

fn default_max_iterations() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "default_flow_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            tolerance: default_flow_tolerance(),
            max_steps: default_max_steps(),
            initial_step: default_initial_step(),
            max_step: default_max_step(),
        }
    }
}

fn default_flow_tolerance() -> f64 {
    1e-7
}

fn default_max_steps() -> usize {
    4000
}

fn default_initial_step() -> f64 {
    0.05
}

fn default_max_step() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    /// Degree ℓ of the line subbundle.
    pub degree: i64,
    /// Embedding components, one polynomial per summand.
    pub components: Vec<Poly>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_t_samples")]
    pub t_samples: usize,
}

fn default_t_max() -> f64 {
    4.0
}

fn default_t_samples() -> usize {
    17
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSection {
    /// Levels sampled for the Bergman defect decay fit.
    #[serde(default = "default_expansion_levels")]
    pub levels: Vec<i64>,
    /// Strength of the smooth perturbation away from the reference
    /// metric; keep below 0.5 so positivity is automatic.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

impl Default for ExpansionSection {
    fn default() -> Self {
        Self {
            levels: default_expansion_levels(),
            amplitude: default_amplitude(),
        }
    }
}

fn default_expansion_levels() -> Vec<i64> {
    vec![8, 12, 16, 24, 32]
}

fn default_amplitude() -> f64 {
    0.2
}

fn to_poly(p: &Poly) -> Vec<C64> {
    p.iter().map(|&[re, im]| C64::new(re, im)).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config parse error: {e}")))
    }

    pub fn bundle(&self) -> Result<BundleSpec, CliError> {
        BundleSpec::new(self.bundle.degrees.clone(), self.bundle.twist)
            .map_err(|e| CliError::Config(format!("bundle: {e}")))
    }

    pub fn higgs(&self, bundle: &BundleSpec) -> Result<HiggsSpec, CliError> {
        match &self.higgs.entries {
            None => Ok(HiggsSpec::zero(bundle)),
            Some(entries) => {
                let entries = entries.iter().map(to_poly).collect();
                HiggsSpec::new(bundle, entries).map_err(|e| CliError::Config(format!("higgs: {e}")))
            }
        }
    }

    /// Level for single-level subcommands.
    pub fn level(&self) -> Result<i64, CliError> {
        self.quantization
            .level
            .ok_or_else(|| CliError::Config("quantization.level is required".into()))
    }

    /// Level list for sweeps; falls back to the single level.
    pub fn k_range(&self) -> Result<Vec<i64>, CliError> {
        if let Some(range) = &self.quantization.k_range {
            if range.is_empty() {
                return Err(CliError::Config("quantization.k_range is empty".into()));
            }
            return Ok(range.clone());
        }
        self.level().map(|k| vec![k]).map_err(|_| {
            CliError::Config("quantization.k_range or quantization.level is required".into())
        })
    }

    pub fn params(&self, bundle: &BundleSpec, level: i64) -> Result<QuantizationParams, CliError> {
        let mut params = QuantizationParams::defaults(bundle.rank(), level, self.quantization.tau);
        if let Some(alpha) = self.quantization.alpha {
            params.alpha = alpha;
        }
        if let Some(beta) = self.quantization.beta {
            params.beta = beta;
        }
        params
            .validate()
            .map_err(|e| CliError::Config(format!("quantization: {e}")))?;
        Ok(params)
    }

    pub fn grid(&self) -> Result<higgs_balance::grid::QuadGrid, CliError> {
        higgs_balance::grid::build_grid(self.grid.radial, self.grid.angular)
            .map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    /// Rejects grids too small to integrate the section pairings of the
    /// given levels exactly, naming the required sizes.
    pub fn check_grid(&self, bundle: &BundleSpec, levels: &[i64]) -> Result<(), CliError> {
        for &k in levels {
            let (radial, angular) = bundle
                .exact_grid(k)
                .map_err(|e| CliError::Config(format!("quantization: {e}")))?;
            if self.grid.radial < radial || self.grid.angular < angular {
                return Err(CliError::Config(format!(
                    "grid: level {k} on degrees {:?} needs radial >= {radial} and \
                     angular >= {angular}, got {} x {}",
                    self.bundle.degrees, self.grid.radial, self.grid.angular
                )));
            }
        }
        Ok(())
    }

    pub fn balance_options(&self) -> BalanceOptions {
        BalanceOptions {
            damping: self.solver.damping,
            tolerance: self.solver.tolerance,
            max_iterations: self.solver.max_iterations,
        }
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            tolerance: self.flow.tolerance,
            max_steps: self.flow.max_steps,
            initial_step: self.flow.initial_step,
            max_step: self.flow.max_step,
            ..FlowOptions::default()
        }
    }

    pub fn subbundle(&self, bundle: &BundleSpec) -> Result<(SubbundleSpec, Vec<f64>), CliError> {
        let section = self
            .weight
            .as_ref()
            .ok_or_else(|| CliError::Config("[weight] section is required".into()))?;
        let components = section.components.iter().map(to_poly).collect();
        let sub = SubbundleSpec::new(bundle, section.degree, components)
            .map_err(|e| CliError::Config(format!("weight: {e}")))?;
        if section.t_samples < 2 || section.t_max <= 0.0 {
            return Err(CliError::Config(
                "weight: need t_max > 0 and at least two t samples".into(),
            ));
        }
        let ts = (0..section.t_samples)
            .map(|i| section.t_max * i as f64 / (section.t_samples - 1) as f64)
            .collect();
        Ok((sub, ts))
    }
}
