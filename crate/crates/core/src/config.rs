//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{ComparisonData, ComparisonFunction, LinearBoundParams};
use crate::error::{Error, Result};
use crate::oracle::DEFAULT_ENUMERATION_CAP;
use crate::system::SystemSpec;

/// One experiment. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Budget for `plan` and `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    /// Budget columns for `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<u64>>,
    #[serde(default)]
    pub initial_states: Vec<Vec<f64>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write the per-expansion trace in `plan`.
    #[serde(default)]
    pub trace: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_steps() -> usize {
    200
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Certificate constants, either linear or as a function table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub linear: LinearBoundParams,
    #[serde(default = "default_gamma")]
    pub gamma_star: f64,
    /// Largest horizon in the bound-curve CSV.
    #[serde(default = "default_d_max")]
    pub d_max: usize,
    /// General comparison functions; `linear` is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<FunctionTable>,
    /// Storage function `W`, needed by the Lyapunov diagnostic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage: Option<StorageSpec>,
}

fn default_d_max() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionTable {
    pub alpha_w: FunctionSpec,
    pub bar_alpha_v: FunctionSpec,
    pub bar_alpha_w: FunctionSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// `a·s`
    Linear { a: f64 },
    /// `c·s^p`
    Power { c: f64, p: f64 },
    Zero,
}

impl FunctionSpec {
    pub fn build(&self) -> Result<ComparisonFunction> {
        match *self {
            FunctionSpec::Linear { a } => ComparisonFunction::linear(a),
            FunctionSpec::Power { c, p } => ComparisonFunction::power(c, p),
            FunctionSpec::Zero => Ok(ComparisonFunction::zero()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageSpec {
    /// `W ≡ 0`.
    Zero,
}

impl BoundsConfig {
    /// Assembles the comparison data, attaching `W` when configured.
    pub fn comparison_data(&self) -> Result<ComparisonData> {
        let data = match &self.functions {
            Some(t) => {
                ComparisonData::new(t.alpha_w.build()?, t.bar_alpha_v.build()?, t.bar_alpha_w.build()?)?
            }
            None => ComparisonData::from_linear(&self.linear),
        };
        Ok(match self.storage {
            Some(StorageSpec::Zero) => data.with_zero_storage(),
            None => data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    Fit,
}

/// `certificate = "fit"` or an explicit `[certificate]` table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CertificateConfig {
    Mode(CertificateMode),
    Explicit(ExplicitCertificate),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitCertificate {
    pub k: f64,
    pub lambda: f64,
    pub gamma_star: f64,
    pub d_bar: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_cap")]
    pub cap: u64,
    #[serde(default = "default_max_budget")]
    pub max_budget: u64,
}

fn default_instances() -> usize {
    100
}
fn default_cap() -> u64 {
    DEFAULT_ENUMERATION_CAP
}
fn default_max_budget() -> u64 {
    30
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { instances: default_instances(), cap: default_cap(), max_budget: default_max_budget() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Radius of the target ball in the practical-stability check.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Radius of the starting ball in the practical-stability check.
    #[serde(default = "default_big_delta")]
    pub big_delta: f64,
    /// Relative tolerance of the oracle comparison.
    #[serde(default = "default_oracle_rel")]
    pub oracle_rel: f64,
}

fn default_delta() -> f64 {
    1e-3
}
fn default_big_delta() -> f64 {
    1e6
}
fn default_oracle_rel() -> f64 {
    1e-9
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { delta: default_delta(), big_delta: default_big_delta(), oracle_rel: default_oracle_rel() }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies command-line overrides and revalidates.
    pub fn with_overrides(
        mut self,
        output_dir: Option<PathBuf>,
        seed: Option<u64>,
        threads: Option<usize>,
    ) -> Result<Self> {
        if let Some(dir) = output_dir {
            self.output_dir = dir;
        }
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if threads.is_some() {
            self.threads = threads;
        }
        self.validate()?;
        Ok(self)
    }

    /// Range and consistency checks that do not need the system.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} not in (0, 1]", self.gamma));
        }
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if let Some(b) = &self.budgets {
            if b.is_empty() {
                return bad("budgets must not be empty".into());
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.initial_states.iter().flatten().any(|v| !v.is_finite()) {
            return bad("initial states must be finite".into());
        }
        let t = &self.tolerances;
        if !(t.delta > 0.0 && t.big_delta > 0.0 && t.oracle_rel >= 0.0) {
            return bad("tolerances must be positive".into());
        }
        if let Some(b) = &self.bounds {
            if !(b.gamma_star > 0.0 && b.gamma_star <= 1.0) {
                return bad(format!("bounds.gamma_star = {} not in (0, 1]", b.gamma_star));
            }
        }
        Ok(())
    }

    /// The resolved config as TOML, embedded in every output file.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}
