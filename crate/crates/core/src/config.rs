//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::centrality::CentralityParams;
use crate::error::{Error, Result};
use crate::features::{default_blocklist, default_continuous, ImputeParams};
use crate::geo::{AisSchema, RadiusPolicy, RegistrySchema};
use crate::model::ForestParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// AIS message dump; required by `ingest`.
    pub ais: Option<PathBuf>,
    /// Port registry.
    pub ports: PathBuf,
    /// Precomputed voyage list, used by `visits` when there is no AIS source.
    pub voyages: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisitsConfig {
    pub min_messages: usize,
    /// Keep only vessels whose modal type is cargo.
    pub cargo_only: bool,
}

impl Default for VisitsConfig {
    fn default() -> Self {
        VisitsConfig {
            min_messages: 1,
            cargo_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub missing_threshold: f64,
    pub blocklist: Vec<String>,
    pub continuous: Vec<String>,
    pub impute: ImputeParams,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            missing_threshold: 0.5,
            blocklist: default_blocklist(),
            continuous: default_continuous(),
            impute: ImputeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Fraction of ports labeled central.
    pub k: f64,
    pub train_fraction: f64,
    /// Label permutations for the chance-level AUC check.
    pub permutation_trials: usize,
    pub forest: ForestParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 0.10,
            train_fraction: 0.75,
            permutation_trials: 1000,
            forest: ForestParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Training rows kept as the marginalization background.
    pub background_cap: usize,
    /// Use exact enumeration when the feature count is at most this.
    pub exact_max_features: usize,
    pub shap_permutations: usize,
    pub sage_permutations: usize,
    /// Test-set ports explained locally.
    pub max_ports: usize,
    /// Partial dependence is computed for this many top SAGE features.
    pub pdp_features: usize,
    pub pdp_grid_points: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            background_cap: 512,
            exact_max_features: 10,
            shap_permutations: 2048,
            sage_permutations: 4096,
            max_ports: 20,
            pdp_features: 3,
            pdp_grid_points: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub top_k: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { top_k: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub output: Option<PathBuf>,
    /// Master seed; split, forest and explanation seeds derive from it.
    pub seed: u64,
    pub ais_schema: AisSchema,
    pub registry_schema: RegistrySchema,
    pub radius_policy: RadiusPolicy,
    pub visits: VisitsConfig,
    pub centrality: CentralityParams,
    pub features: FeaturesConfig,
    pub model: ModelConfig,
    pub explain: ExplainConfig,
    pub report: ReportConfig,
}

/// Offsets added to the master seed for each consumer.
pub mod seeds {
    pub const SPLIT: u64 = 0;
    pub const FOREST: u64 = 1;
    pub const PERMUTATION: u64 = 2;
    pub const BACKGROUND: u64 = 3;
    pub const SHAP: u64 = 4;
    pub const SAGE: u64 = 5;
    pub const EXPLAINED: u64 = 6;
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative input paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.input.ais.as_mut() {
            fix(p);
        }
        if let Some(p) = self.input.voyages.as_mut() {
            fix(p);
        }
        if let Some(p) = self.output.as_mut() {
            fix(p);
        }
        if !self.input.ports.as_os_str().is_empty() {
            fix(&mut self.input.ports);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed_for(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    /// SHA-256 of the configuration with input and output locations removed,
    /// so relocating a run directory keeps its identity.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.input = InputConfig::default();
        c.output = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.k > 0.0 && m.k < 1.0) {
            return Err(Error::Config(format!("model.k must be in (0, 1), got {}", m.k)));
        }
        if !(m.train_fraction > 0.0 && m.train_fraction < 1.0) {
            return Err(Error::Config("model.train_fraction must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.features.missing_threshold) {
            return Err(Error::Config("features.missing_threshold must be in [0, 1]".into()));
        }
        let c = &self.centrality;
        if !(c.damping > 0.0 && c.damping < 1.0) {
            return Err(Error::Config("centrality.damping must be in (0, 1)".into()));
        }
        if self.explain.background_cap == 0 {
            return Err(Error::Config("explain.background_cap must be positive".into()));
        }
        Ok(())
    }
}
