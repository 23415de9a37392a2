use berksurv::cohort::CohortSchema;
use berksurv::disease::HazardKind;
use berksurv::measurement::Registry;
use berksurv::sampler::SamplerConfig;
use berksurv::simgen::SimScenario;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

/// One run's settings. Every field has a default; flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub scenario: SimScenario,
    pub simulate: SimulateConfig,
    /// Upper bound on datasets processed at once; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            scenario: SimScenario::default(),
            simulate: SimulateConfig::default(),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding the worker and cell tables.
    pub cohort: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    /// Truth table for reference fits.
    pub truth: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: HazardKind,
    /// WLM per unit of β.
    pub exposure_unit: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: HazardKind::Ph,
            exposure_unit: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub replicates: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { replicates: 1 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn schema(&self) -> Result<CohortSchema, CliError> {
        match &self.paths.schema {
            None => Ok(CohortSchema::default()),
            Some(p) => {
                require_file(p, "schema")?;
                Ok(CohortSchema::from_file(p)?)
            }
        }
    }

    /// The registry file if given, else `fit_registry.toml` beside a
    /// simulated cohort, else the built-in defaults.
    pub fn registry_for(&self, cohort_dir: Option<&Path>) -> Result<Registry, CliError> {
        if let Some(p) = &self.paths.registry {
            require_file(p, "registry")?;
            return Ok(Registry::from_file(p)?);
        }
        if let Some(dir) = cohort_dir {
            let p = dir.join(berksurv::simgen::FIT_REGISTRY_TOML);
            if p.is_file() {
                return Ok(Registry::from_file(&p)?);
            }
        }
        Ok(Registry::default())
    }

    pub fn output(&self) -> Result<&Path, CliError> {
        self.paths
            .output
            .as_deref()
            .ok_or_else(|| CliError::Usage("no output directory (set paths.output or --out)".into()))
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
    }
}

pub fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} file {} does not exist", p.display())))
    }
}

pub fn require_dir(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} directory {} does not exist", p.display())))
    }
}
