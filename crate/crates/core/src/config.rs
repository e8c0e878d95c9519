//! The JSON configuration document shared by every subcommand: one section
//! per module plus the sweep grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::ConstraintSet;
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;
use crate::io::{check_schema, read_json, SCHEMA_VERSION};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "MOE2_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Optional in the document; defaults to the current version.
    pub schema_version: u32,
    /// Seed of single-instance commands. A seed given through the
    /// environment or `--seed` also shifts the sweep replicates to
    /// `seed, seed + 1, ...`.
    pub seed: u64,
    /// Default budgets for `cost-report` and `select-subset`.
    pub constraints: Option<ConstraintSet>,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self { schema_version: SCHEMA_VERSION, seed: 0, constraints: None, experiment: ExperimentConfig::default() }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Config = read_json(path)?;
        check_schema(cfg.schema_version)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        if let Some(c) = &self.constraints {
            c.validate()?;
        }
        self.experiment.validate()
    }

    /// Replaces the seed and renumbers the sweep replicates from it.
    pub fn override_seed(&mut self, seed: u64) -> Result<()> {
        let n = self.experiment.seeds.len() as u64;
        if seed.checked_add(n).is_none() {
            return Err(Error::invalid(format!("seed {seed} too large for {n} replicates")));
        }
        self.seed = seed;
        self.experiment.seeds = (seed..seed + n).collect();
        Ok(())
    }

    /// Applies `MOE2_SEED` when it is set.
    pub fn apply_env_seed(&mut self, value: Option<&str>) -> Result<()> {
        match value {
            None => Ok(()),
            Some(v) => {
                let seed = v
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
                self.override_seed(seed)
            }
        }
    }
}
