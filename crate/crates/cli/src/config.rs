use std::path::Path;

use amodal_core::data::CorpusConfig;
use amodal_core::experiment::EvalConfig;
use amodal_core::flow::{ModelConfig, SampleConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult};

pub const SEED_ENV: &str = "AGEN_SEED";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Every knob of a run; missing fields take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies the seed precedence flag > environment > file. An explicit
    /// seed also replaces the training and evaluation seeds.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> CliResult<()> {
        let env = match std::env::var(SEED_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::config(format!("{SEED_ENV}={s} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        if let Some(seed) = flag.or(env) {
            self.seed = seed;
            self.train.seed = seed;
            self.eval.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.data.validate().map_err(CliError::from_core)?;
        self.model.validate().map_err(CliError::from_core)?;
        self.train.validate().map_err(CliError::from_core)?;
        self.sample.validate().map_err(CliError::from_core)?;
        if self.eval.views == 0 {
            return Err(CliError::config("eval.views must be at least 1"));
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(RESOLVED_CONFIG);
        let text = serde_json::to_string_pretty(self).expect("config serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    }
}
