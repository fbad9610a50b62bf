//! Run configuration: one JSON document, overridden by command-line flags.

use std::path::Path;

use lmpm_core::builder::HeuristicConfig;
use lmpm_core::evaluator::DEFAULT_THRESHOLD;
use lmpm_core::model::ModelConfig;
use lmpm_core::trainer::TrainConfig;
use lmpm_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub scorer: String,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scorer: "token-f1".into(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub heuristic: HeuristicConfig,
    pub eval: EvalConfig,
    pub vocab_min_count: usize,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        };
        if cfg.vocab_min_count == 0 {
            cfg.vocab_min_count = 1;
        }
        Ok(cfg)
    }
}
