//! The experiment file: one TOML document with `[data]`, `[model]`, `[train]`
//! and `[experiment]` tables. Every table is optional and falls back to its
//! defaults; unknown keys anywhere are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toalign_core::data::SyntheticConfig;
use toalign_core::nets::ModelConfig;
use toalign_core::train::{Method, TrainConfig};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Output directory, created if absent. `--out` overrides it.
    pub out: PathBuf,
    /// Target-test images rendered as heatmaps per method.
    pub heatmap_images: usize,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            methods: vec![Method::SourceOnly, Method::Dann, Method::ToAlignDann, Method::TiAlignDann],
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("out"),
            heatmap_images: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment: MatrixConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: toalign_core::Error| HarnessError::Config(e.to_string());
        self.data.validate().map_err(config)?;
        self.model.validate().map_err(config)?;
        self.train.validate().map_err(config)?;
        let m = &self.experiment;
        if m.methods.is_empty() || m.seeds.is_empty() {
            return Err(HarnessError::Config("experiment.methods and experiment.seeds must be nonempty".into()));
        }
        if m.methods.iter().collect::<BTreeSet<_>>().len() != m.methods.len() {
            return Err(HarnessError::Config("experiment.methods has duplicates".into()));
        }
        if m.seeds.iter().collect::<BTreeSet<_>>().len() != m.seeds.len() {
            return Err(HarnessError::Config("experiment.seeds has duplicates".into()));
        }
        Ok(())
    }

    /// Training config of one matrix cell.
    pub fn cell(&self, method: Method, seed: u64) -> TrainConfig {
        TrainConfig { method, seed, ..self.train.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn partial_tables_override_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "[train]\neta0 = 0.05\nepochs = 3\n[experiment]\nmethods = [\"DANN\", \"ToAlign_DANNP\"]\nseeds = [7]\n",
        )
        .unwrap();
        assert_eq!(cfg.train.eta0, 0.05);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.tau, 0.75);
        assert_eq!(cfg.experiment.methods, vec![Method::Dann, Method::ToAlignDannp]);
        assert_eq!(cfg.cell(Method::Dann, 7).seed, 7);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            "[train]\nlearning_rate = 0.1\n",
            "[trian]\n",
            "[train]\nmethod = \"DANN\"\n",
            "[experiment]\nmethods = [\"HDA\"]\n",
            "[experiment]\nseeds = []\n",
            "[experiment]\nseeds = [1, 1]\n",
            "[data]\nnum_classes = 9\n",
            "[train]\nbatch_size = 1\n",
            "[model]\ndisc_dropout = 1.0\n",
            "not toml at all [",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.eta0 = 0.02;
        cfg.data.target_background = 0.35;
        cfg.experiment.seeds = vec![3, 1];
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
