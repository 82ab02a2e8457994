//! `RunConfig`: everything one run depends on, as a TOML file.

use std::path::{Path, PathBuf};

use inceptnet::data::{DatasetSpec, StructureScale};
use inceptnet::network::{NetworkSpec, Variant};
use inceptnet::training::TrainConfig;
use inceptnet::{Error, Result};
use serde::{Deserialize, Serialize};

/// Name of the resolved snapshot written next to every run's outputs.
pub const SNAPSHOT: &str = "config.toml";

/// Filter ladder used unless a config asks for another; small enough for CPU runs.
pub const DESK_FILTERS: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub threshold: f64,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = DatasetSpec::synthetic(16, 64, StructureScale::Small);
        let mut network = NetworkSpec::new(Variant::Inceptnet, 3, dataset.input_size);
        network.base_filters = DESK_FILTERS.to_vec();
        Self {
            output_dir: PathBuf::from("runs/default"),
            threshold: 0.5,
            dataset,
            network,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_text(&text)
    }

    /// Canonical text; loading it back gives an equal config.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// One seed drives initialization, dropout, sampling and shuffling.
    pub fn set_seed(&mut self, seed: u64) {
        self.network.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.network.input_shape != self.dataset.input_size {
            return Err(Error::Config(format!(
                "network input {:?} differs from dataset input {:?}",
                self.network.input_shape, self.dataset.input_size
            )));
        }
        if self.network.seed != self.train.seed {
            return Err(Error::Config(format!(
                "network seed {} differs from train seed {}",
                self.network.seed, self.train.seed
            )));
        }
        if let Some(root) = &self.dataset.root {
            if !root.is_dir() {
                return Err(Error::Config(format!("dataset root {} is not a directory", root.display())));
            }
        }
        Ok(())
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(SNAPSHOT);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}
