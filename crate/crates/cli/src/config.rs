use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spikekws::datasets::{load_gsc, load_manifest, Manifest, SynthConfig};
use spikekws::decision::DecisionConfig;
use spikekws::energy::EnergyModel;
use spikekws::features::FbankConfig;
use spikekws::snn::NetworkConfig;
use spikekws::training::TrainConfig;
use spikekws::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// JSON-lines manifest (takes precedence over `gsc_root`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Speech Commands root with `validation_list.txt` and `testing_list.txt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gsc_root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Everything a command needs, one TOML section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network initialization, batch order and synthetic corpora.
    pub seed: u64,
    pub features: FbankConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub decision: DecisionConfig,
    pub energy: EnergyModel,
    /// Synthetic corpus settings for `dataset-gen`.
    pub dataset: SynthConfig,
    pub paths: Paths,
}

pub const CONFIG_FILE: &str = "config.toml";

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.decision.validate()?;
        self.energy.validate()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// The manifest named by `paths.manifest`, else the tree at `paths.gsc_root`.
    pub fn manifest(&self) -> Result<Manifest> {
        match (&self.paths.manifest, &self.paths.gsc_root) {
            (Some(m), _) => load_manifest(m),
            (None, Some(root)) => load_gsc(root),
            (None, None) => Err(Error::Config(
                "no dataset: set paths.manifest or paths.gsc_root".into(),
            )),
        }
    }

    /// Writes the effective configuration to `dir/config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.paths.manifest = Some("data/manifest.jsonl".into());
        cfg.network.hidden_sizes = vec![64, 64];
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.features, FbankConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[train]\nepoch = 2\n").unwrap_err();
        assert!(err.contains("epoch"), "{err}");
    }
}
