//! JSON checkpoints: network configuration plus every parameter as flat row-major lists.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FbankConfig, FbankExtractor, FeatureMatrix, FeatureStats};
use crate::snn::{AdLifParams, Network, NetworkConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    weights: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u32,
    network: NetworkConfig,
    layers: Vec<LayerRecord>,
    readout: Vec<f64>,
    classes: Vec<String>,
    features: FbankConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_stats: Option<FeatureStats>,
}

/// A trained network with the class names and feature settings it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub classes: Vec<String>,
    pub features: FbankConfig,
    /// Standardization applied to every feature frame before it reaches the network.
    pub input_stats: Option<FeatureStats>,
}

fn matrix(data: Vec<f64>, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
    let len = data.len();
    Array2::from_shape_vec((rows, cols), data).map_err(|_| {
        Error::Checkpoint(format!("{what}: {len} values, expected {rows}x{cols}"))
    })
}

impl Checkpoint {
    pub fn new(
        network: Network,
        classes: Vec<String>,
        features: FbankConfig,
        input_stats: Option<FeatureStats>,
    ) -> Result<Self> {
        let ckpt = Self {
            network,
            classes,
            features,
            input_stats,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.features.validate()?;
        if self.classes.len() != self.network.n_classes() {
            return Err(Error::Checkpoint(format!(
                "{} class names for {} outputs",
                self.classes.len(),
                self.network.n_classes()
            )));
        }
        if self.features.n_filters != self.network.config.n_inputs {
            return Err(Error::Checkpoint(format!(
                "{} filterbank channels for {} network inputs",
                self.features.n_filters, self.network.config.n_inputs
            )));
        }
        if let Some(stats) = &self.input_stats {
            let n = self.network.config.n_inputs;
            if stats.mean.len() != n || stats.std.len() != n {
                return Err(Error::Checkpoint(format!("input statistics do not have {n} channels")));
            }
            if stats.std.iter().chain(&stats.mean).any(|v| !v.is_finite()) || stats.std.iter().any(|&s| s <= 0.0) {
                return Err(Error::Checkpoint("input statistics must be finite with positive std".into()));
            }
        }
        Ok(())
    }

    /// Applies the stored input standardization, if any.
    pub fn standardize(&self, features: &mut FeatureMatrix) -> Result<()> {
        match &self.input_stats {
            Some(stats) => stats.apply(features),
            None => Ok(()),
        }
    }

    /// Filterbank features of `audio` exactly as the network saw them in training.
    pub fn featurize(&self, audio: &[f64]) -> Result<FeatureMatrix> {
        let mut features = FbankExtractor::new(self.features.clone())?.compute(audio)?;
        self.standardize(&mut features)?;
        Ok(features)
    }

    pub fn to_json(&self) -> Result<String> {
        let flat = |a: &Array1<f64>| a.to_vec();
        let doc = Document {
            format_version: FORMAT_VERSION,
            network: self.network.config.clone(),
            layers: self
                .network
                .layers
                .iter()
                .map(|p| LayerRecord {
                    weights: p.weights.iter().copied().collect(),
                    alpha: flat(&p.alpha),
                    beta: flat(&p.beta),
                    a: flat(&p.a),
                    b: flat(&p.b),
                })
                .collect(),
            readout: self.network.readout.iter().copied().collect(),
            classes: self.classes.clone(),
            features: self.features.clone(),
            input_stats: self.input_stats.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format_version {v}, this build reads {FORMAT_VERSION}"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        let doc: Document = serde_json::from_value(value)?;
        let config = doc.network;
        config.validate()?;
        if doc.layers.len() != config.hidden_sizes.len() {
            return Err(Error::Checkpoint(format!(
                "{} layer records for {} hidden sizes",
                doc.layers.len(),
                config.hidden_sizes.len()
            )));
        }
        let layers = doc
            .layers
            .into_iter()
            .zip(config.layer_inputs().zip(&config.hidden_sizes))
            .enumerate()
            .map(|(l, (rec, (n_in, &n_out)))| {
                Ok(AdLifParams {
                    weights: matrix(rec.weights, n_out, n_in, &format!("layer {l} weights"))?,
                    alpha: Array1::from(rec.alpha),
                    beta: Array1::from(rec.beta),
                    a: Array1::from(rec.a),
                    b: Array1::from(rec.b),
                    v_th: config.v_th,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let readout = matrix(doc.readout, config.n_classes, config.last_hidden(), "readout")?;
        Self::new(
            Network {
                config,
                layers,
                readout,
            },
            doc.classes,
            doc.features,
            doc.input_stats,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
