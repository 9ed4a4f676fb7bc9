//! Versioned JSON container for trained weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::NetworkWeights;
use super::params::Parameters;
use crate::dataset::Normalization;
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "occupancy-detector-weights";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    format: String,
    version: u32,
    config: NetworkConfig,
    normalization: Normalization,
    tensors: Vec<Tensor>,
}

pub fn weights_to_json(weights: &NetworkWeights) -> Result<String> {
    let file = WeightsFile {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        config: weights.config.clone(),
        normalization: weights.normalization,
        tensors: weights
            .params
            .slices()
            .into_iter()
            .map(|(name, shape, data)| Tensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn weights_from_json(text: &str) -> Result<NetworkWeights> {
    let file: WeightsFile =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("unreadable weights file: {e}")))?;
    if file.format != FORMAT_NAME {
        return Err(Error::Format(format!("not a weights file (format {:?})", file.format)));
    }
    if file.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "weights version {} is not supported (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    file.config.validate()?;
    let tensors: Vec<(String, Vec<usize>, Vec<f64>)> =
        file.tensors.into_iter().map(|t| (t.name, t.shape, t.data)).collect();
    let params = Parameters::from_tensors(&file.config, &tensors)?;
    if !params.is_finite() {
        return Err(Error::Format("weights contain non-finite values".into()));
    }
    NetworkWeights::new(file.config, file.normalization, params)
}

pub fn save_weights(path: &Path, weights: &NetworkWeights) -> Result<()> {
    std::fs::write(path, weights_to_json(weights)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    weights_from_json(&text)
}

/// Loads weights and checks they were built for `expected`.
pub fn load_weights_for(path: &Path, expected: &NetworkConfig) -> Result<NetworkWeights> {
    let w = load_weights(path)?;
    if &w.config != expected {
        let got = super::params::tensor_layout(&w.config);
        let want = super::params::tensor_layout(expected);
        let mismatch = want
            .iter()
            .zip(&got)
            .find(|(a, b)| a != b)
            .map(|((name, ws), (_, gs))| format!("tensor {name}: file has shape {gs:?}, expected {ws:?}"))
            .unwrap_or_else(|| format!("tensor count {} vs expected {}", got.len(), want.len()));
        return Err(Error::Structural(format!("weights do not match the network config: {mismatch}")));
    }
    Ok(w)
}
