//! JSON weight files.
//!
//! ```json
//! {
//!   "arch": [2, 10, 5, 1],
//!   "activation": "relu",
//!   "weights": [ [[w00, w01], ...], ... ],
//!   "biases": [ [b0, ...], ... ]
//! }
//! ```
//!
//! `weights[k]` is the row-major `n_{k+1} x n_k` matrix of layer `k`.
//! Numbers are written with shortest round-trip formatting, so a
//! load/save cycle reproduces every bit of every weight.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ActivationKind, ActivationSector, Layer, NeuralNetwork};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub arch: Vec<usize>,
    pub activation: String,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl WeightFile {
    pub fn from_network(net: &NeuralNetwork) -> Self {
        WeightFile {
            arch: net.arch(),
            activation: net.activation().kind.name().to_string(),
            weights: net
                .layers()
                .iter()
                .map(|l| {
                    l.weights
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect()
                })
                .collect(),
            biases: net
                .layers()
                .iter()
                .map(|l| l.bias.iter().copied().collect())
                .collect(),
        }
    }

    pub fn into_network(self) -> Result<NeuralNetwork> {
        let kind = ActivationKind::parse(&self.activation)?;
        if self.arch.len() < 2 {
            return Err(Error::DimensionChain {
                layer: 0,
                detail: format!("arch must list at least 2 sizes, got {:?}", self.arch),
            });
        }
        let n_layers = self.arch.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(Error::DimensionChain {
                layer: self.weights.len().min(self.biases.len()),
                detail: format!(
                    "arch implies {n_layers} layers, found {} weight matrices and {} bias vectors",
                    self.weights.len(),
                    self.biases.len()
                ),
            });
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (k, (rows, bias)) in self.weights.into_iter().zip(self.biases).enumerate() {
            let (n_in, n_out) = (self.arch[k], self.arch[k + 1]);
            if rows.len() != n_out || rows.iter().any(|r| r.len() != n_in) {
                return Err(Error::DimensionChain {
                    layer: k,
                    detail: format!("expected a {n_out}x{n_in} weight matrix"),
                });
            }
            if bias.len() != n_out {
                return Err(Error::DimensionChain {
                    layer: k,
                    detail: format!("expected bias of length {n_out}, got {}", bias.len()),
                });
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            layers.push(Layer::new(
                DMatrix::from_row_slice(n_out, n_in, &flat),
                DVector::from_vec(bias),
            ));
        }
        NeuralNetwork::new(layers, ActivationSector::for_kind(kind))
    }
}

pub fn network_from_json(text: &str) -> Result<NeuralNetwork> {
    let file: WeightFile = serde_json::from_str(text).map_err(|source| Error::Parse {
        what: "weight file".into(),
        source,
    })?;
    file.into_network()
}

pub fn network_to_json(net: &NeuralNetwork) -> String {
    serde_json::to_string_pretty(&WeightFile::from_network(net)).expect("weight file serializes")
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NeuralNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    network_from_json(&text)
}

pub fn save_network(net: &NeuralNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = network_to_json(net);
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "arch": [2, 3, 1],
        "activation": "relu",
        "weights": [[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], [[0.1, 0.2, 0.30000000000000004]]],
        "biases": [[0.0, -1.0, 1.0], [0.5]]
    }"#;

    #[test]
    fn parses_row_major() {
        let net = network_from_json(SMALL).unwrap();
        assert_eq!(net.arch(), vec![2, 3, 1]);
        assert_eq!(net.layers()[0].weights[(1, 0)], 3.0);
        assert_eq!(net.layers()[0].weights[(0, 1)], 2.0);
        assert_eq!(net.layers()[1].weights[(0, 2)], 0.30000000000000004);
    }

    #[test]
    fn round_trip_modulo_whitespace() {
        let net = network_from_json(SMALL).unwrap();
        let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        assert_eq!(strip(&network_to_json(&net)), strip(SMALL));
    }

    #[test]
    fn distinct_error_cases() {
        assert!(matches!(network_from_json("{ not json"), Err(Error::Parse { .. })));
        let bad_dims = SMALL.replace("[2, 3, 1]", "[2, 4, 1]");
        assert!(matches!(
            network_from_json(&bad_dims),
            Err(Error::DimensionChain { layer: 0, .. })
        ));
        // JSON has no literal for NaN; an overflowing literal is the way a
        // non-finite number reaches us.
        let huge = SMALL.replace("0.5]", "1e999]");
        assert!(matches!(
            network_from_json(&huge),
            Err(Error::NonFinite { .. }) | Err(Error::Parse { .. })
        ));
        let unknown = SMALL.replace("relu", "softplus");
        assert!(matches!(network_from_json(&unknown), Err(Error::Invalid { .. })));
    }
}
