//! Feed-forward networks `f(x) = W^L(φ(W^{L-1}(... φ(W^0 x + b^0) ...)) + b^L`
//! and the scalar objectives built on top of them.
//!
//! The activation is applied after every layer except the last one. Biases
//! are carried even though the Lipschitz machinery ignores them.

mod io;
mod objective;

pub use io::{load_network, network_from_json, network_to_json, save_network, WeightFile};
pub use objective::ObjectiveFunction;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation function family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "tanh" => Ok(ActivationKind::Tanh),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "identity" | "linear" => Ok(ActivationKind::Identity),
            other => Err(Error::invalid("activation", format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::Identity => x,
        }
    }
}

/// Slope restriction `alpha (x-y)^2 <= (x-y)(φ(x)-φ(y)) <= beta (x-y)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationSector {
    pub kind: ActivationKind,
    pub alpha: f64,
    pub beta: f64,
}

impl ActivationSector {
    pub fn new(kind: ActivationKind, alpha: f64, beta: f64) -> Result<Self> {
        let sector = ActivationSector { kind, alpha, beta };
        sector.validate()?;
        Ok(sector)
    }

    /// The tightest global sector of `kind`.
    pub fn for_kind(kind: ActivationKind) -> Self {
        let (alpha, beta) = match kind {
            ActivationKind::Relu => (0.0, 1.0),
            ActivationKind::Tanh => (0.0, 1.0),
            ActivationKind::Sigmoid => (0.0, 0.25),
            ActivationKind::Identity => (1.0, 1.0),
        };
        ActivationSector { kind, alpha, beta }
    }

    pub fn relu() -> Self {
        Self::for_kind(ActivationKind::Relu)
    }

    pub fn identity() -> Self {
        Self::for_kind(ActivationKind::Identity)
    }

    fn validate(&self) -> Result<()> {
        let ActivationSector { kind, alpha, beta } = *self;
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::invalid("activation sector", "slopes must be finite"));
        }
        if kind == ActivationKind::Identity {
            if alpha != 1.0 || beta != 1.0 {
                return Err(Error::invalid("activation sector", "identity requires alpha = beta = 1"));
            }
            return Ok(());
        }
        if !(0.0 <= alpha && alpha < beta) {
            return Err(Error::invalid(
                "activation sector",
                format!("need 0 <= alpha < beta, got ({alpha}, {beta})"),
            ));
        }
        // The sector must actually contain the activation.
        let global = Self::for_kind(kind);
        if alpha > global.alpha || beta < global.beta {
            return Err(Error::invalid(
                "activation sector",
                format!(
                    "({alpha}, {beta}) does not contain the {} slopes ({}, {})",
                    kind.name(),
                    global.alpha,
                    global.beta
                ),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.kind.apply(x)
    }
}

/// One affine layer `x -> W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Self {
        Layer { weights, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// `out = W x + b`, written without allocating.
    #[inline]
    pub(crate) fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().copied());
        let rows = self.weights.nrows();
        for (j, &xj) in x.iter().enumerate() {
            let col = self.weights.column(j);
            let col = col.as_slice();
            for i in 0..rows {
                out[i] += col[i] * xj;
            }
        }
    }
}

/// Dense feed-forward network.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralNetwork {
    layers: Vec<Layer>,
    activation: ActivationSector,
}

impl NeuralNetwork {
    pub fn new(layers: Vec<Layer>, activation: ActivationSector) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionChain {
                layer: 0,
                detail: "network needs at least one layer".into(),
            });
        }
        activation.validate()?;
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::DimensionChain {
                    layer: k,
                    detail: format!(
                        "bias has length {} but weight matrix has {} rows",
                        layer.bias.len(),
                        layer.output_dim()
                    ),
                });
            }
            if layer.input_dim() == 0 || layer.output_dim() == 0 {
                return Err(Error::DimensionChain {
                    layer: k,
                    detail: "empty weight matrix".into(),
                });
            }
            if k > 0 && layers[k - 1].output_dim() != layer.input_dim() {
                return Err(Error::DimensionChain {
                    layer: k,
                    detail: format!(
                        "layer {} outputs {} values but layer {k} expects {}",
                        k - 1,
                        layers[k - 1].output_dim(),
                        layer.input_dim()
                    ),
                });
            }
            if layer.weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("weights of layer {k}"),
                });
            }
            if layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("bias of layer {k}"),
                });
            }
        }
        Ok(NeuralNetwork { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> ActivationSector {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &Layer {
        &self.layers[self.layers.len() - 1]
    }

    /// Total number of hidden neurons `N`.
    pub fn num_neurons(&self) -> usize {
        self.hidden_layers().iter().map(Layer::output_dim).sum()
    }

    /// Layer sizes `[n_0, n_1, ..., n_f]`.
    pub fn arch(&self) -> Vec<usize> {
        let mut arch = vec![self.input_dim()];
        arch.extend(self.layers.iter().map(Layer::output_dim));
        arch
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = Vec::with_capacity(64);
        let mut next = Vec::with_capacity(64);
        cur.extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine_into(&cur, &mut next);
            if k < last {
                let kind = self.activation.kind;
                for v in next.iter_mut() {
                    *v = kind.apply(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}
