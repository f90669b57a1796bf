//! Interval bounds on hidden pre-activations, used to localize the
//! per-neuron slope sectors to the input set.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bnb::Rectangle;
use crate::nn::{ActivationKind, ActivationSector, NeuralNetwork};

/// One `[lo, hi]` per hidden neuron, layer by layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreactivationBounds {
    pub intervals: Vec<(f64, f64)>,
}

impl PreactivationBounds {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Propagate `{R y : y ∈ box}` through every hidden layer with the
/// midpoint/radius rule `W m + b ± |W| r`.
pub fn preactivation_intervals(
    network: &NeuralNetwork,
    input_box: &Rectangle,
    rotation: &DMatrix<f64>,
) -> PreactivationBounds {
    let (mut mid, mut rad) = affine_interval(rotation, None, &input_box.center(), &input_box.radius());
    let kind = network.activation().kind;
    let mut intervals = Vec::with_capacity(network.num_neurons());
    for layer in network.hidden_layers() {
        let (m, r) = affine_interval(&layer.weights, Some(layer.bias.as_slice()), &mid, &rad);
        let mut next_mid = Vec::with_capacity(m.len());
        let mut next_rad = Vec::with_capacity(m.len());
        for (mi, ri) in m.iter().zip(&r) {
            let (lo, hi) = (mi - ri, mi + ri);
            intervals.push((lo, hi));
            // Activations are monotone non-decreasing.
            let (alo, ahi) = (kind.apply(lo), kind.apply(hi));
            next_mid.push(0.5 * (alo + ahi));
            next_rad.push(0.5 * (ahi - alo));
        }
        mid = next_mid;
        rad = next_rad;
    }
    PreactivationBounds { intervals }
}

fn affine_interval(w: &DMatrix<f64>, b: Option<&[f64]>, mid: &[f64], rad: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let rows = w.nrows();
    let mut m = b.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; rows]);
    let mut r = vec![0.0; rows];
    for j in 0..w.ncols() {
        for i in 0..rows {
            let wij = w[(i, j)];
            m[i] += wij * mid[j];
            r[i] += wij.abs() * rad[j];
        }
    }
    // The midpoint rounding can push a true value a few ulps outside; widen
    // the radius by a relative hair so the interval stays an enclosure.
    for (ri, mi) in r.iter_mut().zip(&m) {
        *ri += 4.0 * f64::EPSILON * (ri.abs() + mi.abs());
    }
    (m, r)
}

/// Per-neuron slope sectors for ReLU: always-on neurons get `(1, 1)`,
/// always-off neurons `(0, 0)`, undecided ones the full `(0, 1)`. Other
/// activations keep their global sector.
pub fn sector_localize(bounds: &PreactivationBounds, activation: ActivationSector) -> Vec<(f64, f64)> {
    match activation.kind {
        ActivationKind::Relu => bounds
            .intervals
            .iter()
            .map(|&(lo, hi)| {
                if lo >= 0.0 {
                    (1.0, 1.0)
                } else if hi <= 0.0 {
                    (0.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            })
            .collect(),
        _ => vec![(activation.alpha, activation.beta); bounds.len()],
    }
}
