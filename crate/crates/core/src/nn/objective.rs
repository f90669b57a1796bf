use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{dot, NeuralNetwork};
use crate::error::{Error, Result};

/// Scalar objective `J(y) = c^T (A R y + B f(R y))`.
///
/// In open-loop mode `A` and `B` are absent and `J(x) = c^T f(x)`. The row
/// vectors `c^T A R` and `c^T B` are cached at construction, so evaluation
/// costs one network pass plus two dot products.
#[derive(Clone, Debug)]
pub struct ObjectiveFunction {
    network: Arc<NeuralNetwork>,
    direction: DVector<f64>,
    state_matrix: Option<DMatrix<f64>>,
    input_matrix: Option<DMatrix<f64>>,
    rotation: DMatrix<f64>,
    rotation_is_identity: bool,
    linear_row: Vec<f64>,
    output_row: Vec<f64>,
}

impl ObjectiveFunction {
    /// `J(x) = c^T f(x)`.
    pub fn open_loop(network: Arc<NeuralNetwork>, direction: DVector<f64>) -> Result<Self> {
        if direction.len() != network.output_dim() {
            return Err(Error::invalid(
                "objective",
                format!(
                    "direction has length {} but the network has {} outputs",
                    direction.len(),
                    network.output_dim()
                ),
            ));
        }
        let n = network.input_dim();
        Ok(ObjectiveFunction {
            linear_row: vec![0.0; n],
            output_row: direction.iter().copied().collect(),
            rotation: DMatrix::identity(n, n),
            rotation_is_identity: true,
            state_matrix: None,
            input_matrix: None,
            direction,
            network,
        })
    }

    /// `J(y) = c^T (A R y + B f(R y))`.
    pub fn closed_loop(
        network: Arc<NeuralNetwork>,
        direction: DVector<f64>,
        state_matrix: DMatrix<f64>,
        input_matrix: DMatrix<f64>,
        rotation: DMatrix<f64>,
    ) -> Result<Self> {
        let nx = network.input_dim();
        let nu = network.output_dim();
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::invalid("objective", msg)) };
        check(
            state_matrix.shape() == (nx, nx),
            format!("A must be {nx}x{nx}, got {:?}", state_matrix.shape()),
        )?;
        check(
            input_matrix.shape() == (nx, nu),
            format!("B must be {nx}x{nu}, got {:?}", input_matrix.shape()),
        )?;
        check(
            rotation.shape() == (nx, nx),
            format!("R must be {nx}x{nx}, got {:?}", rotation.shape()),
        )?;
        check(
            direction.len() == nx,
            format!("direction must have length {nx}, got {}", direction.len()),
        )?;
        for (name, m) in [("A", &state_matrix), ("B", &input_matrix), ("R", &rotation)] {
            check(m.iter().all(|v| v.is_finite()), format!("{name} has non-finite entries"))?;
        }
        let ct = direction.transpose();
        let linear_row = (&ct * &state_matrix * &rotation).iter().copied().collect();
        let output_row = (&ct * &input_matrix).iter().copied().collect();
        let rotation_is_identity = rotation == DMatrix::identity(nx, nx);
        Ok(ObjectiveFunction {
            network,
            direction,
            state_matrix: Some(state_matrix),
            input_matrix: Some(input_matrix),
            rotation,
            rotation_is_identity,
            linear_row,
            output_row,
        })
    }

    pub fn network(&self) -> &NeuralNetwork {
        &self.network
    }

    pub fn network_arc(&self) -> &Arc<NeuralNetwork> {
        &self.network
    }

    pub fn direction(&self) -> &DVector<f64> {
        &self.direction
    }

    pub fn state_matrix(&self) -> Option<&DMatrix<f64>> {
        self.state_matrix.as_ref()
    }

    pub fn input_matrix(&self) -> Option<&DMatrix<f64>> {
        self.input_matrix.as_ref()
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn is_closed_loop(&self) -> bool {
        self.state_matrix.is_some()
    }

    /// `c^T A R` (zeros in open loop).
    pub fn linear_row(&self) -> &[f64] {
        &self.linear_row
    }

    /// `c^T B` (just `c^T` in open loop).
    pub fn output_row(&self) -> &[f64] {
        &self.output_row
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    /// Same objective with `c` replaced by `-c`.
    pub fn negated(&self) -> Self {
        let mut neg = self.clone();
        neg.direction = -&neg.direction;
        neg.linear_row.iter_mut().for_each(|v| *v = -*v);
        neg.output_row.iter_mut().for_each(|v| *v = -*v);
        neg
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: y.len(),
            });
        }
        Ok(self.eval_unchecked(y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, y: &[f64]) -> f64 {
        let fx = if self.rotation_is_identity {
            self.network.forward_unchecked(y)
        } else {
            let x = &self.rotation * DVector::from_column_slice(y);
            self.network.forward_unchecked(x.as_slice())
        };
        dot(&self.linear_row, y) + dot(&self.output_row, &fx)
    }
}
