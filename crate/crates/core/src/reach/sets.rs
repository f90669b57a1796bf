use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bnb::Rectangle;
use crate::error::{Error, Result};

pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// `max_ij |(R^T R - I)_ij|`.
pub fn orthonormality_error(r: &DMatrix<f64>) -> f64 {
    let g = r.transpose() * r;
    let n = g.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// `{R y : y ∈ bounds}` with orthonormal `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedRectangle {
    pub rotation: DMatrix<f64>,
    pub bounds: Rectangle,
}

impl RotatedRectangle {
    pub fn new(rotation: DMatrix<f64>, bounds: Rectangle) -> Result<Self> {
        let n = bounds.dim();
        if rotation.shape() != (n, n) {
            return Err(Error::invalid(
                "rotated rectangle",
                format!("rotation is {:?} but the box has dimension {n}", rotation.shape()),
            ));
        }
        let err = orthonormality_error(&rotation);
        if !(err <= ORTHONORMAL_TOL) {
            return Err(Error::invalid(
                "rotated rectangle",
                format!("rotation is not orthonormal (error {err:e})"),
            ));
        }
        Ok(RotatedRectangle { rotation, bounds })
    }

    pub fn axis_aligned(bounds: Rectangle) -> Self {
        let n = bounds.dim();
        RotatedRectangle {
            rotation: DMatrix::identity(n, n),
            bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Coordinates `R^T x`.
    pub fn local(&self, x: &[f64]) -> Vec<f64> {
        (self.rotation.transpose() * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    pub fn to_world(&self, y: &[f64]) -> Vec<f64> {
        (&self.rotation * DVector::from_column_slice(y)).as_slice().to_vec()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim() && self.bounds.contains(&self.local(x), tol)
    }

    /// `max_{x in set} d^T x`.
    pub fn support(&self, d: &[f64]) -> f64 {
        let rd = self.rotation.transpose() * DVector::from_column_slice(d);
        let c = self.bounds.center();
        let r = self.bounds.radius();
        (0..self.dim()).map(|i| rd[i] * c[i] + rd[i].abs() * r[i]).sum()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.volume()
    }

    /// All `2^n` corners in world coordinates.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        (0..1usize << self.dim())
            .map(|mask| self.to_world(&self.bounds.vertex(mask)))
            .collect()
    }
}

/// `normal^T x <= offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Intersection of half-spaces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub halfspaces: Vec<HalfSpace>,
}

impl Polytope {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.halfspaces
            .iter()
            .all(|h| h.normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() <= h.offset + tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetCheck {
    /// Proven.
    Holds,
    /// Proven false.
    Violated,
    /// The sufficient test was inconclusive.
    Unknown,
}

/// `set ⊆ goal`, exact through support functions.
pub fn check_inside(set: &RotatedRectangle, goal: &Polytope) -> SetCheck {
    if goal.halfspaces.iter().all(|h| set.support(&h.normal) <= h.offset) {
        SetCheck::Holds
    } else {
        SetCheck::Violated
    }
}

/// `set ∩ avoid = ∅`, proven when one face of `avoid` separates the two.
/// A failed test proves nothing.
pub fn check_disjoint(set: &RotatedRectangle, avoid: &Polytope) -> SetCheck {
    let separated = avoid.halfspaces.iter().any(|h| {
        let neg: Vec<f64> = h.normal.iter().map(|v| -v).collect();
        -set.support(&neg) > h.offset
    });
    if separated {
        SetCheck::Holds
    } else {
        SetCheck::Unknown
    }
}
