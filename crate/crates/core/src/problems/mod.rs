//! Benchmark definitions: a planar two-link arm (open loop), a double
//! integrator and a 6-state quadrotor (closed loop).
//!
//! Each benchmark is a problem file plus a weight file; both ship in
//! `fixtures/` and are embedded in the library. The weights come from
//! [`generate`], which rebuilds them bit for bit.

pub mod generate;
mod run;

pub use run::{run_benchmark, BenchmarkOutcome, OpenLoopOutcome, PropertyOutcome, RunOverrides};

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bnb::Rectangle;
use crate::error::{Error, Result};
use crate::nn::{network_from_json, NeuralNetwork};
use crate::reach::{HalfSpace, LinearDynamics, Polytope, RotatedRectangle};

pub const PROBLEM_SCHEMA_VERSION: u32 = 1;

pub const DOUBLE_INTEGRATOR_INIT: ([f64; 2], [f64; 2]) = ([2.5, -0.25], [3.0, 0.25]);
pub const QUADROTOR_INIT: ([f64; 6], [f64; 6]) = (
    [4.69, 4.65, 2.975, 0.9499, -1e-4, -1e-4],
    [4.71, 4.75, 3.025, 0.9501, 1e-4, 1e-4],
);
pub const ROBOTIC_ARM_INPUT: ([f64; 2], [f64; 2]) = ([PI / 3.0, PI / 3.0], [2.0 * PI / 3.0, 2.0 * PI / 3.0]);

pub const BENCHMARK_NAMES: [&str; 3] = ["robotic_arm", "double_integrator", "quadrotor"];

pub(crate) fn double_integrator_matrices() -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
        DVector::zeros(2),
    )
}

/// `A = I + Δt [[0, I], [0, 0]]`, `B = Δt [0; diag(g, -g, 1)]`,
/// `c = Δt (0, 0, 0, 0, 0, -g)`.
pub(crate) fn quadrotor_matrices() -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let dt = generate::QUADROTOR_DT;
    let g = generate::GRAVITY;
    let mut a = DMatrix::identity(6, 6);
    let mut b = DMatrix::zeros(6, 3);
    for k in 0..3 {
        a[(k, k + 3)] = dt;
    }
    b[(3, 0)] = dt * g;
    b[(4, 1)] = -dt * g;
    b[(5, 2)] = dt;
    let mut c = DVector::zeros(6);
    c[5] = -dt * g;
    (a, b, c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSpec {
    pub fn to_rectangle(&self) -> Result<Rectangle> {
        Rectangle::new(self.lower.clone(), self.upper.clone())
    }
}

/// Row-major matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    pub dt: f64,
    pub horizon: usize,
}

fn matrix(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::invalid(what, "matrix rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl DynamicsSpec {
    pub fn to_dynamics(&self) -> Result<LinearDynamics> {
        LinearDynamics::time_invariant(
            matrix(&self.a, "dynamics A")?,
            matrix(&self.b, "dynamics B")?,
            self.c.clone().map(DVector::from_vec),
            self.horizon,
            self.dt,
        )
    }
}

/// Output directions for open-loop problems: `uniform` evenly spaced unit
/// vectors (2-D outputs only) and optionally the `±` principal axes of
/// sampled outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionSpec {
    #[serde(default)]
    pub uniform: usize,
    #[serde(default)]
    pub pca: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemKind {
    ClosedLoop {
        dynamics: DynamicsSpec,
        initial_set: BoxSpec,
    },
    OpenLoop {
        input_set: BoxSpec,
        directions: DirectionSpec,
    },
}

/// On-disk problem description. `weights` is relative to the problem file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub name: String,
    pub weights: String,
    #[serde(flatten)]
    pub kind: ProblemKind,
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goal: Vec<HalfSpace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub avoid: Vec<HalfSpace>,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: ProblemFile = serde_json::from_str(text).map_err(|source| Error::Parse {
            what: "problem file".into(),
            source,
        })?;
        if p.schema_version != PROBLEM_SCHEMA_VERSION {
            return Err(Error::invalid(
                "problem file",
                format!("schema_version {} is not supported (expected {PROBLEM_SCHEMA_VERSION})", p.schema_version),
            ));
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serializes")
    }

    pub fn goal_set(&self) -> Option<Polytope> {
        (!self.goal.is_empty()).then(|| Polytope {
            halfspaces: self.goal.clone(),
        })
    }

    pub fn avoid_set(&self) -> Option<Polytope> {
        (!self.avoid.is_empty()).then(|| Polytope {
            halfspaces: self.avoid.clone(),
        })
    }

    /// Check the problem against its network.
    pub fn validate(&self, net: &NeuralNetwork) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("problem file", format!("epsilon must be positive, got {}", self.epsilon)));
        }
        match &self.kind {
            ProblemKind::ClosedLoop { dynamics, initial_set } => {
                let d = dynamics.to_dynamics()?;
                d.check_controller(net)?;
                let init = initial_set.to_rectangle()?;
                if init.dim() != d.state_dim() {
                    return Err(Error::InputShape {
                        expected: d.state_dim(),
                        got: init.dim(),
                    });
                }
            }
            ProblemKind::OpenLoop { input_set, directions } => {
                let input = input_set.to_rectangle()?;
                if input.dim() != net.input_dim() {
                    return Err(Error::InputShape {
                        expected: net.input_dim(),
                        got: input.dim(),
                    });
                }
                if directions.uniform > 0 && net.output_dim() != 2 {
                    return Err(Error::invalid("problem file", "uniform directions need a 2-D output"));
                }
                if directions.uniform == 0 && !directions.pca {
                    return Err(Error::invalid("problem file", "no output directions requested"));
                }
            }
        }
        Ok(())
    }

    pub fn initial_set(&self) -> Option<Result<RotatedRectangle>> {
        match &self.kind {
            ProblemKind::ClosedLoop { initial_set, .. } => {
                Some(initial_set.to_rectangle().map(RotatedRectangle::axis_aligned))
            }
            ProblemKind::OpenLoop { .. } => None,
        }
    }
}

/// Machine-checkable expectations attached to a benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "property", rename_all = "snake_case")]
pub enum ExpectedProperty {
    /// Exact number of branch-and-bound problems solved.
    SolveCount { count: usize },
    /// Every solve ended `Converged`.
    AllConverged,
    /// Every converged solve has `BUB - BLB <= ε`.
    GapWithinEpsilon,
    /// Fresh simulated trajectories (or sampled outputs) stay inside every
    /// reported set, inflated by `tol`.
    Containment { samples: usize, seed: u64, tol: f64 },
    /// `horizon · dt` in seconds.
    HorizonSeconds { seconds: f64 },
}

#[derive(Clone, Debug)]
pub struct BenchmarkSpec {
    pub name: String,
    pub problem: ProblemFile,
    pub network: Arc<NeuralNetwork>,
    pub expected: Vec<ExpectedProperty>,
}

const DI_PROBLEM: &str = include_str!("../../fixtures/double_integrator.problem.json");
const DI_WEIGHTS: &str = include_str!("../../fixtures/double_integrator.json");
const QUAD_PROBLEM: &str = include_str!("../../fixtures/quadrotor.problem.json");
const QUAD_WEIGHTS: &str = include_str!("../../fixtures/quadrotor.json");
const ARM_PROBLEM: &str = include_str!("../../fixtures/robotic_arm.problem.json");
const ARM_WEIGHTS: &str = include_str!("../../fixtures/robotic_arm.json");

/// Committed weight-file text for a fixture name.
pub fn fixture_weights(name: &str) -> Option<&'static str> {
    match name {
        "double_integrator" => Some(DI_WEIGHTS),
        "quadrotor" => Some(QUAD_WEIGHTS),
        "robotic_arm" => Some(ARM_WEIGHTS),
        _ => None,
    }
}

/// Committed problem-file text for a fixture name.
pub fn fixture_problem(name: &str) -> Option<&'static str> {
    match name {
        "double_integrator" => Some(DI_PROBLEM),
        "quadrotor" => Some(QUAD_PROBLEM),
        "robotic_arm" => Some(ARM_PROBLEM),
        _ => None,
    }
}

fn embedded(name: &str, expected: Vec<ExpectedProperty>) -> BenchmarkSpec {
    let problem = ProblemFile::from_json(fixture_problem(name).expect("known fixture")).expect("embedded problem parses");
    let network = network_from_json(fixture_weights(name).expect("known fixture")).expect("embedded weights parse");
    problem.validate(&network).expect("embedded problem matches its network");
    BenchmarkSpec {
        name: name.to_string(),
        problem,
        network: Arc::new(network),
        expected,
    }
}

/// Open loop: joint angles in `[π/3, 2π/3]²` to the end-effector position;
/// 60 uniform directions plus the 4 principal axes of sampled outputs.
pub fn robotic_arm_spec() -> BenchmarkSpec {
    embedded(
        "robotic_arm",
        vec![
            ExpectedProperty::SolveCount { count: 64 },
            ExpectedProperty::AllConverged,
            ExpectedProperty::GapWithinEpsilon,
            ExpectedProperty::Containment {
                samples: 10_000,
                seed: 1001,
                tol: 1e-9,
            },
        ],
    )
}

/// Closed loop, 5 steps, `A = [[1,1],[0,1]]`, `B = (0.5, 1)^T`.
pub fn double_integrator_spec() -> BenchmarkSpec {
    embedded(
        "double_integrator",
        vec![
            ExpectedProperty::SolveCount { count: 20 },
            ExpectedProperty::AllConverged,
            ExpectedProperty::GapWithinEpsilon,
            ExpectedProperty::Containment {
                samples: 10_000,
                seed: 1002,
                tol: 1e-9,
            },
        ],
    )
}

/// Closed loop, 12 steps of `Δt = 0.1` from the printed initial box.
pub fn quadrotor_spec() -> BenchmarkSpec {
    embedded(
        "quadrotor",
        vec![
            ExpectedProperty::SolveCount { count: 144 },
            ExpectedProperty::GapWithinEpsilon,
            ExpectedProperty::HorizonSeconds { seconds: 1.2 },
            ExpectedProperty::Containment {
                samples: 10_000,
                seed: 1003,
                tol: 1e-9,
            },
        ],
    )
}

pub fn benchmark(name: &str) -> Option<BenchmarkSpec> {
    match name {
        "robotic_arm" => Some(robotic_arm_spec()),
        "double_integrator" => Some(double_integrator_spec()),
        "quadrotor" => Some(quadrotor_spec()),
        _ => None,
    }
}

/// Problem-file text for the built-in benchmarks, as committed.
pub fn problem_json(name: &str) -> Option<String> {
    let (di_a, di_b, _) = double_integrator_matrices();
    let (q_a, q_b, q_c) = quadrotor_matrices();
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() };
    let file = match name {
        "double_integrator" => ProblemFile {
            schema_version: PROBLEM_SCHEMA_VERSION,
            name: name.into(),
            weights: "double_integrator.json".into(),
            kind: ProblemKind::ClosedLoop {
                dynamics: DynamicsSpec {
                    a: rows(&di_a),
                    b: rows(&di_b),
                    c: None,
                    dt: 1.0,
                    horizon: 5,
                },
                initial_set: BoxSpec {
                    lower: DOUBLE_INTEGRATOR_INIT.0.to_vec(),
                    upper: DOUBLE_INTEGRATOR_INIT.1.to_vec(),
                },
            },
            epsilon: 0.01,
            samples: 100,
            seed: 0,
            goal: vec![],
            avoid: vec![],
        },
        "quadrotor" => ProblemFile {
            schema_version: PROBLEM_SCHEMA_VERSION,
            name: name.into(),
            weights: "quadrotor.json".into(),
            kind: ProblemKind::ClosedLoop {
                dynamics: DynamicsSpec {
                    a: rows(&q_a),
                    b: rows(&q_b),
                    c: Some(q_c.iter().copied().collect()),
                    dt: generate::QUADROTOR_DT,
                    horizon: 12,
                },
                initial_set: BoxSpec {
                    lower: QUADROTOR_INIT.0.to_vec(),
                    upper: QUADROTOR_INIT.1.to_vec(),
                },
            },
            epsilon: 0.1,
            samples: 100,
            seed: 0,
            goal: vec![],
            // Stay above the ground plane z = 0.
            avoid: vec![HalfSpace {
                normal: vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
                offset: 0.0,
            }],
        },
        "robotic_arm" => ProblemFile {
            schema_version: PROBLEM_SCHEMA_VERSION,
            name: name.into(),
            weights: "robotic_arm.json".into(),
            kind: ProblemKind::OpenLoop {
                input_set: BoxSpec {
                    lower: ROBOTIC_ARM_INPUT.0.to_vec(),
                    upper: ROBOTIC_ARM_INPUT.1.to_vec(),
                },
                directions: DirectionSpec { uniform: 60, pca: true },
            },
            epsilon: 0.01,
            samples: 1000,
            seed: 0,
            goal: vec![],
            avoid: vec![],
        },
        _ => return None,
    };
    Some(file.to_json() + "\n")
}
