use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BenchmarkSpec, ExpectedProperty, ProblemFile, ProblemKind};
use crate::bnb::{BnbConfig, BnbResult, BnbStatus, Rectangle};
use crate::error::Result;
use crate::lipschitz::CertifyMethod;
use crate::reach::{
    pca_directions, reach, reach_open_loop, simulate, uniform_directions_2d, DirectionPolytope, ReachConfig,
    ReachabilityResult,
};

/// Command-line style overrides of a problem file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOverrides {
    pub epsilon: Option<f64>,
    pub branch_batch: Option<usize>,
    pub refine_splits: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub identity_rotation: bool,
    pub lipschitz_method: CertifyMethod,
    pub parallel: bool,
}

impl Default for RunOverrides {
    fn default() -> Self {
        RunOverrides {
            epsilon: None,
            branch_batch: None,
            refine_splits: None,
            seed: None,
            samples: None,
            identity_rotation: false,
            lipschitz_method: CertifyMethod::Sdp,
            parallel: true,
        }
    }
}

impl RunOverrides {
    pub fn bnb_config(&self, problem: &ProblemFile) -> BnbConfig {
        let d = BnbConfig::default();
        BnbConfig {
            epsilon: self.epsilon.unwrap_or(problem.epsilon),
            branch_batch: self.branch_batch.unwrap_or(d.branch_batch),
            refine_splits: self.refine_splits.unwrap_or(d.refine_splits),
            parallel: self.parallel,
            ..d
        }
    }

    pub fn reach_config(&self, problem: &ProblemFile) -> ReachConfig {
        ReachConfig {
            bnb: self.bnb_config(problem),
            samples: self.samples.unwrap_or(problem.samples),
            seed: self.seed.unwrap_or(problem.seed),
            identity_rotation: self.identity_rotation,
            lipschitz_method: self.lipschitz_method,
            localize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopOutcome {
    pub input: Rectangle,
    pub polytope: DirectionPolytope,
    /// Outputs of the sampled inputs used for PCA and warm starts.
    pub samples: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyOutcome {
    pub property: ExpectedProperty,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub name: String,
    pub epsilon: f64,
    pub reach: Option<ReachabilityResult>,
    pub open_loop: Option<OpenLoopOutcome>,
    pub checks: Vec<PropertyOutcome>,
    pub wall_time_secs: f64,
}

impl BenchmarkOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn results(&self) -> Vec<&BnbResult> {
        match (&self.reach, &self.open_loop) {
            (Some(r), _) => r.solves.iter().map(|s| &s.result).collect(),
            (_, Some(o)) => o.polytope.results.iter().collect(),
            _ => Vec::new(),
        }
    }
}

fn uniform_points(rect: &Rectangle, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            rect.lower()
                .iter()
                .zip(rect.upper())
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect()
        })
        .collect()
}

pub fn run_benchmark(spec: &BenchmarkSpec, overrides: &RunOverrides) -> Result<BenchmarkOutcome> {
    let start = Instant::now();
    let problem = &spec.problem;
    problem.validate(&spec.network)?;
    let cfg = overrides.reach_config(problem);
    let (reach_result, open_loop) = match &problem.kind {
        ProblemKind::ClosedLoop { dynamics, .. } => {
            let d = dynamics.to_dynamics()?;
            let init = problem.initial_set().expect("closed-loop problem")?;
            (Some(reach(&d, &spec.network, &init, &cfg)?), None)
        }
        ProblemKind::OpenLoop { input_set, directions } => {
            let input = input_set.to_rectangle()?;
            let inputs = uniform_points(&input, cfg.samples, cfg.seed);
            let samples: Vec<Vec<f64>> = inputs.iter().map(|x| spec.network.forward(x)).collect::<Result<_>>()?;
            let mut dirs = uniform_directions_2d(directions.uniform);
            if directions.pca {
                let basis = pca_directions(&samples, spec.network.output_dim());
                for j in 0..basis.rotation.ncols() {
                    let col: Vec<f64> = basis.rotation.column(j).iter().copied().collect();
                    dirs.push(col.iter().map(|v| -v).collect());
                    dirs.push(col);
                }
            }
            let polytope = reach_open_loop(&spec.network, &input, &dirs, cfg.lipschitz_method, &cfg.bnb, &inputs)?;
            (
                None,
                Some(OpenLoopOutcome {
                    input,
                    polytope,
                    samples,
                }),
            )
        }
    };
    let mut outcome = BenchmarkOutcome {
        name: spec.name.clone(),
        epsilon: cfg.bnb.epsilon,
        reach: reach_result,
        open_loop,
        checks: Vec::new(),
        wall_time_secs: 0.0,
    };
    outcome.checks = spec.expected.iter().map(|p| check(spec, &outcome, p, cfg.bnb.parallel)).collect::<Result<_>>()?;
    outcome.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(outcome)
}

fn check(spec: &BenchmarkSpec, out: &BenchmarkOutcome, property: &ExpectedProperty, parallel: bool) -> Result<PropertyOutcome> {
    let results = out.results();
    let (passed, detail) = match property {
        ExpectedProperty::SolveCount { count } => (results.len() == *count, format!("{} solves", results.len())),
        ExpectedProperty::AllConverged => {
            let bad = results.iter().filter(|r| r.status != BnbStatus::Converged).count();
            (bad == 0, format!("{bad} of {} solves did not converge", results.len()))
        }
        ExpectedProperty::GapWithinEpsilon => {
            let worst = results
                .iter()
                .filter(|r| r.status == BnbStatus::Converged)
                .map(|r| r.gap())
                .fold(0.0, f64::max);
            (worst <= out.epsilon, format!("largest converged gap {worst:e} (epsilon {})", out.epsilon))
        }
        ExpectedProperty::HorizonSeconds { seconds } => match &spec.problem.kind {
            ProblemKind::ClosedLoop { dynamics, .. } => {
                let s = dynamics.horizon as f64 * dynamics.dt;
                ((s - seconds).abs() <= 1e-12, format!("horizon covers {s} s"))
            }
            ProblemKind::OpenLoop { .. } => (false, "not a closed-loop problem".into()),
        },
        ExpectedProperty::Containment { samples, seed, tol } => match (&out.reach, &out.open_loop, &spec.problem.kind) {
            (Some(r), _, ProblemKind::ClosedLoop { dynamics, .. }) => {
                let d = dynamics.to_dynamics()?;
                let fresh = simulate(&d, &spec.network, &r.sets[0], *samples, *seed, parallel);
                let mut escapes = 0usize;
                for traj in &fresh {
                    for (t, x) in traj.iter().enumerate() {
                        if !r.sets[t].contains(x, *tol) {
                            escapes += 1;
                        }
                    }
                }
                (escapes == 0, format!("{escapes} escaping states over {samples} fresh trajectories"))
            }
            (_, Some(o), _) => {
                let pts = uniform_points(&o.input, *samples, *seed);
                let mut escapes = 0usize;
                for x in &pts {
                    if !o.polytope.contains(&spec.network.forward(x)?, *tol) {
                        escapes += 1;
                    }
                }
                (escapes == 0, format!("{escapes} escaping outputs over {samples} fresh inputs"))
            }
            _ => (false, "nothing to check".into()),
        },
    };
    Ok(PropertyOutcome {
        property: property.clone(),
        passed,
        detail,
    })
}
