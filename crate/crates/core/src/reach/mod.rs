//! Reachable-set over-approximation.
//!
//! Closed loop: the set at step `t` is a rotated rectangle
//! `{R^t y : y ∈ [l^t, u^t]}`. For the next step, the rotation `R^{t+1}` comes
//! from PCA on simulated states, and every bound `l_i^{t+1}`, `u_i^{t+1}`
//! is one branch-and-bound minimization of
//! `±r_i^T (A R^t y + B f(R^t y))` over the current box.
//!
//! Open loop: the output set of a network over a box is bounded by one
//! support value per user-supplied direction.

mod pca;
mod sets;

pub use pca::{pca_directions, PcaBasis};
pub use sets::{
    check_disjoint, check_inside, orthonormality_error, HalfSpace, Polytope, RotatedRectangle, SetCheck,
    ORTHONORMAL_TOL,
};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bnb::{minimize, BnbConfig, BnbResult, BnbStatus, Rectangle};
use crate::error::{Error, Result};
use crate::exec;
use crate::lipschitz::{certify, preactivation_intervals, CertifyMethod, LipschitzCertificate, LipschitzMethod};
use crate::nn::{NeuralNetwork, ObjectiveFunction};

/// `x⁺ = A^t x + B^t u + c^t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDynamics {
    pub a_seq: Vec<DMatrix<f64>>,
    pub b_seq: Vec<DMatrix<f64>>,
    pub c_seq: Vec<DVector<f64>>,
    pub horizon: usize,
    pub dt: f64,
}

impl LinearDynamics {
    pub fn time_invariant(a: DMatrix<f64>, b: DMatrix<f64>, c: Option<DVector<f64>>, horizon: usize, dt: f64) -> Result<Self> {
        let n = a.nrows();
        let c = c.unwrap_or_else(|| DVector::zeros(n));
        let dyn_ = LinearDynamics {
            a_seq: vec![a; horizon],
            b_seq: vec![b; horizon],
            c_seq: vec![c; horizon],
            horizon,
            dt,
        };
        dyn_.validate()?;
        Ok(dyn_)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("dynamics", d));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.a_seq.len() < self.horizon || self.b_seq.len() < self.horizon || self.c_seq.len() < self.horizon {
            return bad(format!("sequences are shorter than the horizon {}", self.horizon));
        }
        let n = self.a_seq[0].nrows();
        let m = self.b_seq[0].ncols();
        for t in 0..self.horizon {
            if self.a_seq[t].shape() != (n, n) || self.b_seq[t].shape() != (n, m) || self.c_seq[t].len() != n {
                return bad(format!("inconsistent shapes at step {t}"));
            }
            let finite = self.a_seq[t].iter().chain(self.b_seq[t].iter()).chain(self.c_seq[t].iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite {
                    location: format!("dynamics at step {t}"),
                });
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a_seq[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_seq[0].ncols()
    }

    /// Shape check against a controller `u = f(x)`.
    pub fn check_controller(&self, net: &NeuralNetwork) -> Result<()> {
        if net.input_dim() != self.state_dim() || net.output_dim() != self.input_dim() {
            return Err(Error::invalid(
                "dynamics",
                format!(
                    "controller maps {} -> {} but the plant has {} states and {} inputs",
                    net.input_dim(),
                    net.output_dim(),
                    self.state_dim(),
                    self.input_dim()
                ),
            ));
        }
        Ok(())
    }

    pub fn step(&self, t: usize, net: &NeuralNetwork, x: &[f64]) -> Vec<f64> {
        let u = DVector::from_vec(net.forward_unchecked(x));
        let next = &self.a_seq[t] * DVector::from_column_slice(x) + &self.b_seq[t] * u + &self.c_seq[t];
        next.as_slice().to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachConfig {
    pub bnb: BnbConfig,
    /// Number of simulated trajectories `p`.
    pub samples: usize,
    pub seed: u64,
    /// Keep `R^t = I` instead of PCA.
    pub identity_rotation: bool,
    pub lipschitz_method: CertifyMethod,
    /// Localize activation sectors to the current box.
    pub localize: bool,
}

impl Default for ReachConfig {
    fn default() -> Self {
        ReachConfig {
            bnb: BnbConfig::default(),
            samples: 100,
            seed: 0,
            identity_rotation: false,
            lipschitz_method: CertifyMethod::Sdp,
            localize: true,
        }
    }
}

/// One branch-and-bound problem solved during reachability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    /// Step whose set is being computed.
    pub step: usize,
    pub axis: usize,
    /// `+1` for the lower bound, `-1` for the upper bound.
    pub sign: i8,
    pub direction: Vec<f64>,
    pub lipschitz: f64,
    pub lipschitz_method: LipschitzMethod,
    pub result: BnbResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub set: RotatedRectangle,
    pub solves: Vec<SolveRecord>,
    /// True when some solve hit the node cap; the set is still sound.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityResult {
    /// Steps `0..=horizon`.
    pub sets: Vec<RotatedRectangle>,
    pub solves: Vec<SolveRecord>,
    /// `trajectories[j][t]`.
    pub trajectories: Vec<Vec<Vec<f64>>>,
    pub warnings: Vec<String>,
}

/// `p` rollouts from uniform samples of `init`.
pub fn simulate(
    dyn_: &LinearDynamics,
    net: &NeuralNetwork,
    init: &RotatedRectangle,
    p: usize,
    seed: u64,
    parallel: bool,
) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (init.bounds.lower(), init.bounds.upper());
    let starts: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let y: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect();
            init.to_world(&y)
        })
        .collect();
    exec::map(parallel, &starts, |x0| {
        let mut traj = Vec::with_capacity(dyn_.horizon + 1);
        traj.push(x0.clone());
        for t in 0..dyn_.horizon {
            let next = dyn_.step(t, net, &traj[t]);
            traj.push(next);
        }
        traj
    })
}

/// One closed-loop step: bound every `±r_i^T x^{t+1}` over `current`.
///
/// `certs[i]` serves both signs of direction `i`; `warm` holds states at
/// step `t`, which are mapped into the local coordinates of `current`.
#[allow(clippy::too_many_arguments)]
pub fn step_overapprox(
    dyn_: &LinearDynamics,
    t: usize,
    net: &Arc<NeuralNetwork>,
    current: &RotatedRectangle,
    r_next: &DMatrix<f64>,
    certs: &[LipschitzCertificate],
    cfg: &BnbConfig,
    warm: &[Vec<f64>],
) -> Result<StepOutcome> {
    let n = dyn_.state_dim();
    if certs.len() != n {
        return Err(Error::invalid("step", format!("expected {n} certificates, got {}", certs.len())));
    }
    let err = orthonormality_error(r_next);
    if !(err <= ORTHONORMAL_TOL) {
        return Err(Error::invalid("step", format!("next rotation is not orthonormal (error {err:e})")));
    }
    let warm_local: Vec<Vec<f64>> = warm.iter().map(|x| current.bounds.clamp(&current.local(x))).collect();
    let problems: Vec<(usize, i8)> = (0..n).flat_map(|i| [(i, 1i8), (i, -1i8)]).collect();
    let solved = exec::map(cfg.parallel, &problems, |&(i, sign)| -> Result<SolveRecord> {
        let dir: DVector<f64> = r_next.column(i) * f64::from(sign);
        let obj = ObjectiveFunction::closed_loop(
            net.clone(),
            dir.clone(),
            dyn_.a_seq[t].clone(),
            dyn_.b_seq[t].clone(),
            current.rotation.clone(),
        )?;
        let result = minimize(&obj, &current.bounds, &certs[i], cfg, &warm_local)?;
        Ok(SolveRecord {
            step: t + 1,
            axis: i,
            sign,
            direction: dir.as_slice().to_vec(),
            lipschitz: certs[i].bound,
            lipschitz_method: certs[i].method,
            result,
        })
    });
    let solves = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for s in &solves {
        let shift = r_next.column(s.axis).dot(&dyn_.c_seq[t]);
        if s.sign > 0 {
            lower[s.axis] = s.result.blb + shift;
        } else {
            upper[s.axis] = -s.result.blb + shift;
        }
    }
    // Converged runs have lower <= upper up to rounding of the offset.
    for i in 0..n {
        if lower[i] > upper[i] {
            let mid = 0.5 * (lower[i] + upper[i]);
            lower[i] = mid;
            upper[i] = mid;
        }
    }
    let flagged = solves.iter().any(|s| s.result.status == BnbStatus::NodeCapReached);
    Ok(StepOutcome {
        set: RotatedRectangle::new(r_next.clone(), Rectangle::new(lower, upper)?)?,
        solves,
        flagged,
    })
}

/// One certificate per direction `r_i` of `r_next`, computed over `current`.
pub fn step_certificates(
    dyn_: &LinearDynamics,
    t: usize,
    net: &Arc<NeuralNetwork>,
    current: &RotatedRectangle,
    r_next: &DMatrix<f64>,
    cfg: &ReachConfig,
) -> Result<Vec<LipschitzCertificate>> {
    let bounds = cfg
        .localize
        .then(|| preactivation_intervals(net, &current.bounds, &current.rotation));
    let certs = exec::map_range(cfg.bnb.parallel, dyn_.state_dim(), |i| -> Result<LipschitzCertificate> {
        let obj = ObjectiveFunction::closed_loop(
            net.clone(),
            r_next.column(i).into_owned(),
            dyn_.a_seq[t].clone(),
            dyn_.b_seq[t].clone(),
            current.rotation.clone(),
        )?;
        Ok(certify(&obj, bounds.as_ref(), cfg.lipschitz_method))
    });
    certs.into_iter().collect()
}

/// Closed-loop reachability over the full horizon.
pub fn reach(
    dyn_: &LinearDynamics,
    net: &Arc<NeuralNetwork>,
    init: &RotatedRectangle,
    cfg: &ReachConfig,
) -> Result<ReachabilityResult> {
    dyn_.validate()?;
    dyn_.check_controller(net)?;
    cfg.bnb.validate()?;
    let n = dyn_.state_dim();
    if init.dim() != n {
        return Err(Error::InputShape {
            expected: n,
            got: init.dim(),
        });
    }
    if cfg.samples < n + 1 {
        return Err(Error::invalid(
            "reach",
            format!("need at least {} samples for PCA, got {}", n + 1, cfg.samples),
        ));
    }
    let trajectories = simulate(dyn_, net, init, cfg.samples, cfg.seed, cfg.bnb.parallel);
    let mut sets = vec![init.clone()];
    let mut solves = Vec::with_capacity(2 * n * dyn_.horizon);
    let mut warnings = Vec::new();
    for t in 0..dyn_.horizon {
        let current = sets[t].clone();
        let r_next = if cfg.identity_rotation {
            DMatrix::identity(n, n)
        } else {
            let cloud: Vec<Vec<f64>> = trajectories.iter().map(|tr| tr[t + 1].clone()).collect();
            let basis = pca_directions(&cloud, n);
            if let Some(w) = basis.warning {
                warnings.push(format!("step {}: {w}", t + 1));
            }
            basis.rotation
        };
        let certs = step_certificates(dyn_, t, net, &current, &r_next, cfg)?;
        for (i, c) in certs.iter().enumerate() {
            if let Some(w) = &c.warning {
                warnings.push(format!("step {} direction {i}: {w}", t + 1));
            }
        }
        let warm: Vec<Vec<f64>> = trajectories.iter().map(|tr| tr[t].clone()).collect();
        let out = step_overapprox(dyn_, t, net, &current, &r_next, &certs, &cfg.bnb, &warm)?;
        if out.flagged {
            warnings.push(format!("step {}: node cap reached; bounds are sound but loose", t + 1));
        }
        solves.extend(out.solves);
        sets.push(out.set);
    }
    Ok(ReachabilityResult {
        sets,
        solves,
        trajectories,
        warnings,
    })
}

/// Outer polytope `{z : d_k^T z <= h_k}` of the output set of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionPolytope {
    pub directions: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub results: Vec<BnbResult>,
    pub lipschitz: Vec<f64>,
    pub lipschitz_methods: Vec<LipschitzMethod>,
}

impl DirectionPolytope {
    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        self.directions
            .iter()
            .zip(&self.offsets)
            .all(|(d, h)| d.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() <= h + tol)
    }

    pub fn as_polytope(&self) -> Polytope {
        Polytope {
            halfspaces: self
                .directions
                .iter()
                .zip(&self.offsets)
                .map(|(d, h)| HalfSpace {
                    normal: d.clone(),
                    offset: *h,
                })
                .collect(),
        }
    }
}

/// `h_k >= max_{x in input} d_k^T f(x)`, one minimization of `-d_k^T f`
/// per direction.
pub fn reach_open_loop(
    net: &Arc<NeuralNetwork>,
    input: &Rectangle,
    directions: &[Vec<f64>],
    method: CertifyMethod,
    cfg: &BnbConfig,
    warm: &[Vec<f64>],
) -> Result<DirectionPolytope> {
    cfg.validate()?;
    let bounds = preactivation_intervals(net, input, &DMatrix::identity(input.dim(), input.dim()));
    let solved = exec::map(cfg.parallel, directions, |d| -> Result<(BnbResult, LipschitzCertificate)> {
        let neg = DVector::from_iterator(d.len(), d.iter().map(|v| -v));
        let obj = ObjectiveFunction::open_loop(net.clone(), neg)?;
        let cert = certify(&obj, Some(&bounds), method);
        let r = minimize(&obj, input, &cert, cfg, warm)?;
        Ok((r, cert))
    });
    let mut out = DirectionPolytope {
        directions: directions.to_vec(),
        offsets: Vec::with_capacity(directions.len()),
        results: Vec::with_capacity(directions.len()),
        lipschitz: Vec::with_capacity(directions.len()),
        lipschitz_methods: Vec::with_capacity(directions.len()),
    };
    for s in solved {
        let (r, cert) = s?;
        out.offsets.push(-r.blb);
        out.results.push(r);
        out.lipschitz.push(cert.bound);
        out.lipschitz_methods.push(cert.method);
    }
    Ok(out)
}

/// `k` unit vectors at angles `2πj/k`.
pub fn uniform_directions_2d(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| {
            let th = std::f64::consts::TAU * j as f64 / k as f64;
            vec![th.cos(), th.sin()]
        })
        .collect()
}
