//! Line-delimited result records.
//!
//! Every line of `records.jsonl` is one [`Envelope`]: a `schema_version`
//! plus a `record` tag. Records hold no timings, so two runs with the same
//! inputs produce identical files; wall-clock data goes to the summary.

use anyhow::{bail, ensure, Result};
use lipbnb::bnb::{BnbResult, BnbStatus};
use lipbnb::lipschitz::{LipschitzCertificate, LipschitzMethod};
use lipbnb::problems::PropertyOutcome;
use lipbnb::reach::{RotatedRectangle, SetCheck, SolveRecord};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: u32,
    #[serde(flatten)]
    pub record: Record,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveCounts {
    pub nodes_created: u64,
    pub nodes_pruned: u64,
    pub branches: u64,
    pub iterations: u64,
    pub bound_evals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Certificate {
        step: Option<usize>,
        direction: Vec<f64>,
        certificate: LipschitzCertificate,
    },
    Solve {
        step: Option<usize>,
        axis: Option<usize>,
        sign: Option<i8>,
        direction: Vec<f64>,
        lipschitz: f64,
        lipschitz_method: LipschitzMethod,
        blb: f64,
        bub: f64,
        status: BnbStatus,
        witness: Vec<f64>,
        counts: SolveCounts,
    },
    /// A rotated rectangle `{x : lower <= R^T x <= upper}`; `rotation` is
    /// row-major.
    Set {
        step: usize,
        rotation: Vec<Vec<f64>>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// A final leaf of the input partition with its bounds.
    Partition {
        lower: Vec<f64>,
        upper: Vec<f64>,
        lower_bound: f64,
        upper_bound: f64,
        pruned: bool,
    },
    /// One face `d^T y <= offset` of an output polytope.
    Face { direction: Vec<f64>, offset: f64 },
    SetCheck {
        step: usize,
        region: String,
        outcome: SetCheck,
    },
    Check {
        property: String,
        passed: bool,
        detail: String,
    },
}

impl Envelope {
    pub fn new(record: Record) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION,
            record,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn parse(line: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(line)?;
        env.validate()?;
        Ok(env)
    }

    /// Structural checks beyond what the types enforce.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "schema_version {} is not {SCHEMA_VERSION}",
            self.schema_version
        );
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.record {
            Record::Certificate { direction, certificate, .. } => {
                ensure!(finite(direction), "direction must be finite");
                ensure!(certificate.bound >= 0.0 && certificate.bound.is_finite(), "bad Lipschitz bound");
                if certificate.method == LipschitzMethod::Sdp {
                    ensure!(certificate.t_diag.as_ref().is_some_and(|t| t.iter().all(|v| *v >= 0.0)), "SDP certificate needs T >= 0");
                    ensure!(certificate.feasibility_margin.is_some_and(|m| m <= 0.0), "SDP certificate needs a margin <= 0");
                }
            }
            Record::Solve {
                direction,
                lipschitz,
                blb,
                bub,
                witness,
                sign,
                ..
            } => {
                ensure!(finite(direction) && finite(witness), "solve record has non-finite vectors");
                ensure!(*lipschitz >= 0.0 && lipschitz.is_finite(), "bad Lipschitz constant");
                ensure!(bub.is_finite() && !blb.is_nan() && blb <= bub, "need BLB <= BUB, got [{blb}, {bub}]");
                if let Some(s) = sign {
                    ensure!(*s == 1 || *s == -1, "sign must be +-1");
                }
            }
            Record::Set {
                rotation, lower, upper, ..
            } => {
                let n = lower.len();
                ensure!(upper.len() == n, "bounds differ in length");
                ensure!(rotation.len() == n && rotation.iter().all(|r| r.len() == n), "rotation must be {n}x{n}");
                ensure!(lower.iter().zip(upper).all(|(l, u)| l <= u), "lower must not exceed upper");
                ensure!(finite(lower) && finite(upper), "bounds must be finite");
            }
            Record::Partition {
                lower,
                upper,
                upper_bound,
                ..
            } => {
                ensure!(lower.len() == upper.len(), "bounds differ in length");
                ensure!(lower.iter().zip(upper).all(|(l, u)| l <= u), "lower must not exceed upper");
                ensure!(!upper_bound.is_nan(), "upper bound is NaN");
            }
            Record::Face { direction, offset } => {
                ensure!(finite(direction) && offset.is_finite(), "face must be finite");
            }
            Record::SetCheck { region, .. } => {
                if region != "goal" && region != "avoid" {
                    bail!("unknown region {region:?}");
                }
            }
            Record::Check { .. } => {}
        }
        Ok(())
    }
}

pub fn solve_record(
    step: Option<usize>,
    axis: Option<usize>,
    sign: Option<i8>,
    direction: Vec<f64>,
    lipschitz: f64,
    lipschitz_method: LipschitzMethod,
    r: &BnbResult,
) -> Record {
    Record::Solve {
        step,
        axis,
        sign,
        direction,
        lipschitz,
        lipschitz_method,
        blb: r.blb,
        bub: r.bub,
        status: r.status,
        witness: r.witness.clone(),
        counts: SolveCounts {
            nodes_created: r.stats.nodes_created,
            nodes_pruned: r.stats.nodes_pruned,
            branches: r.stats.branches,
            iterations: r.stats.iterations,
            bound_evals: r.stats.bound_evals,
        },
    }
}

pub fn reach_solve(s: &SolveRecord) -> Record {
    solve_record(
        Some(s.step),
        Some(s.axis),
        Some(s.sign),
        s.direction.clone(),
        s.lipschitz,
        s.lipschitz_method,
        &s.result,
    )
}

pub fn set_record(step: usize, set: &RotatedRectangle) -> Record {
    let r = &set.rotation;
    Record::Set {
        step,
        rotation: (0..r.nrows()).map(|i| r.row(i).iter().copied().collect()).collect(),
        lower: set.bounds.lower().to_vec(),
        upper: set.bounds.upper().to_vec(),
    }
}

pub fn check_record(c: &PropertyOutcome) -> Record {
    let property = serde_json::to_value(&c.property)
        .ok()
        .and_then(|v| v.get("property").and_then(|p| p.as_str()).map(str::to_string))
        .unwrap_or_default();
    Record::Check {
        property,
        passed: c.passed,
        detail: c.detail.clone(),
    }
}
