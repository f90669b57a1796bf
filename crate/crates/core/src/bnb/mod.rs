//! Branch-and-bound minimization of a Lipschitz objective over a box.
//!
//! Each node carries `J(center)` as an upper bound and
//! `max(J(center) - L/2·diam, parent lower bound, refined bound)` as a lower
//! bound. Nodes are split in batches of the lowest lower bounds. Only nodes
//! with `lower < BUB - ε` are split; a node whose diameter is at most `2ε/L`
//! always has `lower >= J(center) - ε >= BUB - ε`, so the search never
//! refines below that scale and stops once the gap closes.

mod active;
mod rect;

pub use active::ActiveSet;
pub use rect::Rectangle;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::lipschitz::LipschitzCertificate;
use crate::nn::ObjectiveFunction;

/// A box in the active set with its cached bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionNode {
    pub rect: Rectangle,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub parent_lower: f64,
    pub depth: u32,
}

impl PartitionNode {
    /// A node that has not been bounded yet.
    pub fn unbounded(rect: Rectangle, parent_lower: f64, depth: u32) -> Self {
        PartitionNode {
            rect,
            lower_bound: parent_lower,
            upper_bound: f64::INFINITY,
            parent_lower,
            depth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnbConfig {
    pub epsilon: f64,
    /// `k_b`: nodes split per iteration.
    pub branch_batch: usize,
    /// `k_v`: sub-boxes used by the refined lower bound (a power of two;
    /// 1 turns refinement off).
    pub refine_splits: usize,
    /// `k_d`: children per split.
    pub split_parts: usize,
    pub node_cap: u64,
    pub verify_mode: bool,
    pub parallel: bool,
    /// Off only for testing that pruning never changes the answer.
    pub prune: bool,
    pub keep_partitions: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            epsilon: 1e-2,
            branch_batch: 512,
            refine_splits: 4,
            split_parts: 2,
            node_cap: 5_000_000,
            verify_mode: false,
            parallel: true,
            prune: true,
            keep_partitions: false,
        }
    }
}

impl BnbConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("bnb config", detail));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive and finite, got {}", self.epsilon));
        }
        if self.branch_batch == 0 {
            return bad("branch_batch must be at least 1".into());
        }
        if !self.refine_splits.is_power_of_two() {
            return bad(format!("refine_splits must be a power of two, got {}", self.refine_splits));
        }
        if self.split_parts < 2 {
            return bad(format!("split_parts must be at least 2, got {}", self.split_parts));
        }
        if self.node_cap == 0 {
            return bad("node_cap must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnbStatus {
    Converged,
    VerifiedNonnegative,
    CounterexampleFound,
    NodeCapReached,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BnbStats {
    pub nodes_created: u64,
    pub nodes_pruned: u64,
    /// Number of nodes split.
    pub branches: u64,
    pub iterations: u64,
    pub bound_evals: u64,
    pub wall_time_secs: f64,
}

/// A leaf of the final partition, for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionLeaf {
    pub node: PartitionNode,
    pub pruned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnbResult {
    pub blb: f64,
    pub bub: f64,
    pub status: BnbStatus,
    /// Evaluated point with `J(witness) = bub`.
    pub witness: Vec<f64>,
    pub stats: BnbStats,
    pub partitions: Option<Vec<PartitionLeaf>>,
}

impl BnbResult {
    pub fn gap(&self) -> f64 {
        self.bub - self.blb
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationInfo {
    pub iteration: u64,
    pub blb: f64,
    pub bub: f64,
    pub active: usize,
}

/// Hooks into the main loop, used by tests and tracing.
pub trait BnbObserver {
    fn on_iteration(&mut self, _info: &IterationInfo) {}
    fn on_split(&mut self, _node: &PartitionNode) {}
}

impl BnbObserver for () {}

struct Bounded {
    node: PartitionNode,
    best_value: f64,
    best_point: Vec<f64>,
    evals: u64,
}

fn evaluate(rect: Rectangle, parent_lower: f64, depth: u32, obj: &ObjectiveFunction, l: f64, levels: u32) -> Bounded {
    let center = rect.center();
    let upper = obj.eval_unchecked(&center);
    let mut lower = (upper - 0.5 * l * rect.diam()).max(parent_lower);
    let mut best_value = upper;
    let mut best_point = center;
    let mut evals = 1;
    if levels > 0 && rect.longest_axis().is_some() {
        let mut refined = f64::INFINITY;
        for sub in rect.bisect_levels(levels) {
            let c = sub.center();
            let v = obj.eval_unchecked(&c);
            evals += 1;
            refined = refined.min(v - 0.5 * l * sub.diam());
            if v < best_value {
                best_value = v;
                best_point = c;
            }
        }
        lower = lower.max(refined);
    }
    Bounded {
        node: PartitionNode {
            rect,
            lower_bound: lower,
            upper_bound: upper,
            parent_lower,
            depth,
        },
        best_value,
        best_point,
        evals,
    }
}

fn refine_levels(k_v: usize) -> u32 {
    k_v.trailing_zeros()
}

/// Bound one node: `upper = J(center)`, `lower = max(lb₁, lb₂, lb₃)`.
pub fn bound(node: &PartitionNode, obj: &ObjectiveFunction, cert: &LipschitzCertificate, k_v: usize) -> PartitionNode {
    evaluate(node.rect.clone(), node.parent_lower, node.depth, obj, cert.bound, refine_levels(k_v.max(1))).node
}

/// Remove the `k_b` nodes with the lowest lower bounds and return their
/// `k_d` children each, not yet bounded.
pub fn branch(active: &mut ActiveSet, k_b: usize, k_d: usize) -> Vec<PartitionNode> {
    active
        .take_lowest(k_b, |_| true)
        .into_iter()
        .flat_map(|p| {
            let (lb, depth) = (p.lower_bound, p.depth + 1);
            p.rect
                .split(k_d)
                .into_iter()
                .map(move |r| PartitionNode::unbounded(r, lb, depth))
        })
        .collect()
}

/// Drop nodes with `lower_bound > bub`; returns how many went.
pub fn prune(active: &mut ActiveSet, bub: f64) -> usize {
    active.prune_above(bub).len()
}

pub fn minimize(
    obj: &ObjectiveFunction,
    root: &Rectangle,
    cert: &LipschitzCertificate,
    cfg: &BnbConfig,
    warm_points: &[Vec<f64>],
) -> Result<BnbResult> {
    minimize_observed(obj, root, cert, cfg, warm_points, &mut ())
}

pub fn minimize_observed(
    obj: &ObjectiveFunction,
    root: &Rectangle,
    cert: &LipschitzCertificate,
    cfg: &BnbConfig,
    warm_points: &[Vec<f64>],
    observer: &mut dyn BnbObserver,
) -> Result<BnbResult> {
    cfg.validate()?;
    if root.dim() != obj.input_dim() {
        return Err(Error::InputShape {
            expected: obj.input_dim(),
            got: root.dim(),
        });
    }
    let l = cert.bound;
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::invalid("lipschitz", format!("bound must be finite and >= 0, got {l}")));
    }
    let start = Instant::now();
    let levels = refine_levels(cfg.refine_splits);
    let mut stats = BnbStats::default();

    let mut bub = f64::INFINITY;
    let mut witness = root.center();
    for p in warm_points {
        if p.len() != root.dim() {
            return Err(Error::InputShape {
                expected: root.dim(),
                got: p.len(),
            });
        }
        let q = root.clamp(p);
        let v = obj.eval_unchecked(&q);
        stats.bound_evals += 1;
        if v < bub {
            bub = v;
            witness = q;
        }
    }

    let mut active = ActiveSet::new();
    let mut leaves = cfg.keep_partitions.then(Vec::new);
    let first = evaluate(root.clone(), f64::NEG_INFINITY, 0, obj, l, levels);
    stats.nodes_created = 1;
    stats.bound_evals += first.evals;
    if first.best_value < bub {
        bub = first.best_value;
        witness = first.best_point;
    }
    active.insert(first.node);

    let mut blb = f64::NEG_INFINITY;
    let status = loop {
        // Every region still open has lower bound >= min over the active set;
        // pruned regions are all above BUB.
        blb = match active.min_lower() {
            Some(m) => blb.max(m),
            None => bub,
        };
        blb = blb.min(bub);
        observer.on_iteration(&IterationInfo {
            iteration: stats.iterations,
            blb,
            bub,
            active: active.len(),
        });

        if cfg.verify_mode {
            if blb >= 0.0 {
                break BnbStatus::VerifiedNonnegative;
            }
            if bub < 0.0 {
                break BnbStatus::CounterexampleFound;
            }
        }
        if bub - blb <= cfg.epsilon {
            break BnbStatus::Converged;
        }

        if cfg.prune {
            let gone = active.prune_above(bub);
            stats.nodes_pruned += gone.len() as u64;
            if let Some(leaves) = leaves.as_mut() {
                leaves.extend(gone.into_iter().map(|node| PartitionLeaf { node, pruned: true }));
            }
        }

        // Same expression as the gap test, so the lowest node always
        // qualifies here.
        let parents = active.take_lowest(cfg.branch_batch, |lb| bub - lb > cfg.epsilon);
        debug_assert!(!parents.is_empty());
        let mut children = Vec::with_capacity(parents.len() * cfg.split_parts);
        for p in &parents {
            observer.on_split(p);
            for r in p.rect.split(cfg.split_parts) {
                children.push((r, p.lower_bound, p.depth + 1));
            }
        }
        if stats.nodes_created + children.len() as u64 > cfg.node_cap {
            for p in parents {
                active.insert(p);
            }
            break BnbStatus::NodeCapReached;
        }
        stats.branches += parents.len() as u64;

        let bounded = exec::map(cfg.parallel, &children, |(r, lb, depth)| {
            evaluate(r.clone(), *lb, *depth, obj, l, levels)
        });
        for b in bounded {
            stats.bound_evals += b.evals;
            stats.nodes_created += 1;
            if b.best_value < bub {
                bub = b.best_value;
                witness = b.best_point;
            }
            active.insert(b.node);
        }
        stats.iterations += 1;
    };

    let partitions = leaves.map(|mut leaves| {
        leaves.extend(active.into_nodes().map(|node| PartitionLeaf { node, pruned: false }));
        leaves
    });
    stats.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(BnbResult {
        blb,
        bub,
        status,
        witness,
        stats,
        partitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ActivationSector, Layer, NeuralNetwork};
    use nalgebra::{dmatrix, dvector, DMatrix, DVector};
    use std::sync::Arc;

    /// `J(x) = w·x + b` through a single identity layer.
    fn affine(w: &[f64], b: f64) -> ObjectiveFunction {
        let layer = Layer::new(DMatrix::from_row_slice(1, w.len(), w), dvector![b]);
        let net = NeuralNetwork::new(vec![layer], ActivationSector::identity()).unwrap();
        ObjectiveFunction::open_loop(Arc::new(net), dvector![1.0]).unwrap()
    }

    fn unit_square() -> Rectangle {
        Rectangle::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    fn cfg(epsilon: f64) -> BnbConfig {
        BnbConfig {
            epsilon,
            parallel: false,
            ..BnbConfig::default()
        }
    }

    fn node(lb: f64) -> PartitionNode {
        PartitionNode {
            rect: unit_square(),
            lower_bound: lb,
            upper_bound: 1.0,
            parent_lower: f64::NEG_INFINITY,
            depth: 0,
        }
    }

    #[test]
    fn constant_objective_bounds_are_equal() {
        let obj = affine(&[0.0, 0.0], 3.0);
        let n = bound(
            &PartitionNode::unbounded(unit_square(), f64::NEG_INFINITY, 0),
            &obj,
            &LipschitzCertificate::from_constant(0.0),
            4,
        );
        assert_eq!((n.lower_bound, n.upper_bound), (3.0, 3.0));
    }

    #[test]
    fn lipschitz_lower_bound() {
        let obj = affine(&[1.0, 0.0], 0.0);
        let root = PartitionNode::unbounded(unit_square(), f64::NEG_INFINITY, 0);
        let cert = LipschitzCertificate::from_constant(1.0);
        let n = bound(&root, &obj, &cert, 1);
        assert_eq!(n.upper_bound, 0.5);
        assert!((n.lower_bound - (0.5 - 2f64.sqrt() / 2.0)).abs() < 1e-15);
        let refined = bound(&root, &obj, &cert, 4);
        assert!((refined.lower_bound - (0.25 - 2f64.sqrt() / 4.0)).abs() < 1e-15);
        assert!(refined.lower_bound > n.lower_bound);
    }

    #[test]
    fn parent_lower_is_inherited() {
        let obj = affine(&[1.0, 0.0], 0.0);
        let n = bound(
            &PartitionNode::unbounded(unit_square(), 0.4, 1),
            &obj,
            &LipschitzCertificate::from_constant(1.0),
            1,
        );
        assert_eq!(n.lower_bound, 0.4);
    }

    #[test]
    fn branch_selects_lowest() {
        let mut active = ActiveSet::new();
        for lb in [0.5, -0.1, 0.3] {
            active.insert(node(lb));
        }
        let children = branch(&mut active, 1, 2);
        assert_eq!(children.len(), 2);
        assert!(children.iter().all(|c| c.parent_lower == -0.1 && c.depth == 1));
        assert_eq!(children[0].rect.upper(), &[0.5, 1.0]);
        let mut left: Vec<f64> = active.nodes().map(|n| n.lower_bound).collect();
        left.sort_by(f64::total_cmp);
        assert_eq!(left, vec![0.3, 0.5]);
    }

    #[test]
    fn prune_rule() {
        let mut active = ActiveSet::new();
        for lb in [0.5, -0.1, 0.3] {
            active.insert(node(lb));
        }
        assert_eq!(prune(&mut active, f64::INFINITY), 0);
        assert_eq!(prune(&mut active, 0.2), 2);
        assert_eq!(active.min_lower(), Some(-0.1));
        assert_eq!(prune(&mut active, -1.0), 1);
        assert!(active.is_empty());
    }

    #[test]
    fn affine_minimum() {
        let obj = affine(&[1.0, -1.0], 0.0);
        let eps = 0.01;
        let r = minimize(&obj, &unit_square(), &LipschitzCertificate::from_constant(2f64.sqrt()), &cfg(eps), &[]).unwrap();
        assert_eq!(r.status, BnbStatus::Converged);
        assert!(r.blb >= -1.0 - eps && r.blb <= -1.0, "{r:?}");
        assert!(r.bub >= -1.0 && r.bub <= -1.0 + eps);
        assert!(r.gap() <= eps);
        assert_eq!(obj.eval(&r.witness).unwrap(), r.bub);
    }

    #[test]
    fn verify_nonnegative() {
        let obj = affine(&[1.0, 0.0], 2.0);
        let r = minimize(
            &obj,
            &unit_square(),
            &LipschitzCertificate::from_constant(1.0),
            &BnbConfig {
                verify_mode: true,
                ..cfg(1e-3)
            },
            &[],
        )
        .unwrap();
        assert_eq!(r.status, BnbStatus::VerifiedNonnegative);
        assert!(r.blb >= 0.0);
        assert_eq!(r.stats.iterations, 0);
    }

    #[test]
    fn verify_counterexample() {
        let obj = affine(&[1.0, 0.0], -0.5);
        let r = minimize(
            &obj,
            &unit_square(),
            &LipschitzCertificate::from_constant(1.0),
            &BnbConfig {
                verify_mode: true,
                ..cfg(1e-3)
            },
            &[],
        )
        .unwrap();
        assert_eq!(r.status, BnbStatus::CounterexampleFound);
        assert!(obj.eval(&r.witness).unwrap() < 0.0);
        assert!(unit_square().contains(&r.witness, 0.0));
    }

    #[test]
    fn constant_converges_immediately() {
        let obj = affine(&[0.0, 0.0], -4.0);
        let r = minimize(&obj, &unit_square(), &LipschitzCertificate::from_constant(0.0), &cfg(1e-6), &[]).unwrap();
        assert_eq!(r.status, BnbStatus::Converged);
        assert_eq!(r.blb, r.bub);
        assert_eq!(r.stats.iterations, 0);
    }

    #[test]
    fn warm_points_are_clamped() {
        let obj = affine(&[1.0, 1.0], 0.0);
        let r = minimize(
            &obj,
            &unit_square(),
            &LipschitzCertificate::from_constant(2f64.sqrt()),
            &cfg(0.5),
            &[vec![-3.0, -1e-17]],
        )
        .unwrap();
        assert_eq!(r.bub, 0.0);
        assert_eq!(r.witness, vec![0.0, 0.0]);
    }

    #[test]
    fn node_cap_keeps_sound_bounds() {
        let obj = affine(&[1.0, -1.0], 0.0);
        let r = minimize(
            &obj,
            &unit_square(),
            &LipschitzCertificate::from_constant(2f64.sqrt()),
            &BnbConfig {
                node_cap: 10,
                ..cfg(1e-9)
            },
            &[],
        )
        .unwrap();
        assert_eq!(r.status, BnbStatus::NodeCapReached);
        assert!(r.blb <= -1.0 && r.bub >= -1.0);
        assert!(r.stats.nodes_created <= 10);
    }

    #[test]
    fn partitions_tile_the_root() {
        let obj = affine(&[1.0, -1.0], 0.0);
        let r = minimize(
            &obj,
            &unit_square(),
            &LipschitzCertificate::from_constant(2f64.sqrt()),
            &BnbConfig {
                keep_partitions: true,
                ..cfg(0.05)
            },
            &[],
        )
        .unwrap();
        let leaves = r.partitions.unwrap();
        let area: f64 = leaves.iter().map(|l| l.node.rect.volume()).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let obj = affine(&[1.0, -1.0], 0.0);
        let cert = LipschitzCertificate::from_constant(1.0);
        let cube = Rectangle::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(minimize(&obj, &cube, &cert, &cfg(0.1), &[]).is_err());
        assert!(minimize(&obj, &unit_square(), &cert, &cfg(0.0), &[]).is_err());
        let bad = BnbConfig {
            refine_splits: 3,
            ..cfg(0.1)
        };
        assert!(minimize(&obj, &unit_square(), &cert, &bad, &[]).is_err());
    }

    #[test]
    fn relu_network_minimum() {
        // J(x) = relu(x1 - x2) + relu(x2 - x1) = |x1 - x2|, min 0 on the diagonal.
        let net = NeuralNetwork::new(
            vec![
                Layer::new(dmatrix![1.0, -1.0; -1.0, 1.0], DVector::zeros(2)),
                Layer::new(dmatrix![1.0, 1.0], DVector::zeros(1)),
            ],
            ActivationSector::relu(),
        )
        .unwrap();
        let obj = ObjectiveFunction::open_loop(Arc::new(net), dvector![1.0]).unwrap();
        let r = minimize(
            &obj,
            &Rectangle::new(vec![-1.0, 0.3], vec![1.0, 2.0]).unwrap(),
            &LipschitzCertificate::from_constant(2f64.sqrt()),
            &cfg(1e-3),
            &[],
        )
        .unwrap();
        assert_eq!(r.status, BnbStatus::Converged);
        assert!(r.blb <= 0.0 && r.bub >= 0.0 && r.gap() <= 1e-3);
    }
}
