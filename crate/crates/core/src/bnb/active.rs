use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::PartitionNode;

/// Ordered by lower bound, then insertion order (FIFO among equal bounds).
#[derive(Clone, Copy, Debug)]
struct Key {
    lower: f64,
    seq: u64,
}

impl Key {
    fn new(lower: f64, seq: u64) -> Self {
        // `+ 0.0` folds -0.0 into 0.0 so the total order agrees with `<`.
        Key { lower: lower + 0.0, seq }
    }
}

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.lower.total_cmp(&other.lower).then(self.seq.cmp(&other.seq))
    }
}

/// Active partitions, keyed on their lower bounds.
#[derive(Clone, Debug, Default)]
pub struct ActiveSet {
    nodes: BTreeMap<Key, PartitionNode>,
    next_seq: u64,
}

impl ActiveSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn insert(&mut self, node: PartitionNode) {
        let key = Key::new(node.lower_bound, self.next_seq);
        self.next_seq += 1;
        self.nodes.insert(key, node);
    }

    pub fn min_lower(&self) -> Option<f64> {
        self.nodes.first_key_value().map(|(_, n)| n.lower_bound)
    }

    /// Pop up to `k` nodes in ascending lower-bound order while `keep`
    /// accepts their lower bound.
    pub fn take_lowest(&mut self, k: usize, keep: impl Fn(f64) -> bool) -> Vec<PartitionNode> {
        let mut out = Vec::with_capacity(k.min(self.nodes.len()));
        while out.len() < k {
            match self.nodes.first_entry() {
                Some(e) if keep(e.get().lower_bound) => out.push(e.remove()),
                _ => break,
            }
        }
        out
    }

    /// Remove and return every node with `lower_bound > bub`.
    pub fn prune_above(&mut self, bub: f64) -> Vec<PartitionNode> {
        let tail = self.nodes.split_off(&Key::new(bub, u64::MAX));
        tail.into_values().collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PartitionNode> {
        self.nodes.values()
    }

    pub fn into_nodes(self) -> impl Iterator<Item = PartitionNode> {
        self.nodes.into_values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnb::Rectangle;

    fn node(lb: f64, tag: f64) -> PartitionNode {
        PartitionNode {
            rect: Rectangle::new(vec![tag], vec![tag]).unwrap(),
            lower_bound: lb,
            upper_bound: lb,
            parent_lower: f64::NEG_INFINITY,
            depth: 0,
        }
    }

    #[test]
    fn fifo_among_ties() {
        let mut a = ActiveSet::new();
        for tag in 0..4 {
            a.insert(node(1.0, tag as f64));
        }
        let got: Vec<f64> = a.take_lowest(4, |_| true).iter().map(|n| n.rect.lower()[0]).collect();
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn threshold_stops_extraction() {
        let mut a = ActiveSet::new();
        for lb in [3.0, 1.0, 2.0] {
            a.insert(node(lb, 0.0));
        }
        assert_eq!(a.take_lowest(10, |lb| lb < 2.5).len(), 2);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn equal_to_bub_is_kept() {
        let mut a = ActiveSet::new();
        a.insert(node(0.0, 0.0));
        a.insert(node(-0.0, 0.0));
        a.insert(node(1e-300, 0.0));
        assert_eq!(a.prune_above(-0.0).len(), 1);
        assert_eq!(a.len(), 2);
    }
}
