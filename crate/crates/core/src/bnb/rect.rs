use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Rectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid(
                "rectangle",
                format!("bounds have lengths {} and {}", lower.len(), upper.len()),
            ));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("rectangle axis {i}"),
                });
            }
            if l > u {
                return Err(Error::invalid("rectangle", format!("axis {i}: lower {l} > upper {u}")));
            }
        }
        Ok(Rectangle { lower, upper })
    }

    /// Box of half-width `radius` around `center`.
    pub fn around(center: &[f64], radius: &[f64]) -> Result<Self> {
        Self::new(
            center.iter().zip(radius).map(|(c, r)| c - r).collect(),
            center.iter().zip(radius).map(|(c, r)| c + r).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn radius(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    /// Euclidean length of the main diagonal.
    pub fn diam(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    /// Longest axis, lowest index on ties; `None` for a single point.
    pub fn longest_axis(&self) -> Option<usize> {
        let mut best = None;
        let mut best_w = 0.0;
        for i in 0..self.dim() {
            let w = self.width(i);
            if w > best_w {
                best_w = w;
                best = Some(i);
            }
        }
        best
    }

    /// `parts` equal slabs along `axis`. The outer faces are copied exactly
    /// so the children tile the parent.
    pub fn split_axis(&self, axis: usize, parts: usize) -> Vec<Rectangle> {
        assert!(parts >= 1 && axis < self.dim());
        let (lo, hi) = (self.lower[axis], self.upper[axis]);
        let cut = |j: usize| match j {
            0 => lo,
            j if j == parts => hi,
            j => lo + (hi - lo) * j as f64 / parts as f64,
        };
        (0..parts)
            .map(|j| {
                let mut child = self.clone();
                child.lower[axis] = cut(j);
                child.upper[axis] = cut(j + 1);
                child
            })
            .collect()
    }

    /// Split along the longest edge; a point is returned unchanged.
    pub fn split(&self, parts: usize) -> Vec<Rectangle> {
        match self.longest_axis() {
            Some(axis) => self.split_axis(axis, parts),
            None => vec![self.clone()],
        }
    }

    /// `2^levels` boxes from repeated longest-edge bisection of each piece.
    pub fn bisect_levels(&self, levels: u32) -> Vec<Rectangle> {
        let mut pieces = vec![self.clone()];
        for _ in 0..levels {
            pieces = pieces.iter().flat_map(|r| r.split(2)).collect();
        }
        pieces
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    /// Corner indexed by the bits of `mask` (bit `i` set picks `upper[i]`).
    pub fn vertex(&self, mask: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(l: &[f64], u: &[f64]) -> Rectangle {
        Rectangle::new(l.to_vec(), u.to_vec()).unwrap()
    }

    #[test]
    fn validation() {
        assert!(Rectangle::new(vec![1.0], vec![0.0]).is_err());
        assert!(Rectangle::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(Rectangle::new(vec![], vec![]).is_err());
        assert!(matches!(
            Rectangle::new(vec![f64::NAN], vec![1.0]),
            Err(Error::NonFinite { .. })
        ));
        assert!(Rectangle::new(vec![1.0], vec![1.0]).is_ok());
    }

    #[test]
    fn bisection_along_longest_edge() {
        let parts = rect(&[0.0, 0.0], &[2.0, 1.0]).split(2);
        assert_eq!(parts, vec![rect(&[0.0, 0.0], &[1.0, 1.0]), rect(&[1.0, 0.0], &[2.0, 1.0])]);
    }

    #[test]
    fn ties_pick_lowest_axis() {
        assert_eq!(rect(&[0.0, 0.0], &[1.0, 1.0]).longest_axis(), Some(0));
        assert_eq!(rect(&[0.0, 0.0, 0.0], &[1.0, 2.0, 2.0]).longest_axis(), Some(1));
    }

    #[test]
    fn degenerate_axes_are_skipped() {
        let r = rect(&[0.0, 3.0], &[0.0, 5.0]);
        assert_eq!(r.longest_axis(), Some(1));
        assert_eq!(r.diam(), 2.0);
        let p = rect(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(p.longest_axis(), None);
        assert_eq!(p.split(2), vec![p.clone()]);
    }

    #[test]
    fn three_way_split_tiles() {
        let parts = rect(&[0.0], &[0.3]).split(3);
        assert_eq!(parts[0].lower()[0], 0.0);
        assert_eq!(parts[2].upper()[0], 0.3);
        for w in parts.windows(2) {
            assert_eq!(w[0].upper()[0], w[1].lower()[0]);
        }
    }

    #[test]
    fn quadrants() {
        let q = rect(&[0.0, 0.0], &[1.0, 1.0]).bisect_levels(2);
        assert_eq!(q.len(), 4);
        assert!(q.iter().all(|r| r.width(0) == 0.5 && r.width(1) == 0.5));
    }

    #[test]
    fn clamp_and_contains() {
        let r = rect(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(r.clamp(&[-0.5, 2.0]), vec![0.0, 1.0]);
        assert!(r.contains(&[1.0 + 1e-12, 0.5], 1e-9));
        assert!(!r.contains(&[1.1, 0.5], 1e-9));
        assert_eq!(r.vertex(0b10), vec![0.0, 1.0]);
    }
}
