//! Continual release by noisy dyadic interval sums.
//!
//! Leaves are numbered from 1. A node at level `l` with index `j` covers
//! leaves `(j−1)·2^l + 1 ..= j·2^l` and is noised once, with budget index
//! `k = l + 1`.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::rng::{tree_substream, KeyedRng};

/// Budget of tree level `k ≥ 1`: 6ε/(π²k²).
pub fn geometric_budget(k: u32, epsilon: f64) -> f64 {
    assert!(k >= 1);
    6.0 * epsilon / (PI * PI * (k as f64) * (k as f64))
}

/// Canonical dyadic cover of leaves `a..=b` using nodes of level ≤ `max_level`, as `(level, index)`.
pub fn dyadic_cover(a: u64, b: u64, max_level: u32) -> Vec<(u32, u64)> {
    let mut out = vec![];
    let mut a = a;
    while a <= b {
        let mut l = 0;
        while l < max_level {
            let size = 1u64 << (l + 1);
            if (a - 1).is_multiple_of(size) && a + size - 1 <= b {
                l += 1;
            } else {
                break;
            }
        }
        let size = 1u64 << l;
        out.push((l, (a - 1) / size + 1));
        a += size;
    }
    out
}

/// Prefix `1..=n` by the binary representation of `n`.
pub fn dyadic_prefix(n: u64) -> Vec<(u32, u64)> {
    if n == 0 {
        return vec![];
    }
    dyadic_cover(1, n, 63)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeKind {
    All,
    /// Window of `m` leaves.
    Sliding(u64),
}

#[derive(Clone, Debug)]
pub struct TreeState {
    pub kind: TreeKind,
    pub sensitivity: f64,
    pub epsilon: f64,
    pub renormalize: bool,
    leaves: Vec<f64>,
    counts: Vec<u64>,
    noisy: HashMap<(u32, u64), f64>,
    stream: usize,
    site: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Release {
    pub sum: f64,
    pub count: u64,
    pub nodes: usize,
}

impl TreeState {
    pub fn new(kind: TreeKind, sensitivity: f64, epsilon: f64, renormalize: bool, stream: usize, site: u32) -> Self {
        TreeState {
            kind,
            sensitivity,
            epsilon,
            renormalize,
            leaves: vec![],
            counts: vec![],
            noisy: HashMap::new(),
            stream,
            site,
        }
    }

    pub fn max_level(&self) -> u32 {
        match self.kind {
            TreeKind::All => 63,
            TreeKind::Sliding(m) => 63 - m.max(1).leading_zeros(),
        }
    }

    /// Budget of level `l` (0-based).
    pub fn level_budget(&self, l: u32) -> f64 {
        let eps = geometric_budget(l + 1, self.epsilon);
        match self.kind {
            TreeKind::Sliding(_) if self.renormalize => {
                let total: f64 = (1..=self.max_level() + 1).map(|k| geometric_budget(k, 1.0)).sum();
                eps / total
            }
            _ => eps,
        }
    }

    pub fn level_scale(&self, l: u32) -> f64 {
        if self.sensitivity == 0.0 {
            0.0
        } else {
            self.sensitivity / self.level_budget(l)
        }
    }

    pub fn push_leaf(&mut self, sum: f64, count: u64) {
        self.leaves.push(sum);
        self.counts.push(count);
    }

    pub fn leaf_count(&self) -> u64 {
        self.leaves.len() as u64
    }

    fn node_sum(&self, l: u32, j: u64) -> f64 {
        let size = 1usize << l;
        let start = (j as usize - 1) * size;
        self.leaves[start..start + size].iter().sum()
    }

    /// Releases the noisy aggregate over the current window (or prefix).
    pub fn release(&mut self, rng: Option<&mut KeyedRng>) -> Release {
        let n = self.leaf_count();
        let (a, nodes) = match self.kind {
            TreeKind::All => (1, dyadic_prefix(n)),
            TreeKind::Sliding(m) => {
                let a = n.saturating_sub(m) + 1;
                (a, if n == 0 { vec![] } else { dyadic_cover(a, n, self.max_level()) })
            }
        };
        let mut rng = rng;
        let mut sum = 0.0;
        for &(l, j) in &nodes {
            let value = match self.noisy.get(&(l, j)) {
                Some(v) => *v,
                None => {
                    let noise = match rng.as_deref_mut() {
                        Some(r) => r.laplace(self.level_scale(l), tree_substream(self.stream, self.site, l), j),
                        None => 0.0,
                    };
                    let v = self.node_sum(l, j) + noise;
                    self.noisy.insert((l, j), v);
                    v
                }
            };
            sum += value;
        }
        let count = if n == 0 { 0 } else { self.counts[(a - 1) as usize..n as usize].iter().sum() };
        Release { sum, count, nodes: nodes.len() }
    }

    /// Number of distinct noised nodes so far.
    pub fn noised_nodes(&self) -> usize {
        self.noisy.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_by_binary_representation() {
        assert_eq!(dyadic_prefix(5), vec![(2, 1), (0, 5)]);
        assert_eq!(dyadic_prefix(8), vec![(3, 1)]);
        assert_eq!(dyadic_prefix(7), vec![(2, 1), (1, 3), (0, 7)]);
    }

    #[test]
    fn sliding_cover() {
        // window of 4 leaves ending at leaf 6: 3..=6 = [3,4] + [5,6]
        assert_eq!(dyadic_cover(3, 6, 2), vec![(1, 2), (1, 3)]);
        // ending at leaf 7: 4..=7 = [4] + [5..6] + [7]
        assert_eq!(dyadic_cover(4, 7, 2), vec![(0, 4), (1, 3), (0, 7)]);
        assert_eq!(dyadic_cover(5, 8, 2), vec![(2, 2)]);
    }

    #[test]
    fn budgets() {
        assert!((geometric_budget(1, 1.0) - 0.607927).abs() < 1e-6);
        assert!((geometric_budget(2, 1.0) - 0.151982).abs() < 1e-6);
        let s: f64 = (1..=20).map(|k| geometric_budget(k, 1.0)).sum();
        assert!(s < 1.0 && s > 0.95);
        let t = TreeState::new(TreeKind::Sliding(5), 1.0, 1.0, true, 0, 0);
        assert_eq!(t.max_level(), 2);
        let total: f64 = (0..=2).map(|l| t.level_budget(l)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nodes_noised_once() {
        let mut t = TreeState::new(TreeKind::All, 1.0, 1.0, false, 0, 0);
        let mut rng = KeyedRng::new(3);
        let mut seen = vec![];
        for k in 1..=16 {
            t.push_leaf(k as f64, 1);
            seen.push(t.release(Some(&mut rng)).sum);
        }
        // only odd-indexed nodes ever appear in a prefix cover
        assert_eq!(t.noised_nodes(), 16);
        let mut again = TreeState::new(TreeKind::All, 1.0, 1.0, false, 0, 0);
        let mut rng = KeyedRng::new(3);
        for (k, want) in (1..=16).zip(seen) {
            again.push_leaf(k as f64, 1);
            assert_eq!(again.release(Some(&mut rng)).sum, want);
        }
    }
}
