//! Greedy average-linkage agglomeration driven by a binary heap.
//!
//! Clusters are identified by their smallest member index, which stays stable
//! across merges (the merged cluster keeps the smaller id). Cluster-pair average
//! similarities live in a dense `n×n` table and are updated with the
//! Lance-Williams rule for arithmetic-average linkage:
//!
//! ```text
//! sim(A∪B, C) = (|A|·sim(A, C) + |B|·sim(B, C)) / (|A| + |B|)
//! ```
//!
//! The heap holds candidate pairs tagged with each side's generation counter.
//! A merge bumps the surviving cluster's generation and kills the absorbed one,
//! so stale entries are recognized and discarded when popped. Each merge pushes
//! at most `n` entries, giving `O(n² log n)` overall.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::SimilarityMatrix;

/// One agglomeration step: cluster `b` was absorbed into cluster `a` (`a < b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Average mutual similarity of the two clusters at the time of the merge.
    pub similarity: f64,
    /// Size of the merged cluster.
    pub size: usize,
}

/// Ordered merge history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    sim: f64,
    a: usize,
    b: usize,
    gen_a: u32,
    gen_b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap: higher similarity first, then the lexicographically smaller (a, b).
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
            .then_with(|| (self.gen_a, self.gen_b).cmp(&(other.gen_a, other.gen_b)))
    }
}

/// Agglomerate until one cluster remains, or until the best available pair has
/// similarity `<= stop_at`.
pub fn build(sim: &SimilarityMatrix, stop_at: Option<f64>) -> Dendrogram {
    let n = sim.n();
    let mut table = sim.entries().to_vec();
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut generation = vec![0u32; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    let mut initial = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            initial.push(Candidate { sim: table[a * n + b], a, b, gen_a: 0, gen_b: 0 });
        }
    }
    let mut heap = BinaryHeap::from(initial);

    while merges.len() + 1 < n {
        let Some(top) = heap.pop() else { break };
        let (a, b) = (top.a, top.b);
        if !alive[a] || !alive[b] || generation[a] != top.gen_a || generation[b] != top.gen_b {
            continue;
        }
        if stop_at.is_some_and(|tau| top.sim <= tau) {
            break;
        }

        let (sa, sb) = (size[a] as f64, size[b] as f64);
        alive[b] = false;
        size[a] += size[b];
        generation[a] += 1;
        merges.push(Merge { a, b, similarity: top.sim, size: size[a] });

        for c in 0..n {
            if !alive[c] || c == a {
                continue;
            }
            let s = (sa * table[a * n + c] + sb * table[b * n + c]) / (sa + sb);
            table[a * n + c] = s;
            table[c * n + a] = s;
            let (lo, hi) = if a < c { (a, c) } else { (c, a) };
            heap.push(Candidate { sim: s, a: lo, b: hi, gen_a: generation[lo], gen_b: generation[hi] });
        }
    }
    Dendrogram { n, merges }
}

impl Dendrogram {
    /// The merges a run stopped at `tau` would perform: the longest prefix whose
    /// similarities are all strictly above `tau`.
    pub fn prefix_above(&self, tau: f64) -> &[Merge] {
        let end = self.merges.iter().position(|m| m.similarity <= tau).unwrap_or(self.merges.len());
        &self.merges[..end]
    }
}
