//! Average-linkage agglomerative clustering of filters under cosine similarity.
//!
//! Starting from singletons, the two clusters with the highest average mutual
//! similarity
//!
//! ```text
//! avg(Ca, Cb) = Σ_{i∈Ca, j∈Cb} cos(φ_i, φ_j) / (|Ca|·|Cb|)
//! ```
//!
//! are merged for as long as that maximum is strictly greater than the
//! threshold `tau`. The clusters left standing are the non-redundant filters;
//! their count is `n_f`.
//!
//! Conventions:
//! - a zero-norm vector has similarity 0 with everything (including itself), so
//!   it only merges when `tau < 0`;
//! - similarities are computed in f64 and clamped to `[-1, 1]`, so exact
//!   duplicates sit at 1.0 and never merge at `tau = 1`;
//! - among equally similar pairs the one with the lexicographically smallest
//!   `(smaller cluster id, larger cluster id)` wins, where a cluster's id is its
//!   smallest member index.

pub mod dendrogram;

use serde::{Deserialize, Serialize};

pub use dendrogram::{Dendrogram, Merge};

use crate::error::{Error, Result};
use crate::featurize::FilterMatrix;

/// Cosine similarity of two equal-length vectors; 0 if either has zero norm.
pub fn cosine_sim<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Length(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    Ok(finish_cosine(dot, nu, nv))
}

// Taking one square root of the product keeps cos(u, u) exactly 1.
fn finish_cosine(dot: f64, sq_u: f64, sq_v: f64) -> f64 {
    if sq_u == 0.0 || sq_v == 0.0 {
        return 0.0;
    }
    let c = dot / (sq_u * sq_v).sqrt();
    if c.is_finite() {
        c.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Dense symmetric matrix of pairwise filter cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wrap an explicit row-major `n×n` table. It must be symmetric.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Length(format!("{} entries for a {n}x{n} matrix", entries.len())));
        }
        for i in 0..n {
            for j in i + 1..n {
                if entries[i * n + j].to_bits() != entries[j * n + i].to_bits() {
                    return Err(Error::Partition(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

// Eight independent accumulators let the compiler vectorize the reduction.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    acc.iter().sum::<f64>() + tail
}

/// Pairwise cosine similarities of the filter matrix's columns.
pub fn similarity_matrix(fm: &FilterMatrix) -> SimilarityMatrix {
    let n = fm.n();
    let cols: Vec<Vec<f64>> = fm.columns().map(|c| c.iter().map(|&x| x as f64).collect()).collect();
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = if norms[i] > 0.0 { 1.0 } else { 0.0 };
        for j in i + 1..n {
            let s = finish_cosine(dot(&cols[i], &cols[j]), norms[i], norms[j]);
            entries[i * n + j] = s;
            entries[j * n + i] = s;
        }
    }
    SimilarityMatrix { n, entries }
}

/// Average mutual similarity between two disjoint, non-empty index sets.
pub fn avg_cluster_sim(ca: &[usize], cb: &[usize], s: &SimilarityMatrix) -> Result<f64> {
    if ca.is_empty() || cb.is_empty() {
        return Err(Error::Partition("cluster sets must be non-empty".into()));
    }
    if let Some(&bad) = ca.iter().chain(cb).find(|&&i| i >= s.n) {
        return Err(Error::Partition(format!("index {bad} outside {}x{} matrix", s.n, s.n)));
    }
    if ca.iter().any(|i| cb.contains(i)) {
        return Err(Error::Partition("cluster sets overlap".into()));
    }
    let total: f64 = ca.iter().flat_map(|&i| cb.iter().map(move |&j| s.get(i, j))).sum();
    Ok(total / (ca.len() * cb.len()) as f64)
}

/// A partition of filter indices produced by agglomeration at threshold `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub tau: f64,
    /// Cluster label per filter; labels are dense and numbered by smallest member.
    pub assignments: Vec<usize>,
    pub merge_log: Vec<Merge>,
    pub n_f: usize,
}

impl Clustering {
    fn from_merges(n: usize, tau: f64, merges: &[Merge]) -> Self {
        // Replay merges with union-find; roots are cluster ids (smallest members).
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for m in merges {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[rb] = ra;
        }
        let mut label = vec![usize::MAX; n];
        let mut assignments = Vec::with_capacity(n);
        let mut next = 0;
        for i in 0..n {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            assignments.push(label[r]);
        }
        Self { tau, assignments, merge_log: merges.to_vec(), n_f: next }
    }

    /// Number of filters partitioned.
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    /// Members of each cluster, in label order; members ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_f];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau {tau} outside [-1, 1]")));
    }
    Ok(())
}

/// Cluster the columns of `fm`, merging while the best average similarity is `> tau`.
pub fn agglomerate(fm: &FilterMatrix, tau: f64) -> Result<Clustering> {
    check_tau(tau)?;
    Ok(agglomerate_similarities(&similarity_matrix(fm), tau))
}

/// As [`agglomerate`], from a precomputed similarity matrix.
pub fn agglomerate_similarities(s: &SimilarityMatrix, tau: f64) -> Clustering {
    let d = dendrogram::build(s, Some(tau));
    Clustering::from_merges(s.n(), tau, &d.merges)
}

/// Cut a full dendrogram at `tau`; identical to running [`agglomerate`] at `tau`.
pub fn cut(d: &Dendrogram, tau: f64) -> Clustering {
    Clustering::from_merges(d.n, tau, d.prefix_above(tau))
}

/// `(tau, n_f)` for every requested threshold, from one full dendrogram.
pub fn sweep(fm: &FilterMatrix, taus: &[f64]) -> Result<Vec<(f64, usize)>> {
    if taus.is_empty() {
        return Err(Error::Config("sweep needs at least one tau".into()));
    }
    for &t in taus {
        check_tau(t)?;
    }
    let d = dendrogram::build(&similarity_matrix(fm), None);
    Ok(taus.iter().map(|&t| (t, d.n - d.prefix_above(t).len())).collect())
}
