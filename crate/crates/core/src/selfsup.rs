//! Self-supervised change-point pre-estimation on correlation sequences:
//! per-snapshot signed spectral clustering, ARI similarity between snapshots,
//! clustering of snapshots and temporal smoothing. Also the eigen-entropy
//! diagnostic.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, sym_eig, Matrix};

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl Partition {
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if assignments.iter().any(|&a| a >= k) {
            return Err(Error::param(format!("assignment outside [0, {k})")));
        }
        Ok(Self { assignments, k })
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from one k-means++ seeding; returns (assignments, inertia).
fn kmeans_once<R: Rng + ?Sized>(x: &Matrix, k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let n = x.rows();
    let mut centers: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(x.row(pick).to_vec());
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &centers[centers.len() - 1]));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(x.row(i), center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            // an empty cluster keeps its previous center
            if members.is_empty() {
                continue;
            }
            for (j, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|&i| x[(i, j)]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x.row(i), &centers[assign[i]])).sum();
    (assign, inertia)
}

/// Renumbers clusters by first appearance.
fn canonical(assign: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    assign
        .iter()
        .map(|a| {
            let next = map.len();
            *map.entry(*a).or_insert(next)
        })
        .collect()
}

/// k-means++ seeding, [`KMEANS_RESTARTS`] restarts, lowest inertia kept
/// (earliest restart on ties). Labels are numbered by first appearance.
pub fn kmeans<R: Rng + ?Sized>(x: &Matrix, k: usize, rng: &mut R) -> Result<Partition> {
    if k == 0 || k > x.rows() {
        return Err(Error::param(format!("k = {k} must lie in [1, {}]", x.rows())));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (a, inertia) = kmeans_once(x, k, rng);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((a, inertia));
        }
    }
    Partition::new(canonical(&best.expect("at least one restart").0), k)
}

/// Rows of the `k` smallest-eigenvalue eigenvectors of `D̄^{-1/2}(D̄ − C)D̄^{-1/2}`,
/// `D̄ = diag(Σ_j |C_ij|)` (zero rows use 1).
pub fn signed_spectral_embedding(c: &Matrix, k: usize) -> Result<Matrix> {
    check_symmetric(c, 1e-9)?;
    let n = c.rows();
    if k == 0 || k > n {
        return Err(Error::param(format!("k = {k} must lie in [1, n = {n}]")));
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = c.row(i).iter().map(|v| v.abs()).sum();
            1.0 / if d > 0.0 { d } else { 1.0 }.sqrt()
        })
        .collect();
    let lap = Matrix::from_fn(n, n, |i, j| {
        let dbar = if i == j { 1.0 / (inv_sqrt[i] * inv_sqrt[i]) } else { 0.0 };
        (dbar - c[(i, j)]) * inv_sqrt[i] * inv_sqrt[j]
    });
    Ok(sym_eig(&lap)?.smallest(k))
}

pub fn signed_spectral_clustering<R: Rng + ?Sized>(c: &Matrix, k: usize, rng: &mut R) -> Result<Partition> {
    if k < 2 {
        return Err(Error::param("signed spectral clustering needs k >= 2"));
    }
    kmeans(&signed_spectral_embedding(c, k)?, k, rng)
}

/// Mean silhouette coefficient with Euclidean distances between rows of `x`.
/// Points alone in their cluster score 0, as does a single-cluster partition.
pub fn silhouette(x: &Matrix, assignments: &[usize]) -> f64 {
    let n = x.rows();
    if n == 0 {
        return 0.0;
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..k).map(|c| assignments.iter().filter(|&&a| a == c).count()).collect();
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += sq_dist(x.row(i), x.row(j)).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    total / n as f64
}

/// Candidate `k` with the highest mean silhouette averaged over `mats`
/// (smallest `k` on ties).
pub fn silhouette_select_k_many<R: Rng + ?Sized>(mats: &[Matrix], candidates: &[usize], rng: &mut R) -> Result<usize> {
    if candidates.is_empty() || mats.is_empty() {
        return Err(Error::param("silhouette selection needs candidates and matrices"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() == 1 {
        return Ok(sorted[0]);
    }
    let seeds: Vec<u64> = (0..sorted.len() * mats.len()).map(|_| rng.next_u64()).collect();
    let scores: Vec<f64> = sorted
        .par_iter()
        .enumerate()
        .map(|(ki, &k)| {
            let mut sum = 0.0;
            for (mi, c) in mats.iter().enumerate() {
                let x = signed_spectral_embedding(c, k)?;
                let p = kmeans(&x, k, &mut ChaCha8Rng::seed_from_u64(seeds[ki * mats.len() + mi]))?;
                sum += silhouette(&x, &p.assignments);
            }
            Ok(sum / mats.len() as f64)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(sorted[best])
}

pub fn silhouette_select_k<R: Rng + ?Sized>(c: &Matrix, candidates: &[usize], rng: &mut R) -> Result<usize> {
    silhouette_select_k_many(std::slice::from_ref(c), candidates, rng)
}

/// Adjusted Rand index from the contingency table; 1 when the chance-corrected
/// denominator vanishes (both partitions trivial in the same way) or `n < 2`.
pub fn ari(p1: &Partition, p2: &Partition) -> Result<f64> {
    if p1.len() != p2.len() {
        return Err(Error::param(format!("partitions of {} and {} elements", p1.len(), p2.len())));
    }
    let n = p1.len();
    if n < 2 {
        return Ok(1.0);
    }
    let c2 = |x: usize| (x * x.saturating_sub(1) / 2) as f64;
    let k1 = p1.assignments.iter().max().map_or(0, |m| m + 1);
    let k2 = p2.assignments.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; k1 * k2];
    for (&a, &b) in p1.assignments.iter().zip(&p2.assignments) {
        table[a * k2 + b] += 1;
    }
    let index: f64 = table.iter().map(|&x| c2(x)).sum();
    let rows: f64 = (0..k1).map(|a| c2(table[a * k2..(a + 1) * k2].iter().sum())).sum();
    let cols: f64 = (0..k2).map(|b| c2((0..k1).map(|a| table[a * k2 + b]).sum())).sum();
    let total = c2(n);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    let den = max - expected;
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / den)
}

/// Symmetric `T × T` matrix of pairwise ARI with unit diagonal.
pub fn snapshot_similarity_matrix(partitions: &[Partition]) -> Result<Matrix> {
    let t = partitions.len();
    if t == 0 {
        return Err(Error::param("no partitions"));
    }
    let upper: Vec<Vec<f64>> = (0..t)
        .into_par_iter()
        .map(|i| ((i + 1)..t).map(|j| ari(&partitions[i], &partitions[j])).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let mut m = Matrix::identity(t);
    for i in 0..t {
        for (off, &v) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Normalized spectral clustering of snapshots from a similarity matrix:
/// negative affinities are clipped to 0, the `c` smallest eigenvectors of
/// `I − D^{-1/2} W D^{-1/2}` are row-normalized and clustered by k-means.
pub fn cluster_snapshots<R: Rng + ?Sized>(sim: &Matrix, c_clusters: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_symmetric(sim, 1e-9)?;
    let t = sim.rows();
    if c_clusters == 0 || c_clusters > t {
        return Err(Error::param(format!("cannot form {c_clusters} clusters from {t} snapshots")));
    }
    if c_clusters == 1 {
        return Ok(vec![0; t]);
    }
    let w = sim.map(|v| v.max(0.0));
    // snapshots with identical affinity rows are indistinguishable; with at
    // most `c_clusters` distinct rows the grouping is exact
    let mut distinct: Vec<usize> = Vec::new();
    let mut row_class = Vec::with_capacity(t);
    for i in 0..t {
        match distinct.iter().position(|&r| w.row(r) == w.row(i)) {
            Some(c) => row_class.push(c),
            None => {
                row_class.push(distinct.len());
                distinct.push(i);
            }
        }
    }
    if distinct.len() <= c_clusters {
        return Ok(row_class);
    }
    let inv_sqrt: Vec<f64> = w.row_sums().iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let lap = Matrix::from_fn(t, t, |i, j| f64::from(u8::from(i == j)) - w[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let mut u = sym_eig(&lap)?.smallest(c_clusters);
    for i in 0..t {
        let norm = crate::linalg::norm2(u.row(i));
        if norm > 0.0 {
            u.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(kmeans(&u, c_clusters, rng)?.assignments)
}

/// Relabels each snapshot to the label with the nearest centroid timestamp
/// (earlier centroid on ties) and returns the 1-based timestamps where the
/// relabeled sequence changes, plus the relabeled sequence.
pub fn smooth_labels_to_changepoints(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    if labels.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut sums: std::collections::BTreeMap<usize, (f64, f64)> = std::collections::BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let e = sums.entry(l).or_insert((0.0, 0.0));
        e.0 += (i + 1) as f64;
        e.1 += 1.0;
    }
    let mut centroids: Vec<f64> = sums.values().map(|(s, c)| s / c).collect();
    centroids.sort_by(f64::total_cmp);
    let relabeled: Vec<usize> = (1..=labels.len())
        .map(|t| {
            let mut best = 0;
            for (c, &m) in centroids.iter().enumerate() {
                if (t as f64 - m).abs() < (t as f64 - centroids[best]).abs() {
                    best = c;
                }
            }
            best
        })
        .collect();
    let cps = (1..relabeled.len()).filter(|&i| relabeled[i] != relabeled[i - 1]).map(|i| i + 1).collect();
    (cps, relabeled)
}

/// Shannon entropy of the L1-normalized principal eigenvector.
pub fn eigen_entropy(c: &Matrix) -> Result<f64> {
    if c.max_abs() == 0.0 {
        return Err(Error::param("eigen-entropy of a zero matrix"));
    }
    let v = sym_eig(c)?.eigenvector(0);
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    Ok(-v
        .iter()
        .map(|x| x.abs() / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// How the per-snapshot cluster count is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterCount {
    Fixed(usize),
    /// Silhouette selection over the candidates, shared by all snapshots.
    Silhouette(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfsupOutcome {
    pub k: usize,
    pub snapshot_labels: Vec<usize>,
    pub smoothed_labels: Vec<usize>,
    pub change_points: Vec<usize>,
}

/// Full pre-estimation: partitions per correlation matrix, ARI similarity,
/// `c_clusters` snapshot clusters, temporal smoothing.
pub fn selfsup_changepoints(mats: &[Matrix], k: &ClusterCount, c_clusters: usize, rng: &mut dyn RngCore) -> Result<SelfsupOutcome> {
    if mats.is_empty() {
        return Err(Error::param("no correlation matrices"));
    }
    let k = match k {
        ClusterCount::Fixed(k) => *k,
        ClusterCount::Silhouette(cands) => silhouette_select_k_many(mats, cands, rng)?,
    };
    let seeds: Vec<u64> = (0..mats.len()).map(|_| rng.next_u64()).collect();
    let partitions: Vec<Partition> = mats
        .par_iter()
        .zip(&seeds)
        .map(|(c, &s)| signed_spectral_clustering(c, k, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect::<Result<_>>()?;
    let sim = snapshot_similarity_matrix(&partitions)?;
    let snapshot_labels = cluster_snapshots(&sim, c_clusters, rng)?;
    let (change_points, smoothed_labels) = smooth_labels_to_changepoints(&snapshot_labels);
    Ok(SelfsupOutcome { k, snapshot_labels, smoothed_labels, change_points })
}
