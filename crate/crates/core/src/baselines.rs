//! Classical comparison detectors: pairwise graph distances/similarities fed
//! through the average statistic, and windowed spectral and CUSUM statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{similarity_statistic, Orientation, StatisticSeries};
use crate::error::{Error, Result};
use crate::graph::{combinatorial_laplacian, normalized_laplacian, DynamicNetwork, Graph};
use crate::linalg::{inverse, operator_norm, orthogonal_polar_factor, sym_eig, top_singular_values, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Frobenius,
    Procrustes,
    DeltaCon,
    Wl,
    ScNcpd,
    Lad,
    Cusum,
    Cusum2,
}

impl Baseline {
    pub const ALL: [Baseline; 8] = [
        Baseline::Frobenius,
        Baseline::Procrustes,
        Baseline::DeltaCon,
        Baseline::Wl,
        Baseline::ScNcpd,
        Baseline::Lad,
        Baseline::Cusum,
        Baseline::Cusum2,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Baseline::Frobenius => "frobenius",
            Baseline::Procrustes => "procrustes",
            Baseline::DeltaCon => "deltacon",
            Baseline::Wl => "wl",
            Baseline::ScNcpd => "sc-ncpd",
            Baseline::Lad => "lad",
            Baseline::Cusum => "cusum",
            Baseline::Cusum2 => "cusum2",
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            Baseline::DeltaCon | Baseline::Wl | Baseline::ScNcpd => Orientation::Similarity,
            _ => Orientation::Distance,
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.id() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::param(format!("unknown baseline {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub k_spectral: usize,
    /// L′; `None` means L/2.
    pub window_half: Option<usize>,
    /// `None` means 1/(1 + max degree) over the compared graphs.
    pub deltacon_epsilon: Option<f64>,
    pub wl_iterations: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { k_spectral: 6, window_half: None, deltacon_epsilon: None, wl_iterations: 5 }
    }
}

impl BaselineConfig {
    pub fn half_window(&self, l: usize) -> usize {
        self.window_half.unwrap_or(l / 2).max(1)
    }
}

fn same_size(g1: &Graph, g2: &Graph) -> Result<()> {
    if g1.n() != g2.n() {
        return Err(Error::param(format!("graphs have {} and {} nodes", g1.n(), g2.n())));
    }
    Ok(())
}

pub fn frobenius_distance(g1: &Graph, g2: &Graph) -> Result<f64> {
    same_size(g1, g2)?;
    Ok(g1.adjacency().sub(g2.adjacency())?.frobenius_norm())
}

/// Eigenvectors of the `k` largest eigenvalues of the normalized Laplacian.
pub fn spectral_embedding(g: &Graph, k: usize) -> Result<Matrix> {
    if k == 0 || k > g.n() {
        return Err(Error::param(format!("k = {k} must lie in [1, n = {}]", g.n())));
    }
    Ok(sym_eig(&normalized_laplacian(g))?.largest(k))
}

/// `min_O ‖U1 − U2 O‖_F` over orthogonal `O`.
pub fn aligned_distance(u1: &Matrix, u2: &Matrix) -> Result<f64> {
    let o = orthogonal_polar_factor(&u2.t_matmul(u1)?)?;
    Ok(u1.sub(&u2.matmul(&o)?)?.frobenius_norm())
}

pub fn procrustes_distance(g1: &Graph, g2: &Graph, k: usize) -> Result<f64> {
    same_size(g1, g2)?;
    aligned_distance(&spectral_embedding(g1, k)?, &spectral_embedding(g2, k)?)
}

pub fn deltacon_default_epsilon(graphs: &[&Graph]) -> f64 {
    let dmax = graphs.iter().flat_map(|g| g.degrees()).fold(0.0, f64::max);
    1.0 / (1.0 + dmax)
}

/// Fast-belief-propagation affinity `(I + ε²D − εA)^{-1}`.
pub fn fbp_operator(g: &Graph, epsilon: f64) -> Result<Matrix> {
    let a = g.adjacency();
    let deg = g.degrees();
    let m = Matrix::from_fn(g.n(), g.n(), |i, j| {
        let d = if i == j { 1.0 + epsilon * epsilon * deg[i] } else { 0.0 };
        d - epsilon * a[(i, j)]
    });
    inverse(&m)
}

/// `1 / (1 + d)` with `d` the Matusita distance between root-clamped affinities.
pub fn matusita_similarity(s1: &Matrix, s2: &Matrix) -> Result<f64> {
    if s1.rows() != s2.rows() || s1.cols() != s2.cols() {
        return Err(Error::dim("affinity shapes differ"));
    }
    let ss: f64 = s1
        .data()
        .iter()
        .zip(s2.data())
        .map(|(&x, &y)| (x.max(0.0).sqrt() - y.max(0.0).sqrt()).powi(2))
        .sum();
    Ok(1.0 / (1.0 + ss.sqrt()))
}

pub fn deltacon_similarity(g1: &Graph, g2: &Graph, epsilon: Option<f64>) -> Result<f64> {
    same_size(g1, g2)?;
    let eps = epsilon.unwrap_or_else(|| deltacon_default_epsilon(&[g1, g2]));
    matusita_similarity(&fbp_operator(g1, eps)?, &fbp_operator(g2, eps)?)
}

/// Sparse WL feature vector: (iteration, label) → count.
pub type WlFeatures = BTreeMap<(usize, u64), f64>;

/// WL subtree features of several graphs with one shared label dictionary,
/// so label identity is comparable across all of them.
///
/// Every node starts with the same label; a node's neighbours include itself
/// only through a self-loop.
pub fn wl_features(graphs: &[&Graph], iterations: usize) -> Vec<WlFeatures> {
    let mut labels: Vec<Vec<u64>> = graphs.iter().map(|g| vec![0; g.n()]).collect();
    let mut feats: Vec<WlFeatures> = vec![WlFeatures::new(); graphs.len()];
    let neighbours: Vec<Vec<Vec<usize>>> = graphs
        .iter()
        .map(|g| (0..g.n()).map(|i| (0..g.n()).filter(|&j| g.adjacency()[(i, j)] != 0.0).collect()).collect())
        .collect();
    for it in 0..=iterations {
        for (f, lab) in feats.iter_mut().zip(&labels) {
            for &l in lab {
                *f.entry((it, l)).or_insert(0.0) += 1.0;
            }
        }
        if it == iterations {
            break;
        }
        let mut dictionary: HashMap<(u64, Vec<u64>), u64> = HashMap::new();
        let mut next = Vec::with_capacity(graphs.len());
        for (gi, lab) in labels.iter().enumerate() {
            let mut new = Vec::with_capacity(lab.len());
            for (i, nb) in neighbours[gi].iter().enumerate() {
                let mut multiset: Vec<u64> = nb.iter().map(|&j| lab[j]).collect();
                multiset.sort_unstable();
                let fresh = dictionary.len() as u64;
                new.push(*dictionary.entry((lab[i], multiset)).or_insert(fresh));
            }
            next.push(new);
        }
        labels = next;
    }
    feats
}

fn sparse_dot(a: &WlFeatures, b: &WlFeatures) -> f64 {
    a.iter().filter_map(|(k, v)| b.get(k).map(|w| v * w)).sum()
}

/// Normalized kernel `k(a,b) / sqrt(k(a,a) k(b,b))`; 0 if either norm vanishes.
pub fn wl_normalized(a: &WlFeatures, b: &WlFeatures) -> f64 {
    let den = (sparse_dot(a, a) * sparse_dot(b, b)).sqrt();
    if den == 0.0 { 0.0 } else { sparse_dot(a, b) / den }
}

pub fn wl_kernel(g1: &Graph, g2: &Graph, iterations: usize) -> f64 {
    let f = wl_features(&[g1, g2], iterations);
    wl_normalized(&f[0], &f[1])
}

fn check_windows(t_len: usize, need: usize, what: &str) -> Result<()> {
    if t_len < need {
        return Err(Error::param(format!("{what} needs at least {need} snapshots, got {t_len}")));
    }
    Ok(())
}

/// Spectral-clustering statistic: with `Ū_b`, `Ū_f` the entrywise means of
/// bottom-`k` normalized-Laplacian eigenvectors over `G_{t−L′..t−1}` and
/// `G_{t..t+L′−1}`, `z_t = ‖Ū_bᵀ Ū_f‖_F / k` for `t = L′+1..T−L′+1`.
pub fn sc_ncpd_statistic(net: &DynamicNetwork, k: usize, half_window: usize) -> Result<StatisticSeries> {
    if half_window == 0 {
        return Err(Error::param("half window must be positive"));
    }
    let t_len = net.len();
    check_windows(t_len, 2 * half_window, "sc-ncpd")?;
    let k = k.min(net.n());
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    let feats: Vec<Matrix> = net
        .snapshots()
        .par_iter()
        .map(|g| Ok(sym_eig(&normalized_laplacian(g))?.smallest(k)))
        .collect::<Result<_>>()?;
    let mean = |lo: usize, hi: usize| {
        let mut acc = Matrix::zeros(net.n(), k);
        for f in &feats[lo - 1..hi] {
            acc.axpy(1.0, f).expect("equal shapes");
        }
        acc.scale(1.0 / (hi - lo + 1) as f64)
    };
    let lp = half_window;
    let values = ((lp + 1)..=(t_len - lp + 1))
        .map(|t| Ok(mean(t - lp, t - 1).t_matmul(&mean(t, t + lp - 1))?.frobenius_norm() / k as f64))
        .collect::<Result<_>>()?;
    Ok(StatisticSeries::new(lp + 1, values, Orientation::Similarity))
}

/// L2-normalized top-`k` singular values of `D − A` (zero vector for an empty graph).
pub fn lad_signature(g: &Graph, k: usize) -> Result<Vec<f64>> {
    let k = k.min(g.n());
    let mut s = top_singular_values(&combinatorial_laplacian(g), k)?;
    let norm = crate::linalg::norm2(&s);
    if norm > 0.0 {
        s.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(s)
}

/// `Z_t = 1 − |σ̃_t · σ_t|` for `t = W+1..T`, `σ̃_t` the re-normalized mean of
/// the previous `window` signatures.
pub fn lad_statistic(net: &DynamicNetwork, k: usize, window: usize) -> Result<StatisticSeries> {
    if window == 0 || net.len() <= window {
        return Err(Error::param(format!("LAD window {window} must lie in [1, T)")));
    }
    let sigs: Vec<Vec<f64>> = net.snapshots().par_iter().map(|g| lad_signature(g, k)).collect::<Result<_>>()?;
    let dim = sigs[0].len();
    let mut values = Vec::with_capacity(net.len() - window);
    for t in (window + 1)..=net.len() {
        let mut avg = vec![0.0; dim];
        for s in &sigs[t - 1 - window..t - 1] {
            for (a, v) in avg.iter_mut().zip(s) {
                *a += v / window as f64;
            }
        }
        let norm = crate::linalg::norm2(&avg);
        let cur = &sigs[t - 1];
        if norm == 0.0 || crate::linalg::norm2(cur) == 0.0 {
            log::warn!("LAD: empty spectral signature at t = {t}");
            values.push(1.0);
            continue;
        }
        values.push(1.0 - (crate::linalg::dot(&avg, cur) / norm).abs());
    }
    Ok(StatisticSeries::new(window + 1, values, Orientation::Distance))
}

/// `(1/√(2L′)) (Σ_{s=u−L′+1..u} A_s − Σ_{s=u+1..u+L′} A_s)` over `mats` (0-based `u`
/// indexes the last backward element).
fn cusum_matrix(mats: &[&Matrix], u: usize, lp: usize) -> Matrix {
    let n = mats[0].rows();
    let mut c = Matrix::zeros(n, n);
    for s in (u + 1 - lp)..=u {
        c.axpy(1.0, mats[s]).expect("equal shapes");
    }
    for s in (u + 1)..=(u + lp) {
        c.axpy(-1.0, mats[s]).expect("equal shapes");
    }
    c.scale(1.0 / ((2 * lp) as f64).sqrt())
}

/// Split CUSUM statistic: CUSUM matrices on the even (`A_u = G_{2u}`) and odd
/// (`B_u = G_{2u−1}`) subsequences, paired by subsequence index `u`, with
/// `z = ⟨C_B/‖C_B‖_F, C_A⟩_F` (0 when `C_B = 0`).
///
/// The value for split index `u` (forward windows starting at `G_{2u+1}`,
/// `G_{2u+2}`) is reported at both `t = 2u+1` and `t = 2u+2`.
pub fn cusum_statistic(net: &DynamicNetwork, half_window: usize) -> Result<StatisticSeries> {
    if half_window == 0 {
        return Err(Error::param("half window must be positive"));
    }
    let t_len = net.len();
    check_windows(t_len, 4 * half_window, "cusum")?;
    let lp = half_window;
    let even: Vec<&Matrix> = (1..=t_len / 2).map(|u| net.at(2 * u).adjacency()).collect();
    let odd: Vec<&Matrix> = (1..=t_len.div_ceil(2)).map(|u| net.at(2 * u - 1).adjacency()).collect();
    let m = even.len();
    // 1-based split index u in [L′, m − L′]
    let per_u: Vec<f64> = (lp..=(m - lp))
        .into_par_iter()
        .map(|u| {
            let ca = cusum_matrix(&even, u - 1, lp);
            let cb = cusum_matrix(&odd, u - 1, lp);
            let nb = cb.frobenius_norm();
            if nb == 0.0 { 0.0 } else { cb.frobenius_dot(&ca).expect("equal shapes") / nb }
        })
        .collect();
    let start = 2 * lp + 1;
    let end = (2 * (m - lp) + 2).min(t_len);
    let values = (start..=end).map(|t| per_u[(t - 1) / 2 - lp]).collect();
    Ok(StatisticSeries::new(start, values, Orientation::Distance))
}

/// Operator norm of the CUSUM matrix on the full sequence, reported at the
/// first forward snapshot: `t = L′+1..T−L′+1`.
pub fn cusum2_statistic(net: &DynamicNetwork, half_window: usize) -> Result<StatisticSeries> {
    if half_window == 0 {
        return Err(Error::param("half window must be positive"));
    }
    let t_len = net.len();
    check_windows(t_len, 2 * half_window, "cusum2")?;
    let lp = half_window;
    let mats: Vec<&Matrix> = net.snapshots().iter().map(Graph::adjacency).collect();
    let values = ((lp + 1)..=(t_len - lp + 1))
        .into_par_iter()
        .map(|t| operator_norm(&cusum_matrix(&mats, t - 2, lp)))
        .collect::<Result<_>>()?;
    Ok(StatisticSeries::new(lp + 1, values, Orientation::Distance))
}

/// Statistic of `baseline` on `net` with window `L` (pairwise measures go
/// through the average statistic with window `L`).
pub fn baseline_statistic(net: &DynamicNetwork, baseline: Baseline, l: usize, config: &BaselineConfig) -> Result<StatisticSeries> {
    let t_len = net.len();
    if l == 0 || l >= t_len {
        return Err(Error::param(format!("window L = {l} must lie in [1, T = {t_len})")));
    }
    let snaps = net.snapshots();
    let k = config.k_spectral;
    let with_orientation = |mut s: StatisticSeries| {
        s.orientation = baseline.orientation();
        s
    };
    match baseline {
        Baseline::Frobenius => {
            similarity_statistic(t_len, l, |a, b| frobenius_distance(net.at(a), net.at(b))).map(with_orientation)
        }
        Baseline::Procrustes => {
            let k = k.min(net.n());
            let emb: Vec<Matrix> = snaps.par_iter().map(|g| spectral_embedding(g, k)).collect::<Result<_>>()?;
            similarity_statistic(t_len, l, |a, b| aligned_distance(&emb[a - 1], &emb[b - 1])).map(with_orientation)
        }
        Baseline::DeltaCon => {
            let refs: Vec<&Graph> = snaps.iter().collect();
            let eps = config.deltacon_epsilon.unwrap_or_else(|| deltacon_default_epsilon(&refs));
            let ops: Vec<Matrix> = snaps.par_iter().map(|g| fbp_operator(g, eps)).collect::<Result<_>>()?;
            similarity_statistic(t_len, l, |a, b| matusita_similarity(&ops[a - 1], &ops[b - 1])).map(with_orientation)
        }
        Baseline::Wl => {
            let refs: Vec<&Graph> = snaps.iter().collect();
            let feats = wl_features(&refs, config.wl_iterations);
            similarity_statistic(t_len, l, |a, b| Ok(wl_normalized(&feats[a - 1], &feats[b - 1]))).map(with_orientation)
        }
        Baseline::ScNcpd => sc_ncpd_statistic(net, k, config.half_window(l)),
        Baseline::Lad => lad_statistic(net, k, l),
        Baseline::Cusum => cusum_statistic(net, config.half_window(l)),
        Baseline::Cusum2 => cusum2_statistic(net, config.half_window(l)),
    }
}
