//! Dynamic stochastic block models and the four change-point scenarios
//! (merge, two births, swaps).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DynamicNetwork, Graph};
use crate::linalg::Matrix;

pub const MERGE_Q: f64 = 0.02;
pub const BIRTH_Q: f64 = 0.03;
pub const BIRTH_P: f64 = 0.1;
pub const SWAP_P: f64 = 0.1;
pub const SWAP_Q: f64 = 0.05;

/// Stochastic block model: per-node community plus a block connectivity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    memberships: Vec<usize>,
    connectivity: Matrix,
}

impl SbmSpec {
    /// Assortative model `C = (p - q) I + q 11ᵀ`.
    pub fn planted(memberships: Vec<usize>, p: f64, q: f64) -> Result<Self> {
        let k = memberships.iter().max().map_or(1, |m| m + 1);
        let conn = Matrix::from_fn(k, k, |a, b| if a == b { p } else { q });
        Self::with_connectivity(memberships, conn)
    }

    pub fn with_connectivity(memberships: Vec<usize>, connectivity: Matrix) -> Result<Self> {
        let k = connectivity.rows();
        if !connectivity.is_square() || connectivity.asymmetry() > 0.0 {
            return Err(Error::param("connectivity must be a symmetric square matrix"));
        }
        if connectivity.data().iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::param("edge probabilities must lie in [0, 1]"));
        }
        if memberships.iter().any(|&m| m >= k) {
            return Err(Error::param(format!("membership index out of range for {k} blocks")));
        }
        Ok(Self { memberships, connectivity })
    }

    pub fn erdos_renyi(n: usize, q: f64) -> Result<Self> {
        Self::planted(vec![0; n], q, q)
    }

    pub fn n(&self) -> usize {
        self.memberships.len()
    }

    pub fn memberships(&self) -> &[usize] {
        &self.memberships
    }

    pub fn connectivity(&self) -> &Matrix {
        &self.connectivity
    }

    pub fn edge_probability(&self, i: usize, j: usize) -> f64 {
        self.connectivity[(self.memberships[i], self.memberships[j])]
    }

    /// Expected number of edges (no self-loops).
    pub fn expected_edges(&self) -> f64 {
        let n = self.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += self.edge_probability(i, j);
            }
        }
        total
    }
}

/// Assigns `n` nodes to `k` contiguous, equal-size (up to rounding) blocks.
pub fn equal_blocks(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i * k / n).collect()
}

/// Draws one graph: independent Bernoulli edges, no self-loops.
pub fn sample_sbm<R: Rng + ?Sized>(spec: &SbmSpec, rng: &mut R) -> Graph {
    let n = spec.n();
    let mut adj = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = spec.edge_probability(i, j);
            if p > 0.0 && rng.random::<f64>() < p {
                adj[(i, j)] = 1.0;
                adj[(j, i)] = 1.0;
            }
        }
    }
    Graph::new(adj, None).expect("sampled adjacency is symmetric and binary")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Four equal clusters merge pairwise into two; level = intra probability p.
    Merge,
    /// Erdős–Rényi to a planted dense community; level = community size s.
    Birth1,
    /// Planted community of fixed size n/4; level = its intra probability p.
    Birth2,
    /// Node pairs exchange communities; level = proportion h of swapping pairs.
    Swaps,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [ScenarioKind::Merge, ScenarioKind::Birth1, ScenarioKind::Birth2, ScenarioKind::Swaps];
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Merge => "merge",
            ScenarioKind::Birth1 => "birth1",
            ScenarioKind::Birth2 => "birth2",
            ScenarioKind::Swaps => "swaps",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "merge" => Ok(ScenarioKind::Merge),
            "birth1" | "birth-1" => Ok(ScenarioKind::Birth1),
            "birth2" | "birth-2" => Ok(ScenarioKind::Birth2),
            "swaps" | "swap" => Ok(ScenarioKind::Swaps),
            _ => Err(Error::param(format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// p for merge and birth2, s for birth1, h for swaps.
    pub level: f64,
    pub n: usize,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, level: f64, n: usize) -> Self {
        Self { kind, level, n }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::param("scenarios need at least 4 nodes"));
        }
        let ok = match self.kind {
            ScenarioKind::Merge | ScenarioKind::Birth2 | ScenarioKind::Swaps => (0.0..=1.0).contains(&self.level),
            ScenarioKind::Birth1 => {
                self.level >= 0.0 && self.level.fract() == 0.0 && self.level <= (self.n / 2) as f64
            }
        };
        if !ok {
            return Err(Error::param(format!("level {} is outside the legal range of {}", self.level, self.kind)));
        }
        Ok(())
    }
}

/// Generating models before and after the change-point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModels {
    pub pre: SbmSpec,
    pub post: SbmSpec,
}

impl ScenarioModels {
    pub fn model(&self, which: Regime) -> &SbmSpec {
        match which {
            Regime::Pre => &self.pre,
            Regime::Post => &self.post,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Pre,
    Post,
}

/// Builds the before/after models of a scenario.
///
/// Only the swaps scenario consumes randomness (the choice of swapping pairs).
pub fn scenario_models<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<ScenarioModels> {
    spec.validate()?;
    let n = spec.n;
    match spec.kind {
        ScenarioKind::Merge => {
            let four = equal_blocks(n, 4);
            let two: Vec<usize> = four.iter().map(|b| b / 2).collect();
            Ok(ScenarioModels {
                pre: SbmSpec::planted(four, spec.level, MERGE_Q)?,
                post: SbmSpec::planted(two, spec.level, MERGE_Q)?,
            })
        }
        ScenarioKind::Birth1 => birth_models(n, spec.level as usize, BIRTH_P),
        ScenarioKind::Birth2 => birth_models(n, n / 4, spec.level),
        ScenarioKind::Swaps => {
            let pre = equal_blocks(n, 4);
            let post = swap_memberships(&pre, (spec.level * n as f64 / 2.0).floor() as usize, rng)?;
            Ok(ScenarioModels {
                pre: SbmSpec::planted(pre, SWAP_P, SWAP_Q)?,
                post: SbmSpec::planted(post, SWAP_P, SWAP_Q)?,
            })
        }
    }
}

fn birth_models(n: usize, s: usize, p: f64) -> Result<ScenarioModels> {
    if s > n / 2 {
        return Err(Error::param(format!("planted community size {s} exceeds n/2 = {}", n / 2)));
    }
    let pre = SbmSpec::erdos_renyi(n, BIRTH_Q)?;
    if s == 0 {
        return Ok(ScenarioModels { post: pre.clone(), pre });
    }
    // the dense community is the last s nodes
    let memberships = (0..n).map(|i| usize::from(i >= n - s)).collect();
    let conn = Matrix::from_rows(&[vec![BIRTH_Q, BIRTH_Q], vec![BIRTH_Q, p]])?;
    Ok(ScenarioModels { pre, post: SbmSpec::with_connectivity(memberships, conn)? })
}

/// Exchanges the memberships of `pairs` disjoint node pairs drawn uniformly
/// among pairs whose nodes sit in different communities.
pub fn swap_memberships<R: Rng + ?Sized>(memberships: &[usize], pairs: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = memberships.len();
    if 2 * pairs > n {
        return Err(Error::param(format!("cannot draw {pairs} disjoint pairs from {n} nodes")));
    }
    let mut out = memberships.to_vec();
    let mut free: Vec<usize> = (0..n).collect();
    for _ in 0..pairs {
        let mixed = free.iter().any(|&u| memberships[u] != memberships[free[0]]);
        if !mixed {
            return Err(Error::param("no cross-community pair left to swap"));
        }
        let (a, b) = loop {
            let a = rng.random_range(0..free.len());
            let b = rng.random_range(0..free.len());
            if memberships[free[a]] != memberships[free[b]] {
                break (a, b);
            }
        };
        let (u, v) = (free[a], free[b]);
        out.swap(u, v);
        free.retain(|&x| x != u && x != v);
    }
    Ok(out)
}

/// Default change-point draw: uniform on `[ceil(T/4), floor(3T/4)]`, i.e. `[25, 75]` for `T = 100`.
pub fn default_tau_range(t_len: usize) -> (usize, usize) {
    let lo = t_len.div_ceil(4).max(2);
    let hi = (3 * t_len / 4).max(lo);
    (lo, hi)
}

/// Samples snapshots `1..tau-1` from the pre model and `tau..=T` from the post model.
pub fn sample_sequence<R: Rng + ?Sized>(
    models: &ScenarioModels,
    t_len: usize,
    tau: Option<usize>,
    rng: &mut R,
) -> Result<DynamicNetwork> {
    let tau = match tau {
        Some(tau) => tau,
        None => {
            let (lo, hi) = default_tau_range(t_len);
            rng.random_range(lo..=hi)
        }
    };
    if tau <= 1 || tau > t_len {
        return Err(Error::param(format!("change-point {tau} must lie in (1, {t_len}]")));
    }
    let snapshots = (1..=t_len)
        .map(|t| sample_sbm(if t < tau { &models.pre } else { &models.post }, rng))
        .collect();
    DynamicNetwork::new(snapshots, Some(vec![tau]), None)
}

pub fn generate_sequence<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    t_len: usize,
    tau: Option<usize>,
    rng: &mut R,
) -> Result<DynamicNetwork> {
    let models = scenario_models(spec, rng)?;
    sample_sequence(&models, t_len, tau, rng)
}

/// Two independently drawn graphs with the regimes they came from.
#[derive(Debug, Clone)]
pub struct GraphPair {
    pub first: Graph,
    pub second: Graph,
    pub regimes: [Regime; 2],
    pub label: u8,
}

/// Labeled graph pairs with a 60/20/20 train/validation/test split of indices.
#[derive(Debug, Clone)]
pub struct GraphPairDataset {
    pub pairs: Vec<GraphPair>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub const PAIR_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// Balanced pair dataset: half the pairs share a model (chosen uniformly),
/// half have one graph from each.
pub fn generate_pair_dataset<R: Rng + ?Sized>(
    models: &ScenarioModels,
    n_pairs: usize,
    rng: &mut R,
) -> Result<GraphPairDataset> {
    if !n_pairs.is_multiple_of(2) {
        return Err(Error::param(format!("n_pairs must be even, got {n_pairs}")));
    }
    let mut regimes = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs / 2 {
        let r = if rng.random::<bool>() { Regime::Pre } else { Regime::Post };
        regimes.push([r, r]);
    }
    for _ in 0..n_pairs / 2 {
        regimes.push(if rng.random::<bool>() { [Regime::Pre, Regime::Post] } else { [Regime::Post, Regime::Pre] });
    }
    regimes.shuffle(rng);
    let pairs = regimes
        .into_iter()
        .map(|r| GraphPair {
            first: sample_sbm(models.model(r[0]), rng),
            second: sample_sbm(models.model(r[1]), rng),
            regimes: r,
            label: u8::from(r[0] == r[1]),
        })
        .collect();
    let n_train = (PAIR_SPLIT.0 * n_pairs as f64 + 1e-9).floor() as usize;
    let n_val = (PAIR_SPLIT.1 * n_pairs as f64 + 1e-9).floor() as usize;
    Ok(GraphPairDataset {
        pairs,
        train: (0..n_train).collect(),
        validation: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n_pairs).collect(),
    })
}
