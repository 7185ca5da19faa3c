//! Graph snapshots, dynamic networks, GCN preprocessing and positional
//! encodings.
//!
//! Timestamps are 1-based throughout the crate: snapshot `t` lives at index
//! `t - 1` of [`DynamicNetwork::snapshots`].

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Matrix};

const SYMMETRY_TOL: f64 = 1e-12;

/// One snapshot: a symmetric nonnegative adjacency and optional node attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Matrix,
    attributes: Option<Matrix>,
}

impl Graph {
    pub fn new(adjacency: Matrix, attributes: Option<Matrix>) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::dim(format!(
                "adjacency must be square, got {}x{}",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        let asym = adjacency.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        if adjacency.data().iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::param("adjacency entries must be finite and nonnegative"));
        }
        if let Some(attrs) = &attributes {
            if attrs.rows() != adjacency.rows() {
                return Err(Error::dim(format!(
                    "attribute matrix has {} rows for {} nodes",
                    attrs.rows(),
                    adjacency.rows()
                )));
            }
        }
        Ok(Self { adjacency, attributes })
    }

    pub fn empty(n: usize) -> Self {
        Self { adjacency: Matrix::zeros(n, n), attributes: None }
    }

    /// Binary graph from an undirected edge list; `(i, i)` adds a self-loop.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Matrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::param(format!("edge ({i},{j}) out of range for n={n}")));
            }
            adj[(i, j)] = 1.0;
            adj[(j, i)] = 1.0;
        }
        Ok(Self { adjacency: adj, attributes: None })
    }

    pub fn complete(n: usize) -> Self {
        let adj = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        Self { adjacency: adj, attributes: None }
    }

    pub fn with_attributes(mut self, attributes: Matrix) -> Result<Self> {
        if attributes.rows() != self.n() {
            return Err(Error::dim("attribute rows must match node count"));
        }
        self.attributes = Some(attributes);
        Ok(self)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    #[inline]
    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    #[inline]
    pub fn attributes(&self) -> Option<&Matrix> {
        self.attributes.as_ref()
    }

    /// Weighted degrees `A·1`.
    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency.row_sums()
    }

    pub fn is_binary(&self) -> bool {
        self.adjacency.data().iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Upper-triangle edges `(i, j)` with `i <= j` and nonzero weight.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i..n {
                if self.adjacency[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().iter().filter(|(i, j)| i != j).count()
    }

    /// True when every node is reachable from node 0 (self-loops ignored).
    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for (v, &w) in self.adjacency.row(u).iter().enumerate() {
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = diag((A + I)·1)`.
pub fn normalized_augmented_adjacency(g: &Graph) -> Matrix {
    let n = g.n();
    let a = g.adjacency();
    let inv_sqrt: Vec<f64> = a.row_sums().iter().map(|d| 1.0 / (d + 1.0).sqrt()).collect();
    Matrix::from_fn(n, n, |i, j| {
        let aug = a[(i, j)] + if i == j { 1.0 } else { 0.0 };
        inv_sqrt[i] * aug * inv_sqrt[j]
    })
}

/// Degrees with zeros replaced by one, so isolated nodes stay finite under inversion.
fn safe_degrees(g: &Graph) -> Vec<f64> {
    g.degrees().into_iter().map(|d| if d > 0.0 { d } else { 1.0 }).collect()
}

/// Symmetric normalized Laplacian `I - D^{-1/2} A D^{-1/2}` (isolated nodes use degree 1).
pub fn normalized_laplacian(g: &Graph) -> Matrix {
    let n = g.n();
    let a = g.adjacency();
    let inv_sqrt: Vec<f64> = safe_degrees(g).iter().map(|d| 1.0 / d.sqrt()).collect();
    Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * a[(i, j)] * inv_sqrt[j]
    })
}

/// Unnormalized Laplacian `D - A`.
pub fn combinatorial_laplacian(g: &Graph) -> Matrix {
    let deg = g.degrees();
    let a = g.adjacency();
    Matrix::from_fn(g.n(), g.n(), |i, j| if i == j { deg[i] - a[(i, j)] } else { -a[(i, j)] })
}

/// Synthetic node features for unattributed graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncodingKind {
    /// Node degree, one column.
    Degree,
    /// Return probabilities `(R_ii, R²_ii, …, R^k_ii)` of the walk `R = A D^{-1}`.
    RandomWalk { k: usize },
    /// Normalized-Laplacian eigenvectors with the smallest eigenvalues.
    Laplacian { k: usize },
    /// One-hot node identity.
    Identity,
}

impl EncodingKind {
    /// Feature dimension on a graph with `n` nodes.
    pub fn dim(&self, n: usize) -> usize {
        match *self {
            EncodingKind::Degree => 1,
            EncodingKind::RandomWalk { k } | EncodingKind::Laplacian { k } => k,
            EncodingKind::Identity => n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EncodingKind::RandomWalk { k: 0 } | EncodingKind::Laplacian { k: 0 } => {
                Err(Error::param("encoding order k must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodingKind::Degree => write!(f, "degree"),
            EncodingKind::RandomWalk { k } => write!(f, "random-walk:{k}"),
            EncodingKind::Laplacian { k } => write!(f, "laplacian:{k}"),
            EncodingKind::Identity => write!(f, "identity"),
        }
    }
}

impl FromStr for EncodingKind {
    type Err = Error;

    /// Accepts `degree`, `identity`, `random-walk[:k]`, `laplacian[:k]` (k defaults to 8).
    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = match s.split_once(':') {
            Some((name, k)) => {
                let k = k.parse::<usize>().map_err(|_| Error::param(format!("bad encoding order in {s:?}")))?;
                (name, Some(k))
            }
            None => (s, None),
        };
        let kind = match (name.to_ascii_lowercase().as_str(), k) {
            ("degree", None) => EncodingKind::Degree,
            ("identity", None) => EncodingKind::Identity,
            ("random-walk" | "rw", k) => EncodingKind::RandomWalk { k: k.unwrap_or(8) },
            ("laplacian" | "lap", k) => EncodingKind::Laplacian { k: k.unwrap_or(8) },
            _ => return Err(Error::param(format!("unknown encoding {s:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Positional encoding `H^(0)` of `g`.
pub fn positional_encoding(g: &Graph, kind: EncodingKind) -> Result<Matrix> {
    kind.validate()?;
    let n = g.n();
    Ok(match kind {
        EncodingKind::Degree => Matrix::column_vector(&g.degrees()),
        EncodingKind::Identity => Matrix::identity(n),
        EncodingKind::RandomWalk { k } => random_walk_encoding(g, k)?,
        EncodingKind::Laplacian { k } => laplacian_encoding(g, k)?,
    })
}

fn random_walk_encoding(g: &Graph, k: usize) -> Result<Matrix> {
    let n = g.n();
    let deg = safe_degrees(g);
    let a = g.adjacency();
    let walk = Matrix::from_fn(n, n, |i, j| a[(i, j)] / deg[j]);
    let mut out = Matrix::zeros(n, k);
    let mut power = walk.clone();
    for step in 0..k {
        for i in 0..n {
            out[(i, step)] = power[(i, i)];
        }
        if step + 1 < k {
            power = walk.matmul(&power)?;
        }
    }
    Ok(out)
}

fn laplacian_encoding(g: &Graph, k: usize) -> Result<Matrix> {
    let n = g.n();
    let eig = sym_eig(&normalized_laplacian(g))?;
    // ascending eigenvalue order; the first one is trivial on a connected graph
    let skip = usize::from(g.is_connected() && n > 1);
    let mut out = Matrix::zeros(n, k);
    for col in 0..k {
        let pos = col + skip;
        if pos >= n {
            break;
        }
        let src = n - 1 - pos;
        for i in 0..n {
            out[(i, col)] = eig.eigenvectors[(i, src)];
        }
    }
    Ok(out)
}

/// Validates that `sigma` is a bijection on `0..n`.
pub fn check_permutation(sigma: &[usize], n: usize) -> Result<()> {
    if sigma.len() != n {
        return Err(Error::param(format!("permutation has length {} for n={n}", sigma.len())));
    }
    let mut seen = vec![false; n];
    for &s in sigma {
        if s >= n || seen[s] {
            return Err(Error::param("mapping is not a bijection"));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Relabels nodes: old node `i` becomes node `sigma[i]`.
pub fn permute(g: &Graph, sigma: &[usize]) -> Result<Graph> {
    let n = g.n();
    check_permutation(sigma, n)?;
    let mut inv = vec![0; n];
    for (i, &s) in sigma.iter().enumerate() {
        inv[s] = i;
    }
    let a = g.adjacency();
    let adj = Matrix::from_fn(n, n, |i, j| a[(inv[i], inv[j])]);
    let attributes = g.attributes().map(|e| e.select_rows(&inv));
    Ok(Graph { adjacency: adj, attributes })
}

/// Row permutation matching [`permute`]: row `sigma[i]` of the output is row `i` of `m`.
pub fn permute_rows(m: &Matrix, sigma: &[usize]) -> Result<Matrix> {
    check_permutation(sigma, m.rows())?;
    let mut inv = vec![0; sigma.len()];
    for (i, &s) in sigma.iter().enumerate() {
        inv[s] = i;
    }
    Ok(m.select_rows(&inv))
}

/// An ordered sequence of snapshots over a fixed node set.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicNetwork {
    snapshots: Vec<Graph>,
    change_points: Option<Vec<usize>>,
    labels: Option<Vec<i64>>,
}

/// Reproducibility stamp carried in file headers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

impl DynamicNetwork {
    pub fn new(snapshots: Vec<Graph>, change_points: Option<Vec<usize>>, labels: Option<Vec<i64>>) -> Result<Self> {
        let t_len = snapshots.len();
        if let Some(first) = snapshots.first() {
            let n = first.n();
            if let Some(bad) = snapshots.iter().position(|g| g.n() != n) {
                return Err(Error::dim(format!("snapshot {} has {} nodes, expected {n}", bad + 1, snapshots[bad].n())));
            }
        }
        if let Some(cps) = &change_points {
            if cps.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param("change-points must be strictly increasing"));
            }
            if cps.iter().any(|&c| c <= 1 || c > t_len) {
                return Err(Error::param(format!("change-points must lie in (1, {t_len}]")));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != t_len {
                return Err(Error::dim(format!("{} labels for {t_len} snapshots", labels.len())));
            }
        }
        Ok(Self { snapshots, change_points, labels })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn n(&self) -> usize {
        self.snapshots.first().map_or(0, Graph::n)
    }

    pub fn snapshots(&self) -> &[Graph] {
        &self.snapshots
    }

    /// Snapshot at 1-based timestamp `t`.
    pub fn at(&self, t: usize) -> &Graph {
        &self.snapshots[t - 1]
    }

    pub fn change_points(&self) -> Option<&[usize]> {
        self.change_points.as_deref()
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn with_change_points(mut self, cps: Vec<usize>) -> Result<Self> {
        let labels = self.labels.take();
        Self::new(self.snapshots, Some(cps), labels)
    }

    /// Change-points implied by label switches: every `t` with `label_t != label_{t-1}`.
    pub fn change_points_from_labels(labels: &[i64]) -> Vec<usize> {
        (1..labels.len()).filter(|&i| labels[i] != labels[i - 1]).map(|i| i + 1).collect()
    }

    /// Sub-network over timestamps `start..=end`, with change-points shifted accordingly.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start == 0 || end < start || end > self.len() {
            return Err(Error::param(format!("invalid slice {start}..={end} of {} snapshots", self.len())));
        }
        let snapshots = self.snapshots[start - 1..end].to_vec();
        let cps = self.change_points.as_ref().map(|cps| {
            cps.iter().filter(|&&c| c > start && c <= end).map(|&c| c - start + 1).collect()
        });
        let labels = self.labels.as_ref().map(|l| l[start - 1..end].to_vec());
        Self::new(snapshots, cps, labels)
    }

    /// Concatenates networks over the same node set.
    ///
    /// Boundaries between parts are not recorded as change-points.
    pub fn concat(parts: &[DynamicNetwork]) -> Result<Self> {
        let mut snapshots = Vec::new();
        let mut cps = Vec::new();
        let mut labels: Option<Vec<i64>> = Some(Vec::new());
        let mut offset = 0;
        for part in parts {
            snapshots.extend(part.snapshots.iter().cloned());
            if let Some(c) = &part.change_points {
                cps.extend(c.iter().map(|&c| c + offset));
            }
            match (&mut labels, &part.labels) {
                (Some(acc), Some(l)) => acc.extend_from_slice(l),
                _ => labels = None,
            }
            offset += part.len();
        }
        Self::new(snapshots, Some(cps), labels)
    }

    /// Writes the line-delimited JSON network format (see the crate README).
    pub fn write_jsonl<W: Write>(&self, mut w: W, provenance: Option<&Provenance>) -> Result<()> {
        let header = FileHeader {
            n: self.n(),
            t: self.len(),
            change_points: self.change_points.clone(),
            labels: self.labels.clone(),
            seed: provenance.and_then(|p| p.seed),
            config_hash: provenance.and_then(|p| p.config_hash.clone()),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (idx, g) in self.snapshots.iter().enumerate() {
            if !g.is_binary() {
                return Err(Error::param(format!("snapshot {} is weighted; the file format stores binary graphs", idx + 1)));
            }
            let line = SnapshotLine {
                t: idx + 1,
                edges: g.edges().into_iter().map(|(i, j)| [i, j]).collect(),
                attrs: g.attributes().map(|e| (0..e.rows()).map(|r| e.row(r).to_vec()).collect()),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<(Self, Provenance)> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty network file".into() })?;
        let header: FileHeader = serde_json::from_str(&header?)
            .map_err(|e| Error::Parse { line: hline, message: format!("bad header: {e}") })?;
        let mut snapshots = Vec::with_capacity(header.t);
        for (lineno, line) in lines {
            let line: SnapshotLine = serde_json::from_str(&line?)
                .map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
            if line.t != snapshots.len() + 1 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected snapshot t={}, found t={}", snapshots.len() + 1, line.t),
                });
            }
            let mut edges = Vec::with_capacity(line.edges.len());
            for [i, j] in line.edges {
                if i > j || j >= header.n {
                    return Err(Error::Parse { line: lineno, message: format!("invalid edge [{i},{j}]") });
                }
                edges.push((i, j));
            }
            let mut g = Graph::from_edges(header.n, &edges).map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
            if let Some(attrs) = line.attrs {
                let m = Matrix::from_rows(&attrs).map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
                g = g.with_attributes(m).map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
            }
            snapshots.push(g);
        }
        if snapshots.len() != header.t {
            return Err(Error::Parse {
                line: hline,
                message: format!("header declares T={} but file holds {} snapshots", header.t, snapshots.len()),
            });
        }
        let provenance = Provenance { seed: header.seed, config_hash: header.config_hash };
        let net = Self::new(snapshots, header.change_points, header.labels)
            .map_err(|e| Error::Parse { line: hline, message: e.to_string() })?;
        Ok((net, provenance))
    }
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    n: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    change_points: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    labels: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    t: usize,
    edges: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    attrs: Option<Vec<Vec<f64>>>,
}
