//! Siamese GCN similarity model: twin GCN encoders, node-wise distances,
//! Sort-k pooling, two FC+BN+ReLU layers, sum pooling and a sigmoid.
//! Gradients are derived by hand; training uses Adam.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::pair_metrics;
use crate::graph::{normalized_augmented_adjacency, positional_encoding, EncodingKind, Graph};
use crate::linalg::{CsrMatrix, Matrix};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const DISTANCE_EPS: f64 = 1e-12;
pub const SCORE_CLIP: f64 = 1e-7;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    SortK,
    Max,
    Average,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::SortK => "sortk",
            Pooling::Max => "max",
            Pooling::Average => "average",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sortk" | "sort-k" => Ok(Pooling::SortK),
            "max" => Ok(Pooling::Max),
            "average" | "avg" | "mean" => Ok(Pooling::Average),
            _ => Err(Error::param(format!("unknown pooling {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgnnConfig {
    pub gcn_layers: usize,
    pub hidden_units: usize,
    pub sortk: usize,
    pub fc_units: (usize, usize),
    pub dropout: f64,
    pub encoding: EncodingKind,
    pub pooling: Pooling,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Feed node attributes instead of the positional encoding.
    pub use_attributes: bool,
}

impl Default for SgnnConfig {
    fn default() -> Self {
        Self {
            gcn_layers: 2,
            hidden_units: 32,
            sortk: 40,
            fc_units: (32, 16),
            dropout: 0.05,
            encoding: EncodingKind::Degree,
            pooling: Pooling::SortK,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 100,
            batch_size: 32,
            use_attributes: false,
        }
    }
}

impl SgnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.gcn_layers == 0 || self.hidden_units == 0 {
            return bad("the encoder needs at least one layer with at least one unit");
        }
        if self.sortk == 0 || self.fc_units.0 == 0 || self.fc_units.1 == 0 {
            return bad("sortk and fc_units must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        self.encoding.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Width of the pooled distance vector.
    pub fn pooled_dim(&self) -> usize {
        match self.pooling {
            Pooling::SortK => self.sortk,
            Pooling::Max | Pooling::Average => 1,
        }
    }
}

/// A graph with its propagation operator and input features ready for the encoder.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    a_tilde: CsrMatrix,
    /// `Ã H⁽⁰⁾`, the first-layer propagation, computed once.
    propagated_input: Matrix,
}

impl PreparedGraph {
    pub fn new(g: &Graph, encoding: EncodingKind, use_attributes: bool) -> Result<Self> {
        let h0 = if use_attributes {
            g.attributes().cloned().ok_or_else(|| Error::Config("graph has no node attributes".into()))?
        } else {
            positional_encoding(g, encoding)?
        };
        let a_tilde = CsrMatrix::from_dense(&normalized_augmented_adjacency(g));
        let propagated_input = a_tilde.mul_dense(&h0)?;
        Ok(Self { a_tilde, propagated_input })
    }

    pub fn for_config(g: &Graph, config: &SgnnConfig) -> Result<Self> {
        Self::new(g, config.encoding, config.use_attributes)
    }

    pub fn n(&self) -> usize {
        self.a_tilde.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.propagated_input.cols()
    }
}

/// Prepares every graph in parallel.
pub fn prepare_all(graphs: &[Graph], config: &SgnnConfig) -> Result<Vec<PreparedGraph>> {
    graphs.par_iter().map(|g| PreparedGraph::for_config(g, config)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    /// 1 × out.
    pub bias: Matrix,
}

impl DenseLayer {
    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit)),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn affine(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.weight)?;
        add_row(&mut z, self.bias.data());
        Ok(z)
    }
}

/// Encoder seam: forward to node embeddings and back to parameter gradients.
pub trait GraphEncoder {
    type Cache;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// `rng` present means training mode (dropout active).
    fn forward(&self, g: &PreparedGraph, dropout: f64, rng: Option<&mut dyn RngCore>) -> Result<(Matrix, Self::Cache)>;

    /// Accumulates the gradient of `d_out` (w.r.t. the embeddings) into `grad`.
    fn backward(&self, g: &PreparedGraph, cache: &Self::Cache, d_out: Matrix, grad: &mut Self) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnEncoder {
    pub layers: Vec<DenseLayer>,
}

pub struct GcnCache {
    /// `Ã H⁽ʲ⁻¹⁾` for layers after the first.
    propagated: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
}

impl GraphEncoder for GcnEncoder {
    type Cache = GcnCache;

    fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    fn forward(&self, g: &PreparedGraph, dropout: f64, mut rng: Option<&mut dyn RngCore>) -> Result<(Matrix, GcnCache)> {
        if g.input_dim() != self.input_dim() {
            return Err(Error::Config(format!(
                "input features have {} columns, encoder expects {}",
                g.input_dim(),
                self.input_dim()
            )));
        }
        let mut cache = GcnCache { propagated: Vec::new(), pre_activations: Vec::new(), masks: Vec::new() };
        let mut h = Matrix::zeros(0, 0);
        for (j, layer) in self.layers.iter().enumerate() {
            let z = if j == 0 {
                layer.affine(&g.propagated_input)?
            } else {
                let m = g.a_tilde.mul_dense(&h)?;
                let z = layer.affine(&m)?;
                cache.propagated.push(m);
                z
            };
            h = z.map(relu);
            let mask = match rng.as_deref_mut() {
                Some(r) if dropout > 0.0 => Some(dropout_mask(h.rows(), h.cols(), dropout, r)),
                _ => None,
            };
            if let Some(m) = &mask {
                hadamard_in_place(&mut h, m);
            }
            cache.pre_activations.push(z);
            cache.masks.push(mask);
        }
        Ok((h, cache))
    }

    fn backward(&self, g: &PreparedGraph, cache: &GcnCache, d_out: Matrix, grad: &mut Self) -> Result<()> {
        let mut dh = d_out;
        for j in (0..self.layers.len()).rev() {
            let z = &cache.pre_activations[j];
            if let Some(m) = &cache.masks[j] {
                hadamard_in_place(&mut dh, m);
            }
            for (d, &zv) in dh.data_mut().iter_mut().zip(z.data()) {
                if zv <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = if j == 0 { &g.propagated_input } else { &cache.propagated[j - 1] };
            grad.layers[j].weight.axpy(1.0, &input.t_matmul(&dh)?)?;
            add_col_sums(&mut grad.layers[j].bias, &dh);
            if j > 0 {
                let dm = dh.matmul(&self.layers[j].weight.transpose())?;
                // Ã is symmetric
                dh = g.a_tilde.mul_dense(&dm)?;
            }
        }
        Ok(())
    }
}

/// Affine map, batch normalisation and ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcLayer {
    pub affine: DenseLayer,
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl FcLayer {
    fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            affine: DenseLayer::glorot(fan_in, fan_out, rng),
            gamma: Matrix::from_fn(1, fan_out, |_, _| 1.0),
            beta: Matrix::zeros(1, fan_out),
            running_mean: vec![0.0; fan_out],
            running_var: vec![1.0; fan_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgnnParams {
    pub encoder: GcnEncoder,
    pub fc: Vec<FcLayer>,
}

impl SgnnParams {
    /// Glorot-uniform weights, zero biases, unit scale, zero shift.
    pub fn init<R: Rng + ?Sized>(config: &SgnnConfig, input_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut layers = Vec::with_capacity(config.gcn_layers);
        let mut fan_in = input_dim;
        for _ in 0..config.gcn_layers {
            layers.push(DenseLayer::glorot(fan_in, config.hidden_units, rng));
            fan_in = config.hidden_units;
        }
        let (h1, h2) = config.fc_units;
        let fc = vec![FcLayer::init(config.pooled_dim(), h1, rng), FcLayer::init(h1, h2, rng)];
        Ok(Self { encoder: GcnEncoder { layers }, fc })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Same shapes, all learnable tensors zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    /// Learnable tensors in a fixed order (running statistics excluded).
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.encoder.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for l in &self.fc {
            out.extend([&l.affine.weight, &l.affine.bias, &l.gamma, &l.beta]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.encoder.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in &mut self.fc {
            out.push(&mut l.affine.weight);
            out.push(&mut l.affine.bias);
            out.push(&mut l.gamma);
            out.push(&mut l.beta);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data().iter().all(|v| v.is_finite()))
            && self.fc.iter().all(|l| l.running_mean.iter().chain(&l.running_var).all(|v| v.is_finite()))
    }

    /// Moves running statistics towards the batch statistics.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for (layer, (mean, var)) in self.fc.iter_mut().zip(stats.means.iter().zip(&stats.variances)) {
            for j in 0..mean.len() {
                layer.running_mean[j] = (1.0 - BN_MOMENTUM) * layer.running_mean[j] + BN_MOMENTUM * mean[j];
                layer.running_var[j] = (1.0 - BN_MOMENTUM) * layer.running_var[j] + BN_MOMENTUM * var[j];
            }
        }
    }
}

/// Per-FC-layer batch means and unbiased variances from a training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// Where each pooled slot takes its value from.
enum PoolRoute {
    Slots(Vec<Option<usize>>),
    Mean(usize),
}

struct FcCache {
    input: Matrix,
    mean: Vec<f64>,
    var: Vec<f64>,
    xhat: Matrix,
    inv_std: Vec<f64>,
    y: Matrix,
    mask: Option<Matrix>,
}

/// Training-mode loss and exact gradients over one batch.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub scores: Vec<f64>,
    pub grads: SgnnParams,
    pub stats: BatchStats,
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgnn {
    pub config: SgnnConfig,
    pub params: SgnnParams,
}

impl Sgnn {
    pub fn new<R: Rng + ?Sized>(config: SgnnConfig, input_dim: usize, rng: &mut R) -> Result<Self> {
        let params = SgnnParams::init(&config, input_dim, rng)?;
        Ok(Self { config, params })
    }

    pub fn prepare(&self, g: &Graph) -> Result<PreparedGraph> {
        PreparedGraph::for_config(g, &self.config)
    }

    /// Eval-mode node embeddings.
    pub fn embed(&self, g: &PreparedGraph) -> Result<Matrix> {
        Ok(self.params.encoder.forward(g, 0.0, None)?.0)
    }

    /// Eval-mode similarity of two embedding matrices.
    pub fn score_embeddings(&self, h1: &Matrix, h2: &Matrix) -> Result<f64> {
        let (p, _) = self.pool(h1, h2, false)?;
        let x = Matrix::new(1, p.len(), p)?;
        let (logits, _) = self.head_forward(&x, None)?;
        Ok(sigmoid(logits[0]))
    }

    pub fn score(&self, g1: &PreparedGraph, g2: &PreparedGraph) -> Result<f64> {
        self.score_embeddings(&self.embed(g1)?, &self.embed(g2)?)
    }

    /// Scores index pairs into `graphs`, embedding each referenced graph once.
    pub fn score_pairs(&self, graphs: &[PreparedGraph], pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let mut needed: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        needed.sort_unstable();
        needed.dedup();
        if needed.last().is_some_and(|&i| i >= graphs.len()) {
            return Err(Error::param("pair index out of range"));
        }
        let embedded: Vec<Matrix> = needed.par_iter().map(|&i| self.embed(&graphs[i])).collect::<Result<_>>()?;
        let lookup = |i: usize| &embedded[needed.binary_search(&i).expect("embedded above")];
        pairs.par_iter().map(|&(a, b)| self.score_embeddings(lookup(a), lookup(b))).collect()
    }

    /// Node distances pooled into a fixed-width vector. Training mode smooths
    /// the norm as `sqrt(|d|² + ε²)`.
    fn pool(&self, h1: &Matrix, h2: &Matrix, smooth: bool) -> Result<(Vec<f64>, (Vec<f64>, PoolRoute))> {
        if h1.rows() != h2.rows() || h1.cols() != h2.cols() {
            return Err(Error::dim("embedding pair shapes differ"));
        }
        let n = h1.rows();
        let f: Vec<f64> = (0..n)
            .map(|i| {
                let ss: f64 = h1.row(i).iter().zip(h2.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                if smooth { (ss + DISTANCE_EPS * DISTANCE_EPS).sqrt() } else { ss.sqrt() }
            })
            .collect();
        let (p, route) = match self.config.pooling {
            Pooling::SortK => {
                let idx = sort_k(&f, self.config.sortk);
                let p = idx.iter().map(|s| s.map_or(0.0, |i| f[i])).collect();
                (p, PoolRoute::Slots(idx))
            }
            Pooling::Max => {
                let idx = sort_k(&f, 1);
                (vec![idx[0].map_or(0.0, |i| f[i])], PoolRoute::Slots(idx))
            }
            Pooling::Average => {
                let mean = if n == 0 { 0.0 } else { f.iter().sum::<f64>() / n as f64 };
                (vec![mean], PoolRoute::Mean(n))
            }
        };
        Ok((p, (f, route)))
    }

    /// FC stack on pooled rows. `train` carries FC dropout randomness and
    /// switches batch normalisation to batch statistics.
    fn head_forward(&self, x: &Matrix, mut train: Option<&mut dyn RngCore>) -> Result<(Vec<f64>, Vec<FcCache>)> {
        let b = x.rows();
        let mut caches = Vec::with_capacity(self.params.fc.len());
        let mut a = x.clone();
        for layer in &self.params.fc {
            let z = layer.affine.affine(&a)?;
            let h = z.cols();
            let (mean, var) = if train.is_some() {
                let mean: Vec<f64> = (0..h).map(|j| (0..b).map(|r| z[(r, j)]).sum::<f64>() / b as f64).collect();
                let var = (0..h)
                    .map(|j| (0..b).map(|r| (z[(r, j)] - mean[j]).powi(2)).sum::<f64>() / b as f64)
                    .collect::<Vec<_>>();
                (mean, var)
            } else {
                (layer.running_mean.clone(), layer.running_var.clone())
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let xhat = Matrix::from_fn(b, h, |r, j| (z[(r, j)] - mean[j]) * inv_std[j]);
            let y = Matrix::from_fn(b, h, |r, j| layer.gamma[(0, j)] * xhat[(r, j)] + layer.beta[(0, j)]);
            let mut out = y.map(relu);
            let mask = match train.as_deref_mut() {
                Some(r) if self.config.dropout > 0.0 => Some(dropout_mask(b, h, self.config.dropout, r)),
                _ => None,
            };
            if let Some(m) = &mask {
                hadamard_in_place(&mut out, m);
            }
            caches.push(FcCache { input: a, mean, var, xhat, inv_std, y, mask });
            a = out;
        }
        Ok((a.row_sums(), caches))
    }

    /// Mean clipped cross-entropy over `batch` and its exact gradient.
    ///
    /// Encoder dropout masks come from per-pair seeds drawn from `rng`, then FC
    /// masks from `rng` itself, so reseeding `rng` reproduces the same function.
    /// Running statistics are not touched; apply [`SgnnParams::update_running_stats`].
    pub fn loss_and_grad(&self, batch: &[(&PreparedGraph, &PreparedGraph, u8)], rng: &mut dyn RngCore) -> Result<LossGrad> {
        if batch.is_empty() {
            return Err(Error::param("empty batch"));
        }
        let bsz = batch.len();
        let dropout = self.config.dropout;
        let seeds: Vec<u64> = (0..bsz).map(|_| rng.next_u64()).collect();
        let enc = &self.params.encoder;

        struct Branches {
            h: [Matrix; 2],
            caches: [GcnCache; 2],
        }
        let branches: Vec<Branches> = batch
            .par_iter()
            .zip(&seeds)
            .map(|(&(g1, g2, _), &seed)| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let (h1, c1) = enc.forward(g1, dropout, Some(&mut r))?;
                let (h2, c2) = enc.forward(g2, dropout, Some(&mut r))?;
                Ok(Branches { h: [h1, h2], caches: [c1, c2] })
            })
            .collect::<Result<_>>()?;

        let width = self.config.pooled_dim();
        let mut x = Matrix::zeros(bsz, width);
        let mut routes = Vec::with_capacity(bsz);
        for (r, br) in branches.iter().enumerate() {
            let (p, route) = self.pool(&br.h[0], &br.h[1], true)?;
            x.row_mut(r).copy_from_slice(&p);
            routes.push(route);
        }
        let (logits, fc_caches) = self.head_forward(&x, Some(rng))?;

        let mut loss = 0.0;
        let mut scores = Vec::with_capacity(bsz);
        let mut dlogit = Vec::with_capacity(bsz);
        for (r, &(_, _, y)) in batch.iter().enumerate() {
            let s = sigmoid(logits[r]);
            let (pos, neg) = (s.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP), sigmoid(-logits[r]).clamp(SCORE_CLIP, 1.0 - SCORE_CLIP));
            loss -= if y == 1 { pos.ln() } else { neg.ln() };
            scores.push(s);
            dlogit.push((s - f64::from(y)) / bsz as f64);
        }
        loss /= bsz as f64;

        let mut grads = self.params.zeros_like();
        let mut stats = BatchStats { means: Vec::new(), variances: Vec::new() };
        // sum pooling broadcasts the logit gradient to every final unit
        let last = self.params.fc.last().map_or(width, |l| l.affine.weight.cols());
        let mut d = Matrix::from_fn(bsz, last, |r, _| dlogit[r]);
        for (li, (layer, cache)) in self.params.fc.iter().zip(&fc_caches).enumerate().rev() {
            let h = layer.affine.weight.cols();
            if let Some(m) = &cache.mask {
                hadamard_in_place(&mut d, m);
            }
            for (dv, &yv) in d.data_mut().iter_mut().zip(cache.y.data()) {
                if yv <= 0.0 {
                    *dv = 0.0;
                }
            }
            let g = &mut grads.fc[li];
            let mut dz = Matrix::zeros(bsz, h);
            for j in 0..h {
                let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                for r in 0..bsz {
                    g.gamma[(0, j)] += d[(r, j)] * cache.xhat[(r, j)];
                    g.beta[(0, j)] += d[(r, j)];
                    let dxhat = d[(r, j)] * layer.gamma[(0, j)];
                    sum_d += dxhat;
                    sum_dx += dxhat * cache.xhat[(r, j)];
                }
                for r in 0..bsz {
                    let dxhat = d[(r, j)] * layer.gamma[(0, j)];
                    dz[(r, j)] = cache.inv_std[j] / bsz as f64
                        * (bsz as f64 * dxhat - sum_d - cache.xhat[(r, j)] * sum_dx);
                }
            }
            g.affine.weight.axpy(1.0, &cache.input.t_matmul(&dz)?)?;
            add_col_sums(&mut g.affine.bias, &dz);
            d = dz.matmul(&layer.affine.weight.transpose())?;

            let scale = if bsz > 1 { bsz as f64 / (bsz - 1) as f64 } else { 0.0 };
            stats.means.push(cache.mean.clone());
            stats.variances.push(cache.var.iter().map(|v| v * scale).collect());
        }
        stats.means.reverse();
        stats.variances.reverse();

        // back through pooling and the distance into both branches
        let enc_grads: Vec<GcnEncoder> = branches
            .par_iter()
            .zip(&routes)
            .zip(batch.par_iter())
            .enumerate()
            .map(|(r, ((br, (f, route)), &(g1, g2, _)))| {
                let n = f.len();
                let mut df = vec![0.0; n];
                match route {
                    PoolRoute::Slots(idx) => {
                        for (slot, i) in idx.iter().enumerate() {
                            if let Some(i) = *i {
                                df[i] += d[(r, slot)];
                            }
                        }
                    }
                    PoolRoute::Mean(count) => {
                        for v in df.iter_mut() {
                            *v = d[(r, 0)] / *count as f64;
                        }
                    }
                }
                let cols = br.h[0].cols();
                let dh1 = Matrix::from_fn(n, cols, |i, c| {
                    if df[i] == 0.0 { 0.0 } else { df[i] * (br.h[0][(i, c)] - br.h[1][(i, c)]) / f[i] }
                });
                let dh2 = dh1.scale(-1.0);
                let mut g = GcnEncoder { layers: enc.layers.iter().map(|l| DenseLayer { weight: Matrix::zeros(l.weight.rows(), l.weight.cols()), bias: Matrix::zeros(1, l.bias.cols()) }).collect() };
                enc.backward(g1, &br.caches[0], dh1, &mut g)?;
                enc.backward(g2, &br.caches[1], dh2, &mut g)?;
                Ok(g)
            })
            .collect::<Result<_>>()?;
        for g in &enc_grads {
            for (acc, part) in grads.encoder.layers.iter_mut().zip(&g.layers) {
                acc.weight.axpy(1.0, &part.weight)?;
                acc.bias.axpy(1.0, &part.bias)?;
            }
        }
        Ok(LossGrad { loss, scores, grads, stats })
    }
}

/// Indices of the `k` largest entries in descending order; ties go to the
/// lower index; slots beyond `f.len()` are empty.
pub fn sort_k(f: &[f64], k: usize) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    (0..k).map(|s| order.get(s).copied()).collect()
}

/// Similar (1) iff the score exceeds one half.
pub fn predict_label(score: f64) -> u8 {
    u8::from(score > 0.5)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn add_row(m: &mut Matrix, row: &[f64]) {
    for r in 0..m.rows() {
        for (v, b) in m.row_mut(r).iter_mut().zip(row) {
            *v += b;
        }
    }
}

fn add_col_sums(acc: &mut Matrix, m: &Matrix) {
    for r in 0..m.rows() {
        for (a, v) in acc.data_mut().iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
}

fn hadamard_in_place(m: &mut Matrix, mask: &Matrix) {
    for (v, s) in m.data_mut().iter_mut().zip(mask.data()) {
        *v *= s;
    }
}

/// Inverted dropout: entries are 0 with probability `rate`, else `1/(1-rate)`.
fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &SgnnParams) -> Self {
        let zeros: Vec<Matrix> = params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// Decoupled weight decay (`θ ← θ(1 − lr·wd)`) followed by a bias-corrected Adam step.
pub fn adam_step(params: &mut SgnnParams, grads: &SgnnParams, state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    let grads = grads.tensors();
    let mut tensors = params.tensors_mut();
    if grads.len() != tensors.len() || state.m.len() != tensors.len() {
        return Err(Error::dim("optimizer state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (k, p) in tensors.iter_mut().enumerate() {
        let g = grads[k].data();
        if g.len() != p.data().len() {
            return Err(Error::dim("gradient shape does not match parameter"));
        }
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            *w *= 1.0 - lr * weight_decay;
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexedPair {
    pub a: usize,
    pub b: usize,
    pub label: u8,
}

/// Prepared graphs plus training and validation pairs indexing into them.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub graphs: Vec<PreparedGraph>,
    pub train: Vec<IndexedPair>,
    pub validation: Vec<IndexedPair>,
}

impl TrainingData {
    pub fn input_dim(&self) -> Result<usize> {
        let d = self.graphs.first().map(PreparedGraph::input_dim).ok_or_else(|| Error::param("no graphs"))?;
        if self.graphs.iter().any(|g| g.input_dim() != d) {
            return Err(Error::Config("graphs disagree on input feature width".into()));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Sgnn,
    pub history: Vec<EpochRecord>,
    /// Epoch of the returned snapshot; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_f1: f64,
    pub optimizer: AdamState,
}

/// Validation accuracy and F1 at the 0.5 threshold.
pub fn evaluate_pairs(model: &Sgnn, graphs: &[PreparedGraph], pairs: &[IndexedPair]) -> Result<(f64, f64)> {
    let idx: Vec<(usize, usize)> = pairs.iter().map(|p| (p.a, p.b)).collect();
    let scores = model.score_pairs(graphs, &idx)?;
    let pred: Vec<u8> = scores.iter().map(|&s| predict_label(s)).collect();
    let truth: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    pair_metrics(&pred, &truth)
}

/// Splits `len` shuffled items into `ceil(len / size)` batches whose sizes differ by at most one.
fn batch_bounds(len: usize, size: usize) -> Vec<(usize, usize)> {
    let count = len.div_ceil(size).max(1);
    let (base, extra) = (len / count, len % count);
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for b in 0..count {
        let width = base + usize::from(b < extra);
        out.push((start, start + width));
        start += width;
    }
    out
}

/// Mini-batch Adam; keeps the epoch snapshot with the best validation F1
/// (earliest on ties).
pub fn train(data: &TrainingData, config: &SgnnConfig, rng: &mut dyn RngCore) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::param("training and validation pairs must be nonempty"));
    }
    let mut model = Sgnn::new(config.clone(), data.input_dim()?, rng)?;
    let mut optimizer = AdamState::new(&model.params);
    let mut outcome = TrainOutcome {
        model: model.clone(),
        history: Vec::new(),
        best_epoch: None,
        best_val_f1: f64::NEG_INFINITY,
        optimizer: optimizer.clone(),
    };
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for (lo, hi) in batch_bounds(order.len(), config.batch_size) {
            let batch: Vec<_> = order[lo..hi]
                .iter()
                .map(|&i| {
                    let p = data.train[i];
                    (&data.graphs[p.a], &data.graphs[p.b], p.label)
                })
                .collect();
            let lg = model.loss_and_grad(&batch, rng)?;
            total += lg.loss * batch.len() as f64;
            if batch.len() > 1 {
                model.params.update_running_stats(&lg.stats);
            }
            adam_step(&mut model.params, &lg.grads, &mut optimizer, config.learning_rate, config.weight_decay)?;
        }
        let (val_accuracy, val_f1) = evaluate_pairs(&model, &data.graphs, &data.validation)?;
        let record = EpochRecord { epoch, train_loss: total / order.len() as f64, val_accuracy, val_f1 };
        log::debug!("epoch {epoch}: loss {:.4} val acc {val_accuracy:.3} f1 {val_f1:.3}", record.train_loss);
        outcome.history.push(record);
        if val_f1 > outcome.best_val_f1 {
            outcome.best_val_f1 = val_f1;
            outcome.best_epoch = Some(epoch);
            outcome.model = model.clone();
            outcome.optimizer = optimizer.clone();
        }
    }
    if outcome.best_epoch.is_none() {
        outcome.best_val_f1 = 0.0;
    }
    Ok(outcome)
}

/// Hyperparameter grid; the product is enumerated in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgnnGrid {
    pub learning_rate: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub dropout: Vec<f64>,
    pub sortk: Vec<usize>,
    pub hidden_units: Vec<usize>,
}

impl SgnnGrid {
    pub fn default_synthetic() -> Self {
        Self {
            learning_rate: vec![1e-3, 1e-2],
            weight_decay: vec![0.0],
            dropout: vec![0.01, 0.05, 0.1],
            sortk: vec![20, 40, 100],
            hidden_units: vec![16, 32, 64],
        }
    }

    pub fn financial() -> Self {
        Self {
            learning_rate: vec![1e-5, 1e-4, 1e-3, 1e-2],
            weight_decay: vec![1e-6, 1e-5],
            dropout: vec![0.05, 0.2, 0.4],
            sortk: vec![50, 100, 200],
            hidden_units: vec![32, 64, 128],
        }
    }

    pub fn singleton(config: &SgnnConfig) -> Self {
        Self {
            learning_rate: vec![config.learning_rate],
            weight_decay: vec![config.weight_decay],
            dropout: vec![config.dropout],
            sortk: vec![config.sortk],
            hidden_units: vec![config.hidden_units],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default-synthetic" | "synthetic" => Ok(Self::default_synthetic()),
            "financial" => Ok(Self::financial()),
            _ => Err(Error::Config(format!("unknown grid {name:?}"))),
        }
    }

    pub fn configs(&self, base: &SgnnConfig) -> Vec<SgnnConfig> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &weight_decay in &self.weight_decay {
                for &dropout in &self.dropout {
                    for &sortk in &self.sortk {
                        for &hidden_units in &self.hidden_units {
                            out.push(SgnnConfig { learning_rate, weight_decay, dropout, sortk, hidden_units, ..base.clone() });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: TrainOutcome,
    pub best_config: SgnnConfig,
    /// Validation F1 per candidate, in enumeration order.
    pub scores: Vec<(SgnnConfig, f64)>,
}

/// Trains every candidate from the same seed and keeps the best validation
/// F1 (first in enumeration order on ties).
pub fn grid_search(candidates: &[SgnnConfig], data: &TrainingData, seed: u64) -> Result<GridOutcome> {
    if candidates.is_empty() {
        return Err(Error::param("empty hyperparameter grid"));
    }
    let outcomes: Vec<TrainOutcome> = candidates
        .par_iter()
        .map(|c| train(data, c, &mut ChaCha8Rng::seed_from_u64(seed)))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.best_val_f1 > outcomes[best].best_val_f1 {
            best = i;
        }
    }
    let scores = candidates.iter().cloned().zip(outcomes.iter().map(|o| o.best_val_f1)).collect();
    let best_config = candidates[best].clone();
    let best = outcomes.into_iter().nth(best).expect("index in range");
    Ok(GridOutcome { best, best_config, scores })
}

pub const CHECKPOINT_FORMAT: &str = "ncpd-sgnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON model container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: SgnnConfig,
    pub params: SgnnParams,
    pub optimizer: Option<AdamState>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl Checkpoint {
    pub fn new(model: &Sgnn, optimizer: Option<AdamState>, seed: Option<u64>, config_hash: Option<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            params: model.params.clone(),
            optimizer,
            seed,
            config_hash,
        }
    }

    pub fn model(&self) -> Sgnn {
        Sgnn { config: self.config.clone(), params: self.params.clone() }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let c: Checkpoint = serde_json::from_reader(r)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("not a model checkpoint (format {:?})", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", c.version)));
        }
        c.config.validate()?;
        let expected = SgnnParams::init(&c.config, c.params.input_dim(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let shapes = |p: &SgnnParams| p.tensors().iter().map(|t| (t.rows(), t.cols())).collect::<Vec<_>>();
        if shapes(&expected) != shapes(&c.params) {
            return Err(Error::Config("checkpoint tensors do not match its configuration".into()));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::permute;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_graph(n: usize, p: f64, r: &mut ChaCha8Rng) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if r.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Graph::from_edges(n, &edges).unwrap()
    }

    fn small_config() -> SgnnConfig {
        SgnnConfig {
            hidden_units: 5,
            sortk: 4,
            fc_units: (4, 3),
            dropout: 0.2,
            encoding: EncodingKind::RandomWalk { k: 3 },
            batch_size: 4,
            ..SgnnConfig::default()
        }
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let mut r = rng(0);
        let g = random_graph(6, 0.5, &mut r);
        let mut model = Sgnn::new(small_config(), 3, &mut r).unwrap();
        for l in &mut model.params.encoder.layers {
            l.weight.data_mut().fill(0.0);
        }
        let h = model.embed(&model.prepare(&g).unwrap()).unwrap();
        assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn empty_graph_is_pointwise_network() {
        let mut r = rng(1);
        let config = SgnnConfig { encoding: EncodingKind::Identity, ..small_config() };
        let g = Graph::empty(4);
        let model = Sgnn::new(config, 4, &mut r).unwrap();
        let h = model.embed(&model.prepare(&g).unwrap()).unwrap();
        let mut x = Matrix::identity(4);
        for l in &model.params.encoder.layers {
            x = l.affine(&x).unwrap().map(relu);
        }
        assert!(h.sub(&x).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn sort_k_examples() {
        assert_eq!(sort_k(&[3.0, 1.0, 2.0], 2), vec![Some(0), Some(2)]);
        assert_eq!(sort_k(&[1.0, 1.0, 0.0], 2), vec![Some(0), Some(1)]);
        assert_eq!(sort_k(&[1.0], 3), vec![Some(0), None, None]);
    }

    #[test]
    fn predict_label_examples() {
        assert_eq!(predict_label(0.7), 1);
        assert_eq!(predict_label(0.5), 0);
        assert_eq!(predict_label(0.2), 0);
    }

    #[test]
    fn symmetry_and_self_similarity() {
        let mut r = rng(2);
        let model = Sgnn::new(small_config(), 3, &mut r).unwrap();
        let gs: Vec<PreparedGraph> = (0..4).map(|_| model.prepare(&random_graph(8, 0.4, &mut r)).unwrap()).collect();
        let s12 = model.score(&gs[0], &gs[1]).unwrap();
        assert_eq!(s12, model.score(&gs[1], &gs[0]).unwrap());
        assert!(s12 > 0.0 && s12 < 1.0);
        let c = model.score(&gs[0], &gs[0]).unwrap();
        for g in &gs[1..] {
            assert_eq!(model.score(g, g).unwrap(), c);
        }
    }

    #[test]
    fn loss_closed_forms() {
        // all-dead final layer gives logit 0, score 0.5
        let mut r = rng(3);
        let mut model = Sgnn::new(SgnnConfig { dropout: 0.0, ..small_config() }, 3, &mut r).unwrap();
        let last = model.params.fc.last_mut().unwrap();
        last.gamma.data_mut().fill(0.0);
        last.beta.data_mut().fill(0.0);
        let g = model.prepare(&random_graph(6, 0.5, &mut r)).unwrap();
        for y in [0u8, 1u8] {
            let lg = model.loss_and_grad(&[(&g, &g, y), (&g, &g, y)], &mut r).unwrap();
            assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_finite_at_saturation() {
        let mut r = rng(4);
        let mut model = Sgnn::new(SgnnConfig { dropout: 0.0, ..small_config() }, 3, &mut r).unwrap();
        model.params.fc[1].beta.data_mut().fill(1e4);
        let g = model.prepare(&random_graph(6, 0.5, &mut r)).unwrap();
        let lg = model.loss_and_grad(&[(&g, &g, 0), (&g, &g, 0)], &mut r).unwrap();
        assert!(lg.loss.is_finite());
        assert!((lg.loss + SCORE_CLIP.ln()).abs() < 1e-9);
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
    }

    fn check_gradients(config: SgnnConfig, seed: u64) {
        let mut r = rng(seed);
        let n = 6 + (seed as usize % 5);
        let graphs: Vec<Graph> = (0..6).map(|_| random_graph(n, 0.45, &mut r)).collect();
        let mut model = Sgnn::new(config, 3, &mut r).unwrap();
        // zero biases put isolated nodes exactly on the ReLU kink
        for t in model.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.1..0.1));
        }
        let prepared: Vec<_> = graphs.iter().map(|g| model.prepare(g).unwrap()).collect();
        let batch: Vec<_> = (0..3).map(|i| (&prepared[2 * i], &prepared[2 * i + 1], (i % 2) as u8)).collect();
        let mask_seed = r.random::<u64>();
        let lg = model.loss_and_grad(&batch, &mut rng(mask_seed)).unwrap();
        let analytic = lg.grads.tensors().iter().map(|t| t.data().to_vec()).collect::<Vec<_>>();
        let h = 1e-6;
        for (k, grad) in analytic.iter().enumerate() {
            for i in 0..grad.len() {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    m.params.tensors_mut()[k].data_mut()[i] += delta;
                    m.loss_and_grad(&batch, &mut rng(mask_seed)).unwrap().loss
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                assert!(
                    relative_error(grad[i], numeric) <= 1e-4,
                    "tensor {k} entry {i}: analytic {} numeric {numeric}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            check_gradients(small_config(), seed);
        }
        check_gradients(SgnnConfig { pooling: Pooling::Max, ..small_config() }, 10);
        check_gradients(SgnnConfig { pooling: Pooling::Average, gcn_layers: 3, ..small_config() }, 11);
        check_gradients(SgnnConfig { sortk: 12, ..small_config() }, 12);
    }

    #[test]
    fn adam_examples() {
        let mut r = rng(5);
        let model = Sgnn::new(small_config(), 3, &mut r).unwrap();
        let mut p = model.params.clone();
        let mut state = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut state, 0.01, 0.0).unwrap();
        assert_eq!(p, model.params);

        let mut grads = p.zeros_like();
        grads.tensors_mut()[0].data_mut()[0] = 0.3;
        grads.tensors_mut()[0].data_mut()[1] = -2.0;
        let before = p.tensors()[0].data().to_vec();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut state, 0.01, 0.0).unwrap();
        let after = p.tensors()[0].data();
        // bias-corrected first step: -lr * g / (|g| + eps)
        assert!((after[0] - before[0] + 0.01 * 0.3 / (0.3 + ADAM_EPS)).abs() < 1e-15);
        assert!((after[1] - before[1] - 0.01 * 2.0 / (2.0 + ADAM_EPS)).abs() < 1e-15);

        let mut q = model.params.clone();
        let mut state = AdamState::new(&q);
        let zero = q.zeros_like();
        adam_step(&mut q, &zero, &mut state, 0.1, 10.0).unwrap();
        assert!(q.tensors().iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn batches_are_balanced() {
        assert_eq!(batch_bounds(10, 4), vec![(0, 4), (4, 7), (7, 10)]);
        assert_eq!(batch_bounds(33, 32), vec![(0, 17), (17, 33)]);
        assert_eq!(batch_bounds(3, 32), vec![(0, 3)]);
    }

    fn toy_data(seed: u64) -> TrainingData {
        let mut r = rng(seed);
        let config = small_config();
        let mut graphs = Vec::new();
        for i in 0..40 {
            let p = if i % 2 == 0 { 0.15 } else { 0.7 };
            graphs.push(PreparedGraph::for_config(&random_graph(10, p, &mut r), &config).unwrap());
        }
        let mut pairs = Vec::new();
        for a in 0..40 {
            for b in (a + 1)..40 {
                pairs.push(IndexedPair { a, b, label: u8::from(a % 2 == b % 2) });
            }
        }
        pairs.shuffle(&mut r);
        TrainingData { graphs, train: pairs[..120].to_vec(), validation: pairs[120..180].to_vec() }
    }

    #[test]
    fn zero_epochs_return_initialisation() {
        let data = toy_data(6);
        let config = SgnnConfig { epochs: 0, ..small_config() };
        let out = train(&data, &config, &mut rng(7)).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, None);
        let init = Sgnn::new(config, data.input_dim().unwrap(), &mut rng(7)).unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = toy_data(8);
        let config = SgnnConfig { epochs: 30, learning_rate: 1e-2, dropout: 0.0, ..small_config() };
        let a = train(&data, &config, &mut rng(9)).unwrap();
        let b = train(&data, &config, &mut rng(9)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert!(a.best_val_f1 > 0.8, "{:?}", a.history.last());
        assert!(a.model.params.is_finite());
        assert!(train(&TrainingData { validation: vec![], ..data }, &config, &mut rng(0)).is_err());
    }

    #[test]
    fn grid_prefers_trained_candidate() {
        let data = toy_data(10);
        let trained = SgnnConfig { epochs: 20, learning_rate: 1e-2, ..small_config() };
        let untrained = SgnnConfig { epochs: 0, ..trained.clone() };
        let out = grid_search(&[untrained, trained.clone()], &data, 3).unwrap();
        assert_eq!(out.best_config, trained);
        let single = grid_search(std::slice::from_ref(&trained), &data, 3).unwrap();
        assert_eq!(single.best_config, trained);
        assert_eq!(SgnnGrid::default_synthetic().configs(&trained).len(), 54);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut r = rng(11);
        let model = Sgnn::new(small_config(), 3, &mut r).unwrap();
        let ck = Checkpoint::new(&model, Some(AdamState::new(&model.params)), Some(11), Some("abc".into()));
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(&buf[..]).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model(), model);
    }

    #[test]
    fn permutation_invariance_small() {
        let mut r = rng(12);
        for encoding in [EncodingKind::Degree, EncodingKind::RandomWalk { k: 4 }] {
            let config = SgnnConfig { encoding, ..small_config() };
            let (g1, g2) = (random_graph(9, 0.4, &mut r), random_graph(9, 0.4, &mut r));
            let model = Sgnn::new(config.clone(), encoding.dim(9), &mut r).unwrap();
            let base = model.score(&model.prepare(&g1).unwrap(), &model.prepare(&g2).unwrap()).unwrap();
            let mut sigma: Vec<usize> = (0..9).collect();
            sigma.shuffle(&mut r);
            let (p1, p2) = (permute(&g1, &sigma).unwrap(), permute(&g2, &sigma).unwrap());
            let s = model.score(&model.prepare(&p1).unwrap(), &model.prepare(&p2).unwrap()).unwrap();
            assert!((s - base).abs() <= 1e-9);
        }
    }
}
