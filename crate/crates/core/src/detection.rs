//! Average-similarity statistic, online declaration rule, offline
//! localisation, the MMD variant and threshold calibration.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{adjusted_f1, DEFAULT_TOLERANCE};
use crate::graph::DynamicNetwork;
use crate::linalg::Matrix;
use crate::sgnn::Sgnn;

/// Whether large values mean "similar" (learned scores) or "changed" (distances).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Similarity,
    Distance,
}

/// Statistic values for consecutive timestamps `start, start+1, ...` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticSeries {
    pub start: usize,
    pub values: Vec<f64>,
    pub orientation: Orientation,
}

impl StatisticSeries {
    pub fn new(start: usize, values: Vec<f64>, orientation: Orientation) -> Self {
        Self { start, values, orientation }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Timestamp of the `k`-th value.
    pub fn t(&self, k: usize) -> usize {
        self.start + k
    }

    pub fn timestamps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).map(|k| self.start + k)
    }

    /// Values on the similarity scale (distances negated).
    fn similarity_values(&self) -> Vec<f64> {
        match self.orientation {
            Orientation::Similarity => self.values.clone(),
            Orientation::Distance => self.values.iter().map(|v| -v).collect(),
        }
    }

    fn similarity_threshold(&self, theta: f64) -> f64 {
        match self.orientation {
            Orientation::Similarity => theta,
            Orientation::Distance => -theta,
        }
    }

    /// `|Z_t − Z_{t−1}|`, starting at the second timestamp.
    pub fn increments(&self) -> StatisticSeries {
        let values = self.values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        StatisticSeries { start: self.start + 1, values, orientation: Orientation::Distance }
    }
}

/// `Z_t = (1/L) Σ_{i=1..L} s(G_t, G_{t−i})` for `t = L+1..T`.
///
/// `score(t1, t2)` takes 1-based timestamps; pairs are scored in parallel.
pub fn similarity_statistic<F>(t_len: usize, l: usize, score: F) -> Result<StatisticSeries>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    if l == 0 || l >= t_len {
        return Err(Error::param(format!("window L = {l} must satisfy 1 <= L < T = {t_len}")));
    }
    let values = ((l + 1)..=t_len)
        .into_par_iter()
        .map(|t| {
            let mut sum = 0.0;
            for i in 1..=l {
                sum += score(t, t - i)?;
            }
            Ok(sum / l as f64)
        })
        .collect::<Result<_>>()?;
    Ok(StatisticSeries::new(l + 1, values, Orientation::Similarity))
}

/// Unbiased-MMD-style two-window statistic for `t = L+2..T−L`:
/// backward graphs `G_{t−1..t−L−1}`, forward graphs `G_{t..t+L}`.
/// A negative radicand is clamped to 0.
pub fn mmd_statistic<F>(t_len: usize, l: usize, score: F) -> Result<StatisticSeries>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    if l == 0 || t_len < 2 * l + 2 {
        return Err(Error::param(format!("windows of L = {l} on both sides do not fit in T = {t_len}")));
    }
    let norm = 1.0 / (l * (l + 1)) as f64;
    let values = ((l + 2)..=(t_len - l))
        .into_par_iter()
        .map(|t| {
            let mut sum = 0.0;
            for i in 1..=(l + 1) {
                for j in 1..=(l + 1) {
                    sum += score(t - i, t - j)? + score(t - 1 + i, t - 1 + j)? - score(t - i, t - 1 + j)?;
                }
            }
            Ok((norm * sum).max(0.0).sqrt())
        })
        .collect::<Result<_>>()?;
    Ok(StatisticSeries::new(l + 2, values, Orientation::Distance))
}

/// Declares `t` when `Z_t ≤ θ` and the preceding `L` values (or all preceding
/// values, when fewer exist) are `> θ`. Distance series use the mirrored rule.
///
/// A declaration leaves `Z_t ≤ θ` inside the next windows, so the rule only
/// re-arms after `L` consecutive values back above the threshold.
pub fn detect_online(z: &StatisticSeries, l: usize, theta: f64) -> Vec<usize> {
    let v = z.similarity_values();
    let th = z.similarity_threshold(theta);
    let mut out = Vec::new();
    for k in 1..v.len() {
        if v[k] <= th && v[k.saturating_sub(l)..k].iter().all(|&x| x > th) {
            out.push(z.t(k));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Localisation {
    /// Least similar timestamp.
    ArgMin,
    /// Largest absolute jump `|Z_t − Z_{t−1}|`.
    MaxIncrement,
}

/// Single change-point estimate; ties go to the earliest timestamp.
pub fn localize_single_offline(z: &StatisticSeries, mode: Localisation) -> Result<usize> {
    let v = z.similarity_values();
    match mode {
        Localisation::ArgMin => {
            let mut best = 0;
            for k in 1..v.len() {
                if v[k] < v[best] {
                    best = k;
                }
            }
            if v.is_empty() {
                return Err(Error::param("empty statistic"));
            }
            Ok(z.t(best))
        }
        Localisation::MaxIncrement => {
            if v.len() < 2 {
                return Err(Error::param("increments need at least two values"));
            }
            let mut best = 1;
            for k in 2..v.len() {
                if (v[k] - v[k - 1]).abs() > (v[best] - v[best - 1]).abs() {
                    best = k;
                }
            }
            Ok(z.t(best))
        }
    }
}

/// Threshold maximising adjusted F1 of [`detect_online`] against `truth`.
///
/// Candidates are midpoints of consecutive sorted unique values; a constant
/// trace has none and its single value is returned with a warning. Ties go to
/// the most conservative threshold: the smallest one for similarities, the
/// largest one for distances.
pub fn calibrate_threshold(z: &StatisticSeries, truth: &[usize], l: usize, tol: usize) -> Result<(f64, f64)> {
    if z.is_empty() {
        return Err(Error::param("cannot calibrate on an empty trace"));
    }
    let mut uniq = z.values.clone();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let candidates: Vec<f64> = uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if candidates.is_empty() {
        log::warn!("constant trace: no threshold separates any values");
        let theta = uniq[0];
        return Ok((theta, adjusted_f1(&detect_online(z, l, theta), truth, tol).f1));
    }
    let scores: Vec<f64> = candidates.par_iter().map(|&th| adjusted_f1(&detect_online(z, l, th), truth, tol).f1).collect();
    let order: Vec<usize> = match z.orientation {
        Orientation::Similarity => (0..scores.len()).collect(),
        Orientation::Distance => (0..scores.len()).rev().collect(),
    };
    let mut best = order[0];
    for &k in &order[1..] {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    Ok((candidates[best], scores[best]))
}

pub fn calibrate_threshold_default(z: &StatisticSeries, truth: &[usize], l: usize) -> Result<f64> {
    Ok(calibrate_threshold(z, truth, l, DEFAULT_TOLERANCE)?.0)
}

/// Statistic, window, threshold and the declared change-points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrace {
    pub statistic: StatisticSeries,
    pub window: usize,
    pub threshold: f64,
    pub declared: Vec<usize>,
}

impl DetectionTrace {
    pub fn new(statistic: StatisticSeries, window: usize, threshold: f64) -> Self {
        let declared = detect_online(&statistic, window, threshold);
        Self { statistic, window, threshold, declared }
    }

    /// CSV `t,z,increment,declared` after `#` comment lines; `increment` is
    /// blank on the first row.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "# window: {}", self.window)?;
        writeln!(w, "# threshold: {:?}", self.threshold)?;
        writeln!(w, "t,z,increment,declared")?;
        for (k, t) in self.statistic.timestamps().enumerate() {
            let z = self.statistic.values[k];
            let inc = if k == 0 { String::new() } else { format!("{:?}", (z - self.statistic.values[k - 1]).abs()) };
            let flag = u8::from(self.declared.binary_search(&t).is_ok());
            writeln!(w, "{t},{z:?},{inc},{flag}")?;
        }
        Ok(())
    }
}

/// Eval-mode model with every snapshot of a network embedded once.
pub struct SgnnScorer<'a> {
    model: &'a Sgnn,
    embeddings: Vec<Matrix>,
}

impl<'a> SgnnScorer<'a> {
    pub fn new(model: &'a Sgnn, net: &DynamicNetwork) -> Result<Self> {
        let embeddings = net
            .snapshots()
            .par_iter()
            .map(|g| model.embed(&model.prepare(g)?))
            .collect::<Result<_>>()?;
        Ok(Self { model, embeddings })
    }

    /// Similarity of snapshots `t1` and `t2` (1-based).
    pub fn score(&self, t1: usize, t2: usize) -> Result<f64> {
        self.model.score_embeddings(&self.embeddings[t1 - 1], &self.embeddings[t2 - 1])
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}
