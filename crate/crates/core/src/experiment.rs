//! End-to-end pipelines shared by the command-line tool and the acceptance
//! suite: scenario training, localisation, benchmark sweeps and a planted
//! correlation-regime generator.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_statistic, Baseline, BaselineConfig};
use crate::detection::{localize_single_offline, similarity_statistic, Localisation, SgnnScorer, StatisticSeries};
use crate::error::{Error, Result};
use crate::evaluation::{localisation_error, summarize, MetricRecord};
use crate::graph::{DynamicNetwork, Graph};
use crate::ingest::{windowed_correlations, TimeSeriesPanel};
use crate::linalg::Matrix;
use crate::sgnn::{evaluate_pairs, prepare_all, train, IndexedPair, Pooling, Sgnn, SgnnConfig, TrainOutcome, TrainingData};
use crate::synthetic::{equal_blocks, generate_pair_dataset, sample_sequence, scenario_models, GraphPairDataset, ScenarioKind, ScenarioModels, ScenarioSpec};

/// Training data over the flattened graphs of a pair dataset (pair `i` uses
/// graphs `2i` and `2i + 1`), plus the held-out test pairs.
pub fn pair_training_data(ds: &GraphPairDataset, config: &SgnnConfig) -> Result<(TrainingData, Vec<IndexedPair>)> {
    let graphs: Vec<Graph> = ds.pairs.iter().flat_map(|p| [p.first.clone(), p.second.clone()]).collect();
    let graphs = prepare_all(&graphs, config)?;
    let index = |ids: &[usize]| -> Vec<IndexedPair> {
        ids.iter().map(|&i| IndexedPair { a: 2 * i, b: 2 * i + 1, label: ds.pairs[i].label }).collect()
    };
    let test = index(&ds.test);
    Ok((TrainingData { graphs, train: index(&ds.train), validation: index(&ds.validation) }, test))
}

#[derive(Debug, Clone)]
pub struct ScenarioTraining {
    pub outcome: TrainOutcome,
    pub test_accuracy: f64,
    pub test_f1: f64,
}

/// Draws `n_pairs` labelled pairs from `models`, trains and scores the test split.
pub fn train_on_models(models: &ScenarioModels, n_pairs: usize, config: &SgnnConfig, rng: &mut dyn RngCore) -> Result<ScenarioTraining> {
    let ds = generate_pair_dataset(models, n_pairs, rng)?;
    let (data, test) = pair_training_data(&ds, config)?;
    let outcome = train(&data, config, rng)?;
    let (test_accuracy, test_f1) = evaluate_pairs(&outcome.model, &data.graphs, &test)?;
    Ok(ScenarioTraining { outcome, test_accuracy, test_f1 })
}

/// Average-similarity statistic of a trained model over `net`.
pub fn sgnn_statistic(model: &Sgnn, net: &DynamicNetwork, l: usize) -> Result<StatisticSeries> {
    let scorer = SgnnScorer::new(model, net)?;
    similarity_statistic(net.len(), l, |a, b| scorer.score(a, b))
}

/// Localisation error of a single-change-point estimate against the first true change-point.
pub fn single_error(z: &StatisticSeries, net: &DynamicNetwork, mode: Localisation) -> Result<usize> {
    let tau = net
        .change_points()
        .and_then(|c| c.first().copied())
        .ok_or_else(|| Error::param("network has no ground-truth change-point"))?;
    Ok(localisation_error(localize_single_offline(z, mode)?, tau))
}

fn default_windows() -> Vec<usize> {
    vec![6]
}

fn default_poolings() -> Vec<Pooling> {
    vec![Pooling::SortK]
}

/// Scenario sweep: for every (level, seed) a pair dataset and a test sequence
/// are drawn from the same models, one s-GNN is trained per pooling variant,
/// and every method is scored at every window size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkPlan {
    pub scenario: ScenarioKind,
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub t_len: usize,
    pub n_pairs: usize,
    pub windows: Vec<usize>,
    pub poolings: Vec<Pooling>,
    pub baselines: Vec<Baseline>,
    pub localisation: Localisation,
    pub sgnn: SgnnConfig,
    pub baseline_config: BaselineConfig,
}

impl Default for BenchmarkPlan {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Merge,
            levels: vec![0.5],
            seeds: (0..10).collect(),
            n: 100,
            t_len: 100,
            n_pairs: 1000,
            windows: default_windows(),
            poolings: default_poolings(),
            baselines: Baseline::ALL.to_vec(),
            localisation: Localisation::ArgMin,
            sgnn: SgnnConfig::default(),
            baseline_config: BaselineConfig::default(),
        }
    }
}

impl BenchmarkPlan {
    /// Named presets: `merge`, `birth1`, `birth2`, `swaps` (difficulty grids),
    /// `window-sweep` (Merge, L ∈ {6, 12, 24}) and `pooling-sweep` (Birth1 with
    /// Sort-k at k = 100 against Max and Average).
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let levels = |kind: ScenarioKind, levels: Vec<f64>| Self { scenario: kind, levels, ..Self::default() };
        Ok(match name {
            "merge" => levels(ScenarioKind::Merge, vec![0.05, 0.1, 0.2, 0.3, 0.5]),
            "birth1" => levels(ScenarioKind::Birth1, vec![5.0, 10.0, 15.0, 25.0]),
            "birth2" => levels(ScenarioKind::Birth2, vec![0.05, 0.1, 0.2, 0.3]),
            "swaps" => levels(ScenarioKind::Swaps, vec![0.1, 0.2, 0.3, 0.5]),
            "window-sweep" => Self { levels: vec![0.3, 0.4, 0.5], windows: vec![6, 12, 24], ..base },
            "pooling-sweep" => Self {
                scenario: ScenarioKind::Birth1,
                levels: vec![5.0, 10.0, 15.0, 25.0],
                poolings: vec![Pooling::SortK, Pooling::Max, Pooling::Average],
                baselines: Vec::new(),
                sgnn: SgnnConfig { sortk: 100, ..base.sgnn.clone() },
                ..base
            },
            _ => return Err(Error::Config(format!("unknown benchmark preset {name:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.seeds.is_empty() || self.windows.is_empty() {
            return Err(Error::Config("levels, seeds and windows must be nonempty".into()));
        }
        if let Some(&l) = self.windows.iter().find(|&&l| l == 0 || l >= self.t_len) {
            return Err(Error::Config(format!("window {l} must lie in [1, T)")));
        }
        for &level in &self.levels {
            ScenarioSpec::new(self.scenario, level, self.n).validate()?;
        }
        self.sgnn.validate()
    }
}

/// Method name of an s-GNN variant.
pub fn sgnn_method(pooling: Pooling) -> String {
    match pooling {
        Pooling::SortK => "sgnn".to_string(),
        other => format!("sgnn-{other}"),
    }
}

/// One (level, seed) cell of a plan; the random stream depends only on the
/// seed and the level index.
pub fn run_cell(plan: &BenchmarkPlan, level_index: usize, seed: u64) -> Result<Vec<MetricRecord>> {
    let level = plan.levels[level_index];
    let spec = ScenarioSpec::new(plan.scenario, level, plan.n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(level_index as u64);
    let models = scenario_models(&spec, &mut rng)?;
    let net = sample_sequence(&models, plan.t_len, None, &mut rng)?;
    let tau = net.change_points().expect("generated with a change-point")[0];
    let record = |method: String, metrics: BTreeMap<String, f64>| MetricRecord {
        method,
        scenario: plan.scenario.to_string(),
        level,
        seed,
        metrics,
    };
    let mut out = Vec::new();
    for &pooling in &plan.poolings {
        let config = SgnnConfig { pooling, ..plan.sgnn.clone() };
        let trained = train_on_models(&models, plan.n_pairs, &config, &mut rng)?;
        let scorer = SgnnScorer::new(&trained.outcome.model, &net)?;
        for &l in &plan.windows {
            let z = similarity_statistic(net.len(), l, |a, b| scorer.score(a, b))?;
            let tau_hat = localize_single_offline(&z, plan.localisation)?;
            let metrics = BTreeMap::from([
                ("window".to_string(), l as f64),
                ("tau".to_string(), tau as f64),
                ("tau_hat".to_string(), tau_hat as f64),
                ("error".to_string(), localisation_error(tau_hat, tau) as f64),
                ("pair_accuracy".to_string(), trained.test_accuracy),
                ("pair_f1".to_string(), trained.test_f1),
            ]);
            out.push(record(sgnn_method(pooling), metrics));
        }
    }
    for &b in &plan.baselines {
        for &l in &plan.windows {
            let z = baseline_statistic(&net, b, l, &plan.baseline_config)?;
            let tau_hat = localize_single_offline(&z, plan.localisation)?;
            let metrics = BTreeMap::from([
                ("window".to_string(), l as f64),
                ("tau".to_string(), tau as f64),
                ("tau_hat".to_string(), tau_hat as f64),
                ("error".to_string(), localisation_error(tau_hat, tau) as f64),
            ]);
            out.push(record(b.id().to_string(), metrics));
        }
    }
    Ok(out)
}

/// Every cell of the plan, in parallel; records are ordered by level, seed, method.
pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<Vec<MetricRecord>> {
    plan.validate()?;
    let cells: Vec<(usize, u64)> = (0..plan.levels.len()).flat_map(|i| plan.seeds.iter().map(move |&s| (i, s))).collect();
    let nested: Vec<Vec<MetricRecord>> = cells.par_iter().map(|&(i, s)| run_cell(plan, i, s)).collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Mean and standard deviation of one metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub scenario: String,
    pub level: f64,
    pub window: Option<usize>,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Groups records by (method, scenario, level, window) and summarises every
/// other metric over seeds.
pub fn aggregate(records: &[MetricRecord]) -> Vec<AggregateRow> {
    type Key = (String, String, u64, Option<usize>, String);
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    for r in records {
        let window = r.metrics.get("window").map(|&w| w as usize);
        for (name, &value) in r.metrics.iter().filter(|(k, _)| k.as_str() != "window") {
            let key = (r.method.clone(), r.scenario.clone(), r.level.to_bits(), window, name.clone());
            let entry = groups.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(value);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let s = summarize(&groups[&key]);
            let (method, scenario, level, window, metric) = key;
            AggregateRow { method, scenario, level: f64::from_bits(level), window, metric, mean: s.mean, std: s.std, count: s.count }
        })
        .collect()
}

pub fn write_aggregate_csv<W: Write>(mut w: W, rows: &[AggregateRow], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "method,scenario,level,window,metric,mean,std,count")?;
    for r in rows {
        let window = r.window.map_or(String::new(), |l| l.to_string());
        writeln!(w, "{},{},{},{},{},{},{},{}", r.method, r.scenario, r.level, window, r.metric, r.mean, r.std, r.count)?;
    }
    Ok(())
}

pub fn write_records_csv<W: Write>(mut w: W, records: &[MetricRecord], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "method,scenario,level,seed,metric,value")?;
    for r in records {
        for (k, v) in &r.metrics {
            writeln!(w, "{},{},{},{},{},{}", r.method, r.scenario, r.level, r.seed, k, v)?;
        }
    }
    Ok(())
}

/// Block factor model: every series loads on the factor of its community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRegimes {
    pub n: usize,
    pub communities: usize,
    pub regimes: usize,
    /// Correlation snapshots per regime.
    pub regime_len: usize,
    /// Observations per snapshot window.
    pub window: usize,
    /// Factor loading; within-community correlation is `loading²`.
    pub loading: f64,
}

impl Default for PlantedRegimes {
    fn default() -> Self {
        Self { n: 30, communities: 3, regimes: 3, regime_len: 30, window: 60, loading: 0.7 }
    }
}

/// Panel, per-regime memberships and the 1-based snapshot indices where
/// regimes start (excluding the first).
pub struct PlantedPanel {
    pub panel: TimeSeriesPanel,
    pub memberships: Vec<Vec<usize>>,
    pub boundaries: Vec<usize>,
}

/// Each regime relabels the nodes by a fresh random permutation of equal blocks.
pub fn planted_regime_panel<R: Rng + ?Sized>(spec: &PlantedRegimes, rng: &mut R) -> Result<PlantedPanel> {
    if spec.communities == 0 || spec.communities > spec.n || spec.regimes == 0 || spec.regime_len == 0 || spec.window < 2 {
        return Err(Error::param("degenerate planted-regime specification"));
    }
    if !(0.0..=1.0).contains(&spec.loading) {
        return Err(Error::param("loading must lie in [0, 1]"));
    }
    let base = equal_blocks(spec.n, spec.communities);
    let memberships: Vec<Vec<usize>> = (0..spec.regimes)
        .map(|r| {
            if r == 0 {
                base.clone()
            } else {
                let mut m = base.clone();
                m.shuffle(rng);
                m
            }
        })
        .collect();
    let per_regime = spec.regime_len * spec.window;
    let m = spec.regimes * per_regime;
    let noise = (1.0 - spec.loading * spec.loading).sqrt();
    let mut values = Matrix::zeros(spec.n, m);
    for col in 0..m {
        let memb = &memberships[col / per_regime];
        let factors: Vec<f64> = (0..spec.communities).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..spec.n {
            let e: f64 = StandardNormal.sample(rng);
            values[(i, col)] = spec.loading * factors[memb[i]] + noise * e;
        }
    }
    let boundaries = (1..spec.regimes).map(|r| r * spec.regime_len + 1).collect();
    Ok(PlantedPanel { panel: TimeSeriesPanel::new(values)?, memberships, boundaries })
}

/// Correlation snapshots of a planted panel.
pub fn planted_regime_correlations<R: Rng + ?Sized>(spec: &PlantedRegimes, rng: &mut R) -> Result<(Vec<Matrix>, Vec<usize>)> {
    let planted = planted_regime_panel(spec, rng)?;
    Ok((windowed_correlations(&planted.panel, spec.window)?, planted.boundaries))
}
