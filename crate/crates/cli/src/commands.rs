use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ncpd_core::baselines::{baseline_statistic, Baseline, BaselineConfig};
use ncpd_core::detection::{
    calibrate_threshold, localize_single_offline, mmd_statistic, similarity_statistic, DetectionTrace, Localisation,
    SgnnScorer, StatisticSeries,
};
use ncpd_core::evaluation::{adjusted_f1, localisation_error, DetectionScore};
use ncpd_core::experiment::{aggregate, run_benchmark, write_aggregate_csv, write_records_csv, BenchmarkPlan};
use ncpd_core::graph::{DynamicNetwork, EncodingKind, Graph};
use ncpd_core::ingest::{
    quantile_truncate, read_attributes_long, read_matrix_sequence, standardize_attributes, threshold_binarize,
    windowed_correlations, write_matrix_sequence, TimeSeriesPanel,
};
use ncpd_core::sampling::{random_scheme, split_sequence, windowed_scheme, PairDataset, PairExample, Split};
use ncpd_core::selfsup::{selfsup_changepoints, ClusterCount};
use ncpd_core::sgnn::{
    evaluate_pairs, grid_search, prepare_all, train, Checkpoint, IndexedPair, Pooling, SgnnConfig, SgnnGrid, TrainingData,
};
use ncpd_core::synthetic::{generate_pair_dataset, sample_sequence, scenario_models, ScenarioKind, ScenarioSpec, PAIR_SPLIT};

use crate::error::{CliError, CliResult};
use crate::output::{open, OutDir, Stamp};
use crate::{BenchmarkArgs, Cli, Command, DetectArgs, GenerateArgs, GraphMethod, IngestArgs, PairSource, SelfsupArgs, TrainArgs};

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let out = OutDir::new(&cli.out_dir)?;
    let seed = match &cli.command {
        Command::Generate(a) => a.seed,
        Command::Train(a) => a.seed,
        Command::Benchmark(a) => a.seed,
        Command::SelfsupLabels(a) => a.seed,
        Command::Ingest(_) | Command::Detect(_) => 0,
    };
    let stamp = Stamp::new(seed, &cli.command);
    match &cli.command {
        Command::Generate(a) => generate(a, &out, &stamp),
        Command::Ingest(a) => ingest(a, &out, &stamp),
        Command::Train(a) => train_cmd(a, &out, &stamp),
        Command::Detect(a) => detect(a, &out, &stamp),
        Command::Benchmark(a) => benchmark(a, &out, &stamp),
        Command::SelfsupLabels(a) => selfsup(a, &out, &stamp),
    }
}

fn read_network(path: &Path) -> CliResult<DynamicNetwork> {
    Ok(DynamicNetwork::read_jsonl(open(path)?)?.0)
}

fn write_network(out: &OutDir, name: &str, net: &DynamicNetwork, stamp: &Stamp) -> CliResult<PathBuf> {
    out.write(name, |w| Ok(net.write_jsonl(w, Some(&stamp.provenance()))?))
}

fn write_pairs(out: &OutDir, name: &str, ds: &PairDataset, stamp: &Stamp) -> CliResult<PathBuf> {
    out.write(name, |w| Ok(ds.write_csv(w, &stamp.comments())?))
}

/// `a..b`, inclusive on both ends.
fn parse_range(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("expected a range `a..b`, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a = a.trim().parse().map_err(|_| bad())?;
    let b = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn generate(a: &GenerateArgs, out: &OutDir, stamp: &Stamp) -> CliResult<()> {
    let kind: ScenarioKind = a.scenario.parse()?;
    let spec = ScenarioSpec::new(kind, a.level, a.n);
    spec.validate()?;
    for seed in a.seed..a.seed + a.seeds {
        let stamp = stamp.with_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let models = scenario_models(&spec, &mut rng)?;
        let net = sample_sequence(&models, a.t_len, a.tau, &mut rng)?;
        let stem = format!("{kind}-{}-seed{seed}", a.level);
        let seq_name = format!("{stem}.jsonl");
        write_network(out, &seq_name, &net, &stamp)?;
        if a.pairs == 0 {
            continue;
        }
        let splits: [(Split, Vec<PairExample>); 3] = match a.pair_source {
            PairSource::Independent => {
                let ds = generate_pair_dataset(&models, a.pairs, &mut rng)?;
                let graphs: Vec<Graph> = ds.pairs.iter().flat_map(|p| [p.first.clone(), p.second.clone()]).collect();
                let pair_name = format!("{stem}-pairs.jsonl");
                write_network(out, &pair_name, &DynamicNetwork::new(graphs, None, None)?, &stamp)?;
                let index = |ids: &[usize]| -> Vec<PairExample> {
                    ids.iter().map(|&i| PairExample { t1: 2 * i + 1, t2: 2 * i + 2, label: ds.pairs[i].label }).collect()
                };
                let splits = [(Split::Train, index(&ds.train)), (Split::Validation, index(&ds.validation)), (Split::Test, index(&ds.test))];
                write_splits(out, &stem, &pair_name, splits, &stamp)?;
                continue;
            }
            PairSource::Sequence => {
                let [tr, va, te] = split_sequence(a.t_len, PAIR_SPLIT)?;
                let cps = net.change_points().unwrap_or(&[]);
                [
                    (Split::Train, random_scheme(tr, cps, a.pairs, &mut rng)?),
                    (Split::Validation, windowed_scheme(va, cps, a.window)?),
                    (Split::Test, windowed_scheme(te, cps, a.window)?),
                ]
            }
        };
        write_splits(out, &stem, &seq_name, splits, &stamp)?;
    }
    Ok(())
}

fn write_splits(out: &OutDir, stem: &str, source: &str, splits: [(Split, Vec<PairExample>); 3], stamp: &Stamp) -> CliResult<()> {
    for (split, pairs) in splits {
        let suffix = match split {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        };
        let ds = PairDataset { pairs, source: source.to_string(), split };
        write_pairs(out, &format!("{stem}-{suffix}.csv"), &ds, stamp)?;
    }
    Ok(())
}

fn ingest(a: &IngestArgs, out: &OutDir, stamp: &Stamp) -> CliResult<()> {
    let panel = TimeSeriesPanel::read_csv(open(&a.input)?)?;
    let mats = windowed_correlations(&panel, a.window)?;
    let graphs = match a.method {
        GraphMethod::Quantile => quantile_truncate(&mats, a.q_low, a.q_high)?,
        GraphMethod::Threshold => threshold_binarize(&mats, a.eta)?,
    };
    let graphs = match &a.attributes {
        None => graphs,
        Some(path) => {
            let attrs = read_attributes_long(open(path)?)?;
            if attrs.len() != graphs.len() {
                return Err(CliError::Usage(format!(
                    "{} attribute snapshots for {} correlation snapshots",
                    attrs.len(),
                    graphs.len()
                )));
            }
            let attrs = if a.raw_attributes { attrs } else { standardize_attributes(&attrs)? };
            graphs.into_iter().zip(attrs).map(|(g, e)| g.with_attributes(e)).collect::<Result<_, _>>()?
        }
    };
    let labels = match &a.labels {
        None => None,
        Some(path) => Some(read_labels(path)?),
    };
    let cps = match (&a.change_points, &labels) {
        (Some(c), _) => Some(c.clone()),
        (None, Some(l)) => Some(DynamicNetwork::change_points_from_labels(l)),
        (None, None) => None,
    };
    let net = DynamicNetwork::new(graphs, cps, labels)?;
    write_network(out, &format!("{}.jsonl", a.name), &net, stamp)?;
    out.write(&format!("{}-correlations.csv", a.name), |w| Ok(write_matrix_sequence(w, &mats, &stamp.comments())?))?;
    Ok(())
}

/// One integer per non-comment line.
fn read_labels(path: &Path) -> CliResult<Vec<i64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v = t.parse().map_err(|_| ncpd_core::Error::Parse { line: i + 1, message: format!("expected an integer label, got {t:?}") })?;
        out.push(v);
    }
    Ok(out)
}

fn sgnn_config(a: &TrainArgs) -> CliResult<SgnnConfig> {
    let config = SgnnConfig {
        gcn_layers: a.layers,
        hidden_units: a.hidden,
        sortk: a.sortk,
        fc_units: (a.fc[0], a.fc[1]),
        dropout: a.dropout,
        encoding: a.encoding.parse::<EncodingKind>()?,
        pooling: a.pooling.parse::<Pooling>()?,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        use_attributes: a.use_attributes,
    };
    config.validate()?;
    Ok(config)
}

fn read_pairs(path: &Path) -> CliResult<PairDataset> {
    Ok(PairDataset::read_csv(open(path)?)?)
}

/// Network a pair file points at, relative to the pair file's directory.
fn pair_source(csv: &Path, ds: &PairDataset) -> CliResult<PathBuf> {
    if ds.source.is_empty() {
        return Err(CliError::Usage(format!("{} has no `# source:` line; pass --network", csv.display())));
    }
    let source = Path::new(&ds.source);
    Ok(if source.is_absolute() { source.to_path_buf() } else { csv.parent().unwrap_or(Path::new(".")).join(source) })
}

fn indexed(ds: &PairDataset, t_len: usize) -> CliResult<Vec<IndexedPair>> {
    ds.pairs
        .iter()
        .map(|p| {
            if p.t1 == 0 || p.t2 == 0 || p.t1 > t_len || p.t2 > t_len {
                return Err(CliError::Usage(format!("pair ({}, {}) outside the network's 1..={t_len}", p.t1, p.t2)));
            }
            Ok(IndexedPair { a: p.t1 - 1, b: p.t2 - 1, label: p.label })
        })
        .collect()
}

#[derive(Serialize)]
struct TrainReport<'a> {
    best_epoch: Option<usize>,
    best_val_f1: f64,
    test_accuracy: Option<f64>,
    test_f1: Option<f64>,
    config: &'a SgnnConfig,
    seed: u64,
    config_hash: &'a str,
}

fn train_cmd(a: &TrainArgs, out: &OutDir, stamp: &Stamp) -> CliResult<()> {
    let base = sgnn_config(a)?;
    let train_ds = read_pairs(&a.pairs)?;
    let val_ds = read_pairs(&a.val)?;
    let network = match &a.network {
        Some(p) => p.clone(),
        None => {
            let p = pair_source(&a.pairs, &train_ds)?;
            if pair_source(&a.val, &val_ds)? != p {
                return Err(CliError::Usage("training and validation pairs reference different networks; pass --network".into()));
            }
            p
        }
    };
    let net = read_network(&network)?;
    let graphs = prepare_all(net.snapshots(), &base)?;
    let data = TrainingData { graphs, train: indexed(&train_ds, net.len())?, validation: indexed(&val_ds, net.len())? };
    let (outcome, config, grid_scores) = if a.grid == "none" {
        (train(&data, &base, &mut ChaCha8Rng::seed_from_u64(a.seed))?, base.clone(), None)
    } else {
        let grid = SgnnGrid::by_name(&a.grid)?;
        let g = grid_search(&grid.configs(&base), &data, a.seed)?;
        (g.best, g.best_config, Some(g.scores))
    };
    let test = match &a.test {
        Some(path) => Some(evaluate_pairs(&outcome.model, &data.graphs, &indexed(&read_pairs(path)?, net.len())?)?),
        None => None,
    };
    let ck = Checkpoint::new(&outcome.model, Some(outcome.optimizer.clone()), Some(a.seed), Some(stamp.config_hash.clone()));
    out.write(&format!("{}.checkpoint.json", a.name), |w| Ok(ck.write(w)?))?;
    out.write(&format!("{}-epochs.csv", a.name), |w| {
        let e = |r: std::io::Result<()>| r.map_err(ncpd_core::Error::from);
        for c in stamp.comments() {
            e(writeln!(w, "# {c}"))?;
        }
        e(writeln!(w, "epoch,train_loss,val_accuracy,val_f1"))?;
        for r in &outcome.history {
            e(writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, r.val_accuracy, r.val_f1))?;
        }
        Ok(())
    })?;
    if let Some(scores) = grid_scores {
        out.write(&format!("{}-grid.csv", a.name), |w| {
            let e = |r: std::io::Result<()>| r.map_err(ncpd_core::Error::from);
            for c in stamp.comments() {
                e(writeln!(w, "# {c}"))?;
            }
            e(writeln!(w, "learning_rate,weight_decay,dropout,sortk,hidden_units,val_f1"))?;
            for (c, f1) in &scores {
                e(writeln!(w, "{},{},{},{},{},{}", c.learning_rate, c.weight_decay, c.dropout, c.sortk, c.hidden_units, f1))?;
            }
            Ok(())
        })?;
    }
    let report = TrainReport {
        best_epoch: outcome.best_epoch,
        best_val_f1: outcome.best_val_f1,
        test_accuracy: test.map(|t| t.0),
        test_f1: test.map(|t| t.1),
        config: &config,
        seed: a.seed,
        config_hash: &stamp.config_hash,
    };
    out.write_json(&format!("{}-report.json", a.name), &report)?;
    Ok(())
}

/// Values of `z` whose timestamps fall in `[lo, hi]`.
fn restrict(z: &StatisticSeries, lo: usize, hi: usize) -> StatisticSeries {
    let keep: Vec<usize> = (0..z.len()).filter(|&k| (lo..=hi).contains(&z.t(k))).collect();
    let start = keep.first().map_or(lo, |&k| z.t(k));
    StatisticSeries::new(start, keep.iter().map(|&k| z.values[k]).collect(), z.orientation)
}

#[derive(Serialize)]
struct DetectReport<'a> {
    method: &'a str,
    window: usize,
    threshold: Option<f64>,
    calibrated: bool,
    declared: &'a [usize],
    localised: usize,
    truth: Option<&'a [usize]>,
    localisation_error: Option<usize>,
    adjusted_f1: Option<DetectionScore>,
    seed: u64,
    config_hash: &'a str,
}

fn detect(a: &DetectArgs, out: &OutDir, stamp: &Stamp) -> CliResult<()> {
    let net = read_network(&a.network)?;
    let l = a.window;
    let mut seed = stamp.seed;
    let z = if a.method == "sgnn" {
        let path = a.checkpoint.as_ref().ok_or_else(|| CliError::Usage("--method sgnn needs --checkpoint".into()))?;
        let ck = Checkpoint::read(open(path)?)?;
        seed = ck.seed.unwrap_or(seed);
        let model = ck.model();
        let scorer = SgnnScorer::new(&model, &net)?;
        if a.mmd {
            mmd_statistic(net.len(), l, |x, y| scorer.score(x, y))?
        } else {
            similarity_statistic(net.len(), l, |x, y| scorer.score(x, y))?
        }
    } else {
        let b: Baseline = a.method.parse()?;
        baseline_statistic(&net, b, l, &BaselineConfig::default())?
    };
    let z = if a.increments { z.increments() } else { z };
    let stamp = stamp.with_seed(seed);
    let truth = net.change_points();
    let (threshold, calibrated) = match a.theta.as_deref() {
        None => (None, false),
        Some("auto") => {
            let (lo, hi) = match &a.val_range {
                Some(r) => parse_range(r)?,
                None => {
                    let r = split_sequence(net.len(), PAIR_SPLIT)?[1];
                    (r.start, r.end)
                }
            };
            let sub = restrict(&z, lo, hi);
            let local: Vec<usize> = truth.unwrap_or(&[]).iter().copied().filter(|c| (lo..=hi).contains(c)).collect();
            (Some(calibrate_threshold(&sub, &local, l, a.tolerance)?.0), true)
        }
        Some(v) => (Some(v.parse::<f64>().map_err(|_| CliError::Usage(format!("--theta expects a number or `auto`, got {v:?}")))?), false),
    };
    let trace = DetectionTrace::new(z, l, threshold.unwrap_or(f64::NAN));
    let mode: Localisation = match a.localisation.as_str() {
        "argmin" => Localisation::ArgMin,
        "max-increment" => Localisation::MaxIncrement,
        other => return Err(CliError::Usage(format!("unknown localisation {other:?}"))),
    };
    let localised = localize_single_offline(&trace.statistic, mode)?;
    let report = DetectReport {
        method: &a.method,
        window: l,
        threshold,
        calibrated,
        declared: &trace.declared,
        localised,
        truth,
        localisation_error: truth.and_then(|t| t.first()).map(|&t| localisation_error(localised, t)),
        adjusted_f1: truth.map(|t| adjusted_f1(&trace.declared, t, a.tolerance)),
        seed: stamp.seed,
        config_hash: &stamp.config_hash,
    };
    out.write(&format!("{}-trace.csv", a.name), |w| Ok(trace.write_csv(w, &stamp.comments())?))?;
    out.write_json(&format!("{}-changepoints.json", a.name), &report)?;
    Ok(())
}

fn benchmark(a: &BenchmarkArgs, out: &OutDir, stamp: &Stamp) -> CliResult<()> {
    let mut plan = match &a.preset {
        Some(p) => BenchmarkPlan::preset(p)?,
        None => BenchmarkPlan::default(),
    };
    if let Some(s) = &a.scenario {
        plan.scenario = s.parse()?;
    }
    if let Some(v) = &a.levels {
        plan.levels = v.clone();
    }
    if let Some(k) = a.seeds {
        plan.seeds = (a.seed..a.seed + k).collect();
    } else {
        plan.seeds = plan.seeds.iter().map(|s| s + a.seed).collect();
    }
    if let Some(v) = a.n {
        plan.n = v;
    }
    if let Some(v) = a.t_len {
        plan.t_len = v;
    }
    if let Some(v) = a.pairs {
        plan.n_pairs = v;
    }
    if let Some(v) = &a.windows {
        plan.windows = v.clone();
    }
    if let Some(v) = &a.poolings {
        plan.poolings = v.iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(v) = &a.methods {
        plan.baselines = if v.len() == 1 && v[0] == "none" {
            Vec::new()
        } else {
            v.iter().map(|m| m.parse()).collect::<Result<_, _>>()?
        };
    }
    if let Some(v) = a.epochs {
        plan.sgnn.epochs = v;
    }
    if let Some(v) = &a.encoding {
        plan.sgnn.encoding = v.parse()?;
    }
    if let Some(v) = a.lr {
        plan.sgnn.learning_rate = v;
    }
    if let Some(v) = &a.localisation {
        plan.localisation = match v.as_str() {
            "argmin" => Localisation::ArgMin,
            "max-increment" => Localisation::MaxIncrement,
            other => return Err(CliError::Usage(format!("unknown localisation {other:?}"))),
        };
    }
    let records = run_benchmark(&plan)?;
    let rows = aggregate(&records);
    let comments = stamp.comments();
    let meta = |body: serde_json::Value| {
        serde_json::json!({ "seed": stamp.seed, "config_hash": stamp.config_hash, "plan": plan, "results": body })
    };
    out.write_json(&format!("{}-records.json", a.name), &meta(serde_json::to_value(&records).map_err(ncpd_core::Error::from)?))?;
    out.write_json(&format!("{}-summary.json", a.name), &meta(serde_json::to_value(&rows).map_err(ncpd_core::Error::from)?))?;
    out.write(&format!("{}-records.csv", a.name), |w| Ok(write_records_csv(w, &records, &comments)?))?;
    out.write(&format!("{}-summary.csv", a.name), |w| Ok(write_aggregate_csv(w, &rows, &comments)?))?;
    Ok(())
}

#[derive(Serialize)]
struct SelfsupReport<'a> {
    k: usize,
    clusters: usize,
    change_points: &'a [usize],
    snapshot_labels: &'a [usize],
    smoothed_labels: &'a [usize],
    seed: u64,
    config_hash: &'a str,
}

fn selfsup(a: &SelfsupArgs, out: &OutDir, stamp: &Stamp) -> CliResult<()> {
    let mats = read_matrix_sequence(open(&a.input)?)?;
    let k = match a.k {
        Some(k) => ClusterCount::Fixed(k),
        None => {
            let (lo, hi) = parse_range(&a.k_range)?;
            ClusterCount::Silhouette((lo..=hi).collect())
        }
    };
    let outcome = selfsup_changepoints(&mats, &k, a.clusters, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let report = SelfsupReport {
        k: outcome.k,
        clusters: a.clusters,
        change_points: &outcome.change_points,
        snapshot_labels: &outcome.snapshot_labels,
        smoothed_labels: &outcome.smoothed_labels,
        seed: stamp.seed,
        config_hash: &stamp.config_hash,
    };
    out.write_json(&format!("{}-labels.json", a.name), &report)?;
    let Some(network) = &a.network else {
        return Ok(());
    };
    let net = read_network(network)?;
    if net.len() != mats.len() {
        return Err(CliError::Usage(format!("network has {} snapshots but {} matrices were read", net.len(), mats.len())));
    }
    let (tr, va) = (a.split[0], a.split[1]);
    let [train_range, val_range, _] = split_sequence(net.len(), (tr, va, (1.0 - tr - va).max(0.0)))?;
    let source = std::fs::canonicalize(network).map_err(|e| CliError::io(network, e))?.display().to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cps = &outcome.change_points;
    if a.pairs > 0 {
        let ds = PairDataset { pairs: random_scheme(train_range, cps, a.pairs, &mut rng)?, source: source.clone(), split: Split::Train };
        write_pairs(out, &format!("{}-train.csv", a.name), &ds, stamp)?;
    }
    let ds = PairDataset { pairs: windowed_scheme(val_range, cps, a.window)?, source, split: Split::Validation };
    write_pairs(out, &format!("{}-val.csv", a.name), &ds, stamp)?;
    Ok(())
}
