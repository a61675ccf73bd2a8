//! Benchmark orchestration: train every (method, seed), evaluate clean and
//! corrupted error grids, and emit the records and corruption-error tables.
//!
//! Checkpoints are cached under `<out>/cache/` keyed by a fingerprint of the
//! training-relevant config plus (method, seed), so re-running a benchmark
//! (for example with a different evaluation grid) never retrains a model it
//! already has — in particular the SGD baseline. Corrupted evaluation sets
//! are derived from fixed streams keyed by (corruption, severity, sample),
//! independent of method and training seed, so every model is judged on the
//! same corrupted data, and identical configs produce byte-identical CSVs.

use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::{DataKind, ExperimentConfig};
use crate::corrupt::{self, CorruptionKind, CorruptionSpec};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{self, AggregateRow, MetricsRecord};
use crate::network::LayeredNet;
use crate::rng::{derive_stream, SplitMix64};
use crate::tensor::Tensor;
use crate::train::{self, Method};

/// Fixed stream root for synthetic benchmark data (shared across methods and
/// training seeds).
const BLOBS_DATA_SEED: u64 = 0x5eed_da7a;
/// Fixed stream root for corrupting evaluation data.
const EVAL_CORRUPTION_SEED: u64 = 0x5eed_c0de;

/// Training and evaluation splits resolved from the config.
pub struct ResolvedData {
    pub train: Dataset,
    pub val: Dataset,
    /// Corruption-evaluation set: the held-out test set when the data kind
    /// provides one, the validation split otherwise.
    pub eval: Dataset,
}

/// Loads the configured dataset and splits it. Blobs are generated from a
/// fixed stream so every run of a config sees identical data.
pub fn resolve_data(config: &ExperimentConfig) -> Result<ResolvedData> {
    let d = &config.data;
    match d.kind {
        DataKind::Blobs => {
            let full = data::synth_blobs(
                d.blobs_n,
                d.blobs_classes,
                d.blobs_dim,
                d.blobs_spread,
                BLOBS_DATA_SEED,
            )?;
            let (train, val) = data::split(&full, d.val_fraction, BLOBS_DATA_SEED)?;
            let eval = val.clone();
            Ok(ResolvedData { train, val, eval })
        }
        DataKind::Mnist => {
            let full = data::load_idx(
                d.train_images.as_ref().unwrap(),
                d.train_labels.as_ref().unwrap(),
            )?;
            let (train, val) = data::split(&full, d.val_fraction, BLOBS_DATA_SEED)?;
            let eval = data::load_idx(
                d.test_images.as_ref().unwrap(),
                d.test_labels.as_ref().unwrap(),
            )?;
            Ok(ResolvedData { train, val, eval })
        }
        DataKind::Cifar10 => {
            let mut inputs = Vec::new();
            let mut labels = Vec::new();
            for path in &d.train_files {
                let batch = data::load_cifar10_bin(path)?;
                inputs.extend(batch.inputs);
                labels.extend(batch.labels);
            }
            let full = Dataset::new(inputs, labels, 10, Some(32))?;
            let (train, val) = data::split(&full, d.val_fraction, BLOBS_DATA_SEED)?;
            let eval = data::load_cifar10_bin(d.test_file.as_ref().unwrap())?;
            Ok(ResolvedData { train, val, eval })
        }
    }
}

/// Cache path for one trained model.
pub fn checkpoint_path(out_dir: &Path, config: &ExperimentConfig, method: Method, seed: u64) -> PathBuf {
    out_dir.join("cache").join(format!(
        "{}_{}_{:016x}.ptnn",
        method.name(),
        seed,
        config.train_fingerprint(method, seed)
    ))
}

/// Trains one (method, seed), or loads it from the cache. Returns the net
/// and whether it was trained in this call.
pub fn train_or_load(
    config: &ExperimentConfig,
    data: &ResolvedData,
    method: Method,
    seed: u64,
    out_dir: &Path,
) -> Result<(LayeredNet, bool)> {
    let path = checkpoint_path(out_dir, config, method, seed);
    if path.exists() {
        return Ok((checkpoint::load(&path)?, false));
    }
    let run_config = config.run_config(method, seed)?;
    let (net, log) = train::fit(&run_config, &data.train, &data.val)?;
    std::fs::create_dir_all(path.parent().unwrap())?;
    checkpoint::save(&net, &path)?;
    let log_dir = out_dir.join("logs");
    std::fs::create_dir_all(&log_dir)?;
    train::write_training_log(
        &log,
        &log_dir.join(format!("train_{}_{}.csv", method.name(), seed)),
    )?;
    Ok((net, true))
}

/// Corrupted copy of the evaluation inputs for one (kind, severity) cell,
/// derived from fixed per-sample streams.
fn corrupted_eval_inputs(
    eval: &Dataset,
    kind: CorruptionKind,
    severity: u8,
    kind_index: usize,
) -> Result<Vec<Tensor>> {
    let spec = CorruptionSpec::new(kind, severity)?;
    eval.inputs
        .iter()
        .enumerate()
        .map(|(sample, x)| {
            let mut rng = SplitMix64::new(derive_stream(
                EVAL_CORRUPTION_SEED,
                &[kind_index as u64, severity as u64, sample as u64],
            ));
            corrupt::apply(&spec, x, &mut rng)
        })
        .collect()
}

/// Evaluates every trained net on the clean set and the full
/// (corruption, severity) grid.
pub fn evaluate_grid(
    config: &ExperimentConfig,
    data: &ResolvedData,
    nets: &[(Method, u64, LayeredNet)],
) -> Result<Vec<MetricsRecord>> {
    let mut records = Vec::new();
    for (method, seed, net) in nets {
        let clean = metrics::predictive_error(net, &data.eval.inputs, &data.eval.labels)?;
        records.push(MetricsRecord::new(method.name(), "none", 0, *seed, clean)?);
    }
    for (kind_index, kind) in config.eval.corruptions.iter().enumerate() {
        for &severity in &config.eval.severities {
            let corrupted = corrupted_eval_inputs(&data.eval, *kind, severity, kind_index)?;
            for (method, seed, net) in nets {
                let err = metrics::predictive_error(net, &corrupted, &data.eval.labels)?;
                records.push(MetricsRecord::new(
                    method.name(),
                    kind.name(),
                    severity,
                    *seed,
                    err,
                )?);
            }
        }
    }
    // Canonical row order: method, corruption (canonical), severity, seed.
    let kind_rank = |name: &str| -> usize {
        if name == "none" {
            return 0;
        }
        CorruptionKind::ALL
            .iter()
            .position(|k| k.name() == name)
            .map(|p| p + 1)
            .unwrap_or(usize::MAX)
    };
    records.sort_by(|a, b| {
        (&a.method, kind_rank(&a.corruption), a.severity, a.seed).cmp(&(
            &b.method,
            kind_rank(&b.corruption),
            b.severity,
            b.seed,
        ))
    });
    Ok(records)
}

/// Benchmark outcome summary.
pub struct BenchSummary {
    pub records_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub trained: usize,
    pub cached: usize,
    pub rows: Vec<AggregateRow>,
}

/// Runs the full benchmark: train/load every (method, seed), evaluate the
/// corruption grid, and write `records.csv`, `aggregate.csv`, and a config
/// echo into the output directory. Refuses to overwrite existing result
/// files unless `force` is set.
pub fn run_benchmark(config: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<BenchSummary> {
    let has_baseline = config.train.methods.contains(&Method::Sgd)
        || config.eval.baseline_records.is_some();
    if !has_baseline {
        return Err(Error::Config {
            line: None,
            msg: "benchmark needs the sgd baseline: include 'sgd' in methods or set \
                  [eval] baseline_records"
                .into(),
        });
    }

    std::fs::create_dir_all(out_dir)?;
    let records_path = out_dir.join("records.csv");
    let aggregate_path = out_dir.join("aggregate.csv");
    if !force && (records_path.exists() || aggregate_path.exists()) {
        return Err(Error::InvalidInput(format!(
            "{} already holds benchmark results; pass --force to overwrite",
            out_dir.display()
        )));
    }
    std::fs::write(out_dir.join("config_echo.txt"), config.canonical_echo())?;

    let data = resolve_data(config)?;
    let mut nets = Vec::new();
    let mut trained = 0;
    let mut cached = 0;
    for &method in &config.train.methods {
        for &seed in &config.run.seeds {
            let (net, was_trained) = train_or_load(config, &data, method, seed, out_dir)?;
            if was_trained {
                trained += 1;
            } else {
                cached += 1;
            }
            nets.push((method, seed, net));
        }
    }

    let mut records = evaluate_grid(config, &data, &nets)?;
    if let Some(baseline_path) = &config.eval.baseline_records {
        let extra = metrics::read_records_csv(baseline_path)?;
        records.extend(extra);
    }
    metrics::write_records_csv(&records, &records_path)?;
    let rows = metrics::aggregate(&records, Method::Sgd.name())?;
    metrics::write_aggregate_csv(&rows, &aggregate_path)?;
    Ok(BenchSummary {
        records_path,
        aggregate_path,
        trained,
        cached,
        rows,
    })
}
