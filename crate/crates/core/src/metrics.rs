//! Error metrics and benchmark aggregation.
//!
//! The corruption error of a model under one corruption is its error summed
//! over severities 1..=5, normalized by the same sum for a baseline model.
//! Aggregation pairs records by seed against the baseline method, then
//! reports mean and spread across seeds.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::corrupt::CorruptionKind;
use crate::error::{Error, Result};
use crate::network::LayeredNet;
use crate::tensor::Tensor;

/// One measured error cell: (method, corruption, severity, seed) -> error.
/// Severity 0 means clean evaluation and carries corruption kind `none`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub method: String,
    pub corruption: String,
    pub severity: u8,
    pub seed: u64,
    pub error: f64,
}

impl MetricsRecord {
    pub fn new(method: &str, corruption: &str, severity: u8, seed: u64, error: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&error) {
            return Err(Error::InvalidInput(format!(
                "error must lie in [0, 1], got {error}"
            )));
        }
        if severity == 0 && corruption != "none" {
            return Err(Error::InvalidInput(
                "severity 0 records must carry corruption kind none".into(),
            ));
        }
        Ok(Self {
            method: method.to_string(),
            corruption: corruption.to_string(),
            severity,
            seed,
            error,
        })
    }
}

/// Fraction of argmax-misclassified samples; argmax ties break toward the
/// lowest class index.
pub fn predictive_error(net: &LayeredNet, inputs: &[Tensor], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "predictive_error needs matching non-empty inputs/labels, got {}/{}",
            inputs.len(),
            labels.len()
        )));
    }
    let mut wrong = 0usize;
    for (x, label) in inputs.iter().zip(labels) {
        if net.predict(x)? != *label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / inputs.len() as f64)
}

fn severity_sum_ratio(errors_f: &[f64], errors_baseline: &[f64]) -> Result<f64> {
    let num: f64 = errors_f.iter().sum();
    let den: f64 = errors_baseline.iter().sum();
    if den <= 0.0 {
        return Err(Error::DegenerateBaseline(
            "baseline severity-summed error is zero".into(),
        ));
    }
    Ok(num / den)
}

/// Corruption error: error summed over the five severities, divided by the
/// same sum for the baseline.
pub fn corruption_error(errors_f: &[f64], errors_baseline: &[f64]) -> Result<f64> {
    if errors_f.len() != 5 || errors_baseline.len() != 5 {
        return Err(Error::InvalidInput(format!(
            "corruption_error needs 5 per-severity errors, got {}/{}",
            errors_f.len(),
            errors_baseline.len()
        )));
    }
    severity_sum_ratio(errors_f, errors_baseline)
}

/// One aggregate table row; `corruption == "Avg"` for the per-method average.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub corruption: String,
    pub mean_ce: f64,
    pub std_ce: f64,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates raw records into corruption-error rows, one per
/// (method, corruption), plus an `Avg` row per method.
///
/// CE is computed per seed against the same-seed baseline record set, then
/// averaged across seeds (population std). The severity sum runs over the
/// severities present in the records (a full grid reproduces the five-term
/// metric exactly; a partial grid uses the same ratio over its own set).
/// Methods sort alphabetically with the baseline first; corruptions follow
/// the canonical kind order. The result is independent of record order.
pub fn aggregate(records: &[MetricsRecord], baseline_method: &str) -> Result<Vec<AggregateRow>> {
    // (method, corruption, seed) -> severity -> error
    let mut cells: BTreeMap<(String, String, u64), BTreeMap<u8, f64>> = BTreeMap::new();
    for r in records {
        if r.severity == 0 {
            continue; // clean rows are not part of CE
        }
        cells
            .entry((r.method.clone(), r.corruption.clone(), r.seed))
            .or_default()
            .insert(r.severity, r.error);
    }

    let mut methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    if !methods.iter().any(|m| m == baseline_method) {
        return Err(Error::InvalidInput(format!(
            "baseline method '{baseline_method}' has no records"
        )));
    }
    methods.retain(|m| m != baseline_method);
    methods.insert(0, baseline_method.to_string());

    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    // The severity set actually recorded; must be consistent across cells.
    let mut severities: Vec<u8> = records
        .iter()
        .filter(|r| r.severity > 0)
        .map(|r| r.severity)
        .collect();
    severities.sort_unstable();
    severities.dedup();

    let corruptions: Vec<&str> = CorruptionKind::ALL.iter().map(|k| k.name()).collect();
    let severity_errors = |method: &str, corruption: &str, seed: u64| -> Result<Vec<f64>> {
        let cell = cells
            .get(&(method.to_string(), corruption.to_string(), seed))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "missing records for ({method}, {corruption}, seed {seed})"
                ))
            })?;
        severities
            .iter()
            .map(|s| {
                cell.get(s).copied().ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "missing severity {s} for ({method}, {corruption}, seed {seed})"
                    ))
                })
            })
            .collect()
    };

    let mut rows = Vec::new();
    for method in &methods {
        // Per-seed CE for each corruption that has records for this method.
        let mut per_corruption: Vec<(String, Vec<f64>)> = Vec::new();
        for corruption in &corruptions {
            if !cells.contains_key(&(method.clone(), corruption.to_string(), seeds[0])) {
                continue;
            }
            let mut ces = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let f = severity_errors(method, corruption, seed)?;
                let b = severity_errors(baseline_method, corruption, seed)?;
                ces.push(severity_sum_ratio(&f, &b)?);
            }
            per_corruption.push((corruption.to_string(), ces));
        }
        for (corruption, ces) in &per_corruption {
            let (mean, std) = mean_and_std(ces);
            rows.push(AggregateRow {
                method: method.clone(),
                corruption: corruption.clone(),
                mean_ce: mean,
                std_ce: std,
            });
        }
        if !per_corruption.is_empty() {
            // Per-seed average over corruptions, then spread across seeds.
            let avg_per_seed: Vec<f64> = (0..seeds.len())
                .map(|i| {
                    per_corruption.iter().map(|(_, ces)| ces[i]).sum::<f64>()
                        / per_corruption.len() as f64
                })
                .collect();
            let (mean, std) = mean_and_std(&avg_per_seed);
            rows.push(AggregateRow {
                method: method.clone(),
                corruption: "Avg".to_string(),
                mean_ce: mean,
                std_ce: std,
            });
        }
    }
    Ok(rows)
}

/// Writes records as `method,corruption,severity,seed,error` with a header;
/// floats at 6 decimals.
pub fn write_records_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "method,corruption,severity,seed,error")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{:.6}",
            r.method, r.corruption, r.severity, r.seed, r.error
        )?;
    }
    Ok(())
}

/// Reads a records CSV written by [`write_records_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: "empty records file".into(),
        })?;
    if header.trim() != "method,corruption,severity,seed,error" {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("unexpected header '{header}'"),
        });
    }
    let mut records = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("line {}: expected 5 fields, got {}", line_no + 2, fields.len()),
            });
        }
        let parse_err = |what: &str| Error::Format {
            path: path.to_path_buf(),
            msg: format!("line {}: bad {what}", line_no + 2),
        };
        records.push(MetricsRecord::new(
            fields[0],
            fields[1],
            fields[2].parse().map_err(|_| parse_err("severity"))?,
            fields[3].parse().map_err(|_| parse_err("seed"))?,
            fields[4].parse().map_err(|_| parse_err("error"))?,
        )?);
    }
    Ok(records)
}

/// Writes aggregate rows as `method,corruption,mean_CE,std_CE` with a header.
pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "method,corruption,mean_CE,std_CE")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.method, r.corruption, r.mean_ce, r.std_ce
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn classifying_net() -> LayeredNet {
        // Two inputs, two classes: class = argmax(x0, x1).
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        LayeredNet::from_layers(vec![Layer::new(w, None, Activation::Identity).unwrap()]).unwrap()
    }

    #[test]
    fn predictive_error_counts() {
        let net = classifying_net();
        let inputs: Vec<Tensor> = vec![
            Tensor::vector(&[0.9, 0.1]).unwrap(), // class 0
            Tensor::vector(&[0.1, 0.9]).unwrap(), // class 1
            Tensor::vector(&[0.8, 0.2]).unwrap(), // class 0
            Tensor::vector(&[0.2, 0.8]).unwrap(), // class 1
            Tensor::vector(&[0.6, 0.4]).unwrap(),
            Tensor::vector(&[0.4, 0.6]).unwrap(),
            Tensor::vector(&[0.7, 0.3]).unwrap(),
            Tensor::vector(&[0.3, 0.7]).unwrap(),
        ];
        let all_right = vec![0, 1, 0, 1, 0, 1, 0, 1];
        assert_eq!(predictive_error(&net, &inputs, &all_right).unwrap(), 0.0);
        let all_wrong = vec![1, 0, 1, 0, 1, 0, 1, 0];
        assert_eq!(predictive_error(&net, &inputs, &all_wrong).unwrap(), 1.0);
        // 3 of 8 wrong.
        let three_wrong = vec![1, 1, 1, 1, 0, 0, 0, 1];
        assert_eq!(predictive_error(&net, &inputs, &three_wrong).unwrap(), 0.375);
        assert!(predictive_error(&net, &[], &[]).is_err());
    }

    #[test]
    fn argmax_ties_break_low() {
        let net = classifying_net();
        let tied = Tensor::vector(&[0.5, 0.5]).unwrap();
        assert_eq!(net.predict(&tied).unwrap(), 0);
    }

    #[test]
    fn corruption_error_cases() {
        let e = [0.1, 0.1, 0.1, 0.1, 0.1];
        assert_eq!(corruption_error(&e, &e).unwrap(), 1.0);
        let b = [0.2, 0.2, 0.2, 0.2, 0.2];
        assert_eq!(corruption_error(&e, &b).unwrap(), 0.5);
        let z = [0.0; 5];
        assert_eq!(corruption_error(&z, &b).unwrap(), 0.0);
        assert!(matches!(
            corruption_error(&e, &z),
            Err(Error::DegenerateBaseline(_))
        ));
        assert!(corruption_error(&e[..4], &b).is_err());
    }

    fn grid_records(methods: &[(&str, f64)], seeds: &[u64]) -> Vec<MetricsRecord> {
        // Constant per-method error across all corruptions/severities.
        let mut records = Vec::new();
        for (method, err) in methods {
            for kind in CorruptionKind::ALL {
                for severity in 1..=5 {
                    for &seed in seeds {
                        records.push(
                            MetricsRecord::new(method, kind.name(), severity, seed, *err).unwrap(),
                        );
                    }
                }
            }
        }
        records
    }

    #[test]
    fn aggregate_single_method_self_baseline() {
        let records = grid_records(&[("sgd", 0.2)], &[1]);
        let rows = aggregate(&records, "sgd").unwrap();
        assert_eq!(rows.len(), 8); // 7 corruptions + Avg
        for row in &rows {
            assert_eq!(row.mean_ce, 1.0);
            assert_eq!(row.std_ce, 0.0);
        }
    }

    #[test]
    fn aggregate_two_seed_mean() {
        let mut records = grid_records(&[("sgd", 0.2)], &[1, 2]);
        // damp: CE 0.4 under seed 1, CE 0.6 under seed 2.
        for kind in CorruptionKind::ALL {
            for severity in 1..=5 {
                records.push(
                    MetricsRecord::new("damp", kind.name(), severity, 1, 0.08).unwrap(),
                );
                records.push(
                    MetricsRecord::new("damp", kind.name(), severity, 2, 0.12).unwrap(),
                );
            }
        }
        let rows = aggregate(&records, "sgd").unwrap();
        let damp_avg = rows
            .iter()
            .find(|r| r.method == "damp" && r.corruption == "Avg")
            .unwrap();
        assert!((damp_avg.mean_ce - 0.5).abs() < 1e-12);
        assert!((damp_avg.std_ce - 0.1).abs() < 1e-12);
    }

    #[test]
    fn aggregate_matches_scripted_recomputation() {
        // 2 methods x 7 corruptions x 3 seeds with varying errors, checked
        // against an independently coded reduction.
        let mut records = Vec::new();
        let err = |m: usize, c: usize, s: usize, seed: usize| {
            0.05 + 0.03 * m as f64 + 0.01 * c as f64 + 0.02 * s as f64 + 0.005 * seed as f64
        };
        for (m, method) in ["sgd", "damp"].iter().enumerate() {
            for (c, kind) in CorruptionKind::ALL.iter().enumerate() {
                for s in 1..=5usize {
                    for seed in 0..3u64 {
                        records.push(
                            MetricsRecord::new(
                                method,
                                kind.name(),
                                s as u8,
                                seed,
                                err(m, c, s, seed as usize),
                            )
                            .unwrap(),
                        );
                    }
                }
            }
        }
        let rows = aggregate(&records, "sgd").unwrap();
        // Independent recomputation.
        for (c, kind) in CorruptionKind::ALL.iter().enumerate() {
            let mut ces = Vec::new();
            for seed in 0..3usize {
                let f: f64 = (1..=5).map(|s| err(1, c, s, seed)).sum();
                let b: f64 = (1..=5).map(|s| err(0, c, s, seed)).sum();
                ces.push(f / b);
            }
            let mean = ces.iter().sum::<f64>() / 3.0;
            let row = rows
                .iter()
                .find(|r| r.method == "damp" && r.corruption == kind.name())
                .unwrap();
            assert!((row.mean_ce - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn records_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let mut records = grid_records(&[("sgd", 0.25)], &[3]);
        records.push(MetricsRecord::new("sgd", "none", 0, 3, 0.0625).unwrap());
        write_records_csv(&records, &path).unwrap();
        let back = read_records_csv(&path).unwrap();
        assert_eq!(back.len(), records.len());
        assert_eq!(back[0], records[0]);
    }

    proptest! {
        // CE(x, x) = 1 whenever the baseline sum is positive.
        #[test]
        fn ce_self_is_one(errors in proptest::collection::vec(0.01f64..1.0, 5)) {
            let ce = corruption_error(&errors, &errors).unwrap();
            prop_assert!((ce - 1.0).abs() < 1e-12);
        }

        // CE is invariant under scaling both argument lists.
        #[test]
        fn ce_is_homogeneous(
            errors in proptest::collection::vec(0.01f64..1.0, 5),
            base in proptest::collection::vec(0.01f64..1.0, 5),
            c in 0.1f64..10.0,
        ) {
            let plain = corruption_error(&errors, &base).unwrap();
            let scaled_f: Vec<f64> = errors.iter().map(|e| e * c).collect();
            let scaled_b: Vec<f64> = base.iter().map(|e| e * c).collect();
            let scaled = corruption_error(&scaled_f, &scaled_b).unwrap();
            prop_assert!((plain - scaled).abs() / plain.max(1e-12) < 1e-9);
        }

        // Aggregation ignores record order.
        #[test]
        fn aggregate_permutation_invariant(swap_seed in 0u64..1000) {
            let records = grid_records(&[("sgd", 0.2), ("damp", 0.15)], &[1, 2]);
            let rows = aggregate(&records, "sgd").unwrap();
            let mut shuffled = records;
            let mut rng = SplitMix64::new(swap_seed);
            rng.shuffle(&mut shuffled);
            let rows2 = aggregate(&shuffled, "sgd").unwrap();
            prop_assert_eq!(rows, rows2);
        }
    }
}
