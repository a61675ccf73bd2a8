//! Experiment configuration: a strict line-oriented `key = value` format
//! with `[section]` headers.
//!
//! Unknown sections, unknown keys, duplicate keys, and type mismatches are
//! errors carrying the 1-based line number. Missing keys fall back to the
//! defaults below (the CIFAR-style training profile: sigma 0.2, weight decay
//! 5e-4, Nesterov momentum 0.9, batch 128 split into 8 sub-batches, lr 0.1
//! annealed linearly to 0.001 over the middle of the run); a few keys are
//! required and produce config errors naming the key when absent.
//!
//! ```text
//! [data]
//! kind = blobs            # blobs | mnist | cifar10
//! blobs_n = 4000
//! blobs_classes = 10
//! blobs_dim = 64
//! blobs_spread = 0.12
//! val_fraction = 0.1
//! # mnist: train_images/train_labels/test_images/test_labels = <path>
//! # cifar10: train_files = a.bin;b.bin   test_file = t.bin
//!
//! [model]
//! hidden = 256,256
//!
//! [train]
//! methods = sgd,damp      # sgd dropout damp daap corruption_aug sam asam
//! epochs = 10
//! batch_size = 128
//! sub_batches = 8
//! sigma = 0.2             # damp / daap noise std
//! rho_sam = 0.045
//! rho_asam = 1.0
//! dropout_p = 0.05
//! momentum = 0.9
//! nesterov = true
//! weight_decay = 5e-4
//! schedule = piecewise    # constant | piecewise | warmcosine
//! lr = 0.1
//! lr_final = 0.001
//! anneal_start = 5        # epochs; defaults to epochs/2
//! anneal_end = 9          # epochs; defaults to 0.9 * epochs
//! warmup = 0              # warmcosine only
//! train_corruption = none
//! train_severity = 3
//!
//! [eval]
//! corruptions = gaussian_noise,shot_noise,impulse_noise,brightness,contrast,pixelate,gaussian_blur
//! severities = 1-5
//! baseline_records =      # optional records CSV supplying the sgd baseline
//!
//! [run]
//! seeds = 1,2,3
//! out = results
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corrupt::{CorruptionKind, CorruptionSpec};
use crate::error::{Error, Result};
use crate::perturb::PerturbationSpec;
use crate::train::{Method, RunConfig, ScheduleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Blobs,
    Mnist,
    Cifar10,
}

impl DataKind {
    pub fn name(&self) -> &'static str {
        match self {
            DataKind::Blobs => "blobs",
            DataKind::Mnist => "mnist",
            DataKind::Cifar10 => "cifar10",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub kind: DataKind,
    pub blobs_n: usize,
    pub blobs_classes: usize,
    pub blobs_dim: usize,
    pub blobs_spread: f64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_files: Vec<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub val_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Piecewise,
    WarmCosine,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub methods: Vec<Method>,
    pub epochs: usize,
    pub batch_size: usize,
    pub sub_batches: usize,
    pub sigma: f64,
    pub rho_sam: f64,
    pub rho_asam: f64,
    pub dropout_p: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub lr: f64,
    pub lr_final: f64,
    pub anneal_start: Option<f64>,
    pub anneal_end: Option<f64>,
    pub warmup: f64,
    pub train_corruption: CorruptionKind,
    pub train_severity: u8,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub corruptions: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
    pub baseline_records: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub run: RunSection,
}

fn config_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line: Some(line),
        msg: msg.into(),
    }
}

fn missing_key(section: &str, key: &str, context: &str) -> Error {
    Error::Config {
        line: None,
        msg: format!("missing required key [{section}] {key} ({context})"),
    }
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "kind",
            "blobs_n",
            "blobs_classes",
            "blobs_dim",
            "blobs_spread",
            "train_images",
            "train_labels",
            "test_images",
            "test_labels",
            "train_files",
            "test_file",
            "val_fraction",
        ],
    ),
    ("model", &["hidden"]),
    (
        "train",
        &[
            "methods",
            "epochs",
            "batch_size",
            "sub_batches",
            "sigma",
            "rho_sam",
            "rho_asam",
            "dropout_p",
            "momentum",
            "nesterov",
            "weight_decay",
            "schedule",
            "lr",
            "lr_final",
            "anneal_start",
            "anneal_end",
            "warmup",
            "train_corruption",
            "train_severity",
        ],
    ),
    ("eval", &["corruptions", "severities", "baseline_records"]),
    ("run", &["seeds", "out"]),
];

/// Raw parse result: `(section, key) -> (value, line)`.
struct RawConfig {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line_no, format!("malformed section header '{line}'")))?
                    .trim()
                    .to_string();
                if !KNOWN_KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(config_err(line_no, format!("unknown section '[{name}]'")));
                }
                section = Some(name);
                continue;
            }
            let section_name = section
                .clone()
                .ok_or_else(|| config_err(line_no, format!("key '{line}' before any [section]")))?;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line_no, format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let known = KNOWN_KEYS
                .iter()
                .find(|(s, _)| *s == section_name)
                .map(|(_, keys)| keys.contains(&key.as_str()))
                .unwrap_or(false);
            if !known {
                return Err(config_err(
                    line_no,
                    format!("unknown key '{key}' in section [{section_name}]"),
                ));
            }
            if entries
                .insert((section_name.clone(), key.clone()), (value, line_no))
                .is_some()
            {
                return Err(config_err(
                    line_no,
                    format!("duplicate key '{key}' in section [{section_name}]"),
                ));
            }
        }
        Ok(Self { entries })
    }

    fn get(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|(v, l)| (v.as_str(), *l))
    }

    fn parse_with<T>(
        &self,
        section: &str,
        key: &str,
        default: T,
        parse: impl Fn(&str, usize) -> Result<T>,
    ) -> Result<T> {
        match self.get(section, key) {
            Some((value, line)) => parse(value, line),
            None => Ok(default),
        }
    }

    fn f64_key(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        self.parse_with(section, key, default, |v, line| {
            v.parse::<f64>()
                .map_err(|_| config_err(line, format!("'{v}' is not a number for key '{key}'")))
        })
    }

    fn usize_key(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        self.parse_with(section, key, default, |v, line| {
            v.parse::<usize>()
                .map_err(|_| config_err(line, format!("'{v}' is not an integer for key '{key}'")))
        })
    }

    fn bool_key(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        self.parse_with(section, key, default, |v, line| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(config_err(
                line,
                format!("'{v}' is not true/false for key '{key}'"),
            )),
        })
    }

    fn path_key(&self, section: &str, key: &str) -> Option<PathBuf> {
        self.get(section, key)
            .filter(|(v, _)| !v.is_empty())
            .map(|(v, _)| PathBuf::from(v))
    }
}

fn parse_severities(value: &str, line: usize) -> Result<Vec<u8>> {
    let bad = |msg: String| config_err(line, msg);
    let mut out = Vec::new();
    if let Some((a, b)) = value.split_once('-') {
        let a: u8 = a.trim().parse().map_err(|_| bad(format!("bad severity range '{value}'")))?;
        let b: u8 = b.trim().parse().map_err(|_| bad(format!("bad severity range '{value}'")))?;
        if a > b {
            return Err(bad(format!("severity range '{value}' is decreasing")));
        }
        out.extend(a..=b);
    } else {
        for part in value.split(',') {
            out.push(
                part.trim()
                    .parse()
                    .map_err(|_| bad(format!("bad severity '{part}'")))?,
            );
        }
    }
    if out.is_empty() || out.iter().any(|s| !(1..=5).contains(s)) {
        return Err(bad(format!("severities '{value}' must lie in 1..=5")));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;

        // [data]
        let kind = raw.parse_with("data", "kind", DataKind::Blobs, |v, line| match v {
            "blobs" => Ok(DataKind::Blobs),
            "mnist" => Ok(DataKind::Mnist),
            "cifar10" => Ok(DataKind::Cifar10),
            _ => Err(config_err(line, format!("unknown data kind '{v}'"))),
        })?;
        let data = DataConfig {
            kind,
            blobs_n: raw.usize_key("data", "blobs_n", 4000)?,
            blobs_classes: raw.usize_key("data", "blobs_classes", 10)?,
            blobs_dim: raw.usize_key("data", "blobs_dim", 64)?,
            blobs_spread: raw.f64_key("data", "blobs_spread", 0.12)?,
            train_images: raw.path_key("data", "train_images"),
            train_labels: raw.path_key("data", "train_labels"),
            test_images: raw.path_key("data", "test_images"),
            test_labels: raw.path_key("data", "test_labels"),
            train_files: raw
                .get("data", "train_files")
                .map(|(v, _)| v.split(';').map(|p| PathBuf::from(p.trim())).collect())
                .unwrap_or_default(),
            test_file: raw.path_key("data", "test_file"),
            val_fraction: raw.f64_key("data", "val_fraction", 0.1)?,
        };
        if !(data.val_fraction > 0.0 && data.val_fraction < 1.0) {
            let line = raw.get("data", "val_fraction").map(|(_, l)| l);
            return Err(Error::Config {
                line,
                msg: format!("val_fraction must lie in (0, 1), got {}", data.val_fraction),
            });
        }
        match data.kind {
            DataKind::Mnist => {
                for key in ["train_images", "train_labels", "test_images", "test_labels"] {
                    if raw.path_key("data", key).is_none() {
                        return Err(missing_key("data", key, "required for kind = mnist"));
                    }
                }
            }
            DataKind::Cifar10 => {
                if data.train_files.is_empty() {
                    return Err(missing_key("data", "train_files", "required for kind = cifar10"));
                }
                if data.test_file.is_none() {
                    return Err(missing_key("data", "test_file", "required for kind = cifar10"));
                }
            }
            DataKind::Blobs => {}
        }

        // [model]
        let hidden = raw.parse_with("model", "hidden", vec![256, 256], |v, line| {
            v.split(',')
                .map(|p| {
                    p.trim().parse::<usize>().map_err(|_| {
                        config_err(line, format!("'{p}' is not a layer width in 'hidden'"))
                    })
                })
                .collect()
        })?;
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config {
                line: raw.get("model", "hidden").map(|(_, l)| l),
                msg: "hidden layer widths must be positive".into(),
            });
        }

        // [train]
        let methods = raw.parse_with("train", "methods", vec![Method::Sgd, Method::Damp], |v, line| {
            let methods: Result<Vec<Method>> = v
                .split(',')
                .map(|p| {
                    Method::from_name(p.trim())
                        .ok_or_else(|| config_err(line, format!("unknown method '{}'", p.trim())))
                })
                .collect();
            let methods = methods?;
            if methods.is_empty() {
                return Err(config_err(line, "methods must not be empty"));
            }
            Ok(methods)
        })?;
        let epochs = raw.usize_key("train", "epochs", 10)?;
        let schedule = raw.parse_with("train", "schedule", ScheduleKind::Piecewise, |v, line| {
            match v {
                "constant" => Ok(ScheduleKind::Constant),
                "piecewise" => Ok(ScheduleKind::Piecewise),
                "warmcosine" => Ok(ScheduleKind::WarmCosine),
                _ => Err(config_err(line, format!("unknown schedule '{v}'"))),
            }
        })?;
        let train_corruption =
            raw.parse_with("train", "train_corruption", CorruptionKind::None, |v, line| {
                CorruptionKind::from_name(v)
                    .ok_or_else(|| config_err(line, format!("unknown corruption '{v}'")))
            })?;
        let train = TrainConfig {
            methods,
            epochs,
            batch_size: raw.usize_key("train", "batch_size", 128)?,
            sub_batches: raw.usize_key("train", "sub_batches", 8)?,
            sigma: raw.f64_key("train", "sigma", 0.2)?,
            rho_sam: raw.f64_key("train", "rho_sam", 0.045)?,
            rho_asam: raw.f64_key("train", "rho_asam", 1.0)?,
            dropout_p: raw.f64_key("train", "dropout_p", 0.05)?,
            momentum: raw.f64_key("train", "momentum", 0.9)?,
            nesterov: raw.bool_key("train", "nesterov", true)?,
            weight_decay: raw.f64_key("train", "weight_decay", 5e-4)?,
            schedule,
            lr: raw.f64_key("train", "lr", 0.1)?,
            lr_final: raw.f64_key("train", "lr_final", 0.001)?,
            anneal_start: raw
                .get("train", "anneal_start")
                .filter(|(v, _)| !v.is_empty())
                .map(|(v, line)| {
                    v.parse::<f64>()
                        .map_err(|_| config_err(line, format!("'{v}' is not a number")))
                })
                .transpose()?,
            anneal_end: raw
                .get("train", "anneal_end")
                .filter(|(v, _)| !v.is_empty())
                .map(|(v, line)| {
                    v.parse::<f64>()
                        .map_err(|_| config_err(line, format!("'{v}' is not a number")))
                })
                .transpose()?,
            warmup: raw.f64_key("train", "warmup", 0.0)?,
            train_corruption,
            train_severity: raw.usize_key("train", "train_severity", 3)? as u8,
        };
        for (key, value) in [
            ("sigma", train.sigma),
            ("rho_sam", train.rho_sam),
            ("rho_asam", train.rho_asam),
            ("weight_decay", train.weight_decay),
            ("momentum", train.momentum),
        ] {
            if value < 0.0 || !value.is_finite() {
                return Err(Error::Config {
                    line: raw.get("train", key).map(|(_, l)| l),
                    msg: format!("{key} must be >= 0, got {value}"),
                });
            }
        }
        if !(0.0..1.0).contains(&train.dropout_p) {
            return Err(Error::Config {
                line: raw.get("train", "dropout_p").map(|(_, l)| l),
                msg: format!("dropout_p must lie in [0, 1), got {}", train.dropout_p),
            });
        }
        if train.train_corruption != CorruptionKind::None {
            CorruptionSpec::new(train.train_corruption, train.train_severity).map_err(|e| {
                Error::Config {
                    line: raw.get("train", "train_severity").map(|(_, l)| l),
                    msg: e.to_string(),
                }
            })?;
        }

        // [eval]
        let corruptions = raw.parse_with(
            "eval",
            "corruptions",
            CorruptionKind::ALL.to_vec(),
            |v, line| {
                let kinds: Result<Vec<CorruptionKind>> = v
                    .split(',')
                    .map(|p| {
                        CorruptionKind::from_name(p.trim()).ok_or_else(|| {
                            config_err(line, format!("unknown corruption '{}'", p.trim()))
                        })
                    })
                    .collect();
                let kinds = kinds?;
                if kinds.contains(&CorruptionKind::None) {
                    return Err(config_err(line, "eval corruption list cannot include 'none'"));
                }
                Ok(kinds)
            },
        )?;
        let severities = raw.parse_with("eval", "severities", (1..=5).collect(), |v, line| {
            parse_severities(v, line)
        })?;
        let eval = EvalConfig {
            corruptions,
            severities,
            baseline_records: raw.path_key("eval", "baseline_records"),
        };

        // [run]
        let seeds = raw.parse_with("run", "seeds", vec![1, 2, 3], |v, line| {
            let seeds: Result<Vec<u64>> = v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<u64>()
                        .map_err(|_| config_err(line, format!("'{}' is not a seed", p.trim())))
                })
                .collect();
            let seeds = seeds?;
            if seeds.is_empty() {
                return Err(config_err(line, "seeds must not be empty"));
            }
            let mut sorted = seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != seeds.len() {
                return Err(config_err(line, "seeds must be distinct"));
            }
            Ok(seeds)
        })?;
        let run = RunSection {
            seeds,
            out: raw
                .path_key("run", "out")
                .unwrap_or_else(|| PathBuf::from("results")),
        };

        let config = Self {
            data,
            hidden,
            train,
            eval,
            run,
        };
        // Surface RunConfig-level invariant violations (batch/sub-batch
        // divisibility, spec ranges) at parse time, for the first method.
        config.run_config(config.train.methods[0], config.run.seeds[0])?.validate()?;
        Ok(config)
    }

    /// Assembles the per-run training configuration for one (method, seed).
    pub fn run_config(&self, method: Method, seed: u64) -> Result<RunConfig> {
        let t = &self.train;
        let epochs = t.epochs as f64;
        let schedule = match t.schedule {
            ScheduleKind::Constant => ScheduleSpec::Constant { lr: t.lr },
            ScheduleKind::Piecewise => ScheduleSpec::PiecewiseLinear {
                initial: t.lr,
                final_lr: t.lr_final,
                anneal_start: t.anneal_start.unwrap_or(0.5 * epochs),
                anneal_end: t.anneal_end.unwrap_or(0.9 * epochs),
            },
            ScheduleKind::WarmCosine => ScheduleSpec::WarmLinearCosine {
                start: t.lr_final,
                peak: t.lr,
                end: t.lr_final,
                warmup: t.warmup,
            },
        };
        let perturbation = match method {
            Method::Sgd | Method::CorruptionAug => PerturbationSpec::None,
            Method::Damp => PerturbationSpec::MultiplicativeGaussian { sigma: t.sigma },
            Method::Daap => PerturbationSpec::AdditiveGaussian { sigma: t.sigma },
            Method::Dropout => PerturbationSpec::BernoulliDropout { p: t.dropout_p },
            Method::Sam => PerturbationSpec::Sam { rho: t.rho_sam },
            Method::Asam => PerturbationSpec::Asam { rho: t.rho_asam },
        };
        let train_corruption = if t.train_corruption == CorruptionKind::None {
            CorruptionSpec::none()
        } else {
            CorruptionSpec::new(t.train_corruption, t.train_severity)?
        };
        Ok(RunConfig {
            method,
            hidden: self.hidden.clone(),
            perturbation,
            train_corruption,
            epochs: t.epochs,
            batch_size: t.batch_size,
            sub_batches: t.sub_batches,
            schedule,
            momentum: t.momentum,
            nesterov: t.nesterov,
            weight_decay: t.weight_decay,
            seed,
        })
    }

    /// Canonical text rendering: every field in a fixed order. Identical
    /// configs render to identical bytes (the config echo and cache keys
    /// build on this).
    pub fn canonical_echo(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        s.push_str("[data]\n");
        s.push_str(&format!("kind = {}\n", d.kind.name()));
        s.push_str(&format!("blobs_n = {}\n", d.blobs_n));
        s.push_str(&format!("blobs_classes = {}\n", d.blobs_classes));
        s.push_str(&format!("blobs_dim = {}\n", d.blobs_dim));
        s.push_str(&format!("blobs_spread = {}\n", d.blobs_spread));
        let path_str = |p: &Option<PathBuf>| {
            p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        };
        s.push_str(&format!("train_images = {}\n", path_str(&d.train_images)));
        s.push_str(&format!("train_labels = {}\n", path_str(&d.train_labels)));
        s.push_str(&format!("test_images = {}\n", path_str(&d.test_images)));
        s.push_str(&format!("test_labels = {}\n", path_str(&d.test_labels)));
        s.push_str(&format!(
            "train_files = {}\n",
            d.train_files
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(";")
        ));
        s.push_str(&format!("test_file = {}\n", path_str(&d.test_file)));
        s.push_str(&format!("val_fraction = {}\n", d.val_fraction));
        s.push_str("\n[model]\n");
        s.push_str(&format!(
            "hidden = {}\n",
            self.hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        let t = &self.train;
        s.push_str("\n[train]\n");
        s.push_str(&format!(
            "methods = {}\n",
            t.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
        ));
        s.push_str(&format!("epochs = {}\n", t.epochs));
        s.push_str(&format!("batch_size = {}\n", t.batch_size));
        s.push_str(&format!("sub_batches = {}\n", t.sub_batches));
        s.push_str(&format!("sigma = {}\n", t.sigma));
        s.push_str(&format!("rho_sam = {}\n", t.rho_sam));
        s.push_str(&format!("rho_asam = {}\n", t.rho_asam));
        s.push_str(&format!("dropout_p = {}\n", t.dropout_p));
        s.push_str(&format!("momentum = {}\n", t.momentum));
        s.push_str(&format!("nesterov = {}\n", t.nesterov));
        s.push_str(&format!("weight_decay = {}\n", t.weight_decay));
        s.push_str(&format!(
            "schedule = {}\n",
            match t.schedule {
                ScheduleKind::Constant => "constant",
                ScheduleKind::Piecewise => "piecewise",
                ScheduleKind::WarmCosine => "warmcosine",
            }
        ));
        s.push_str(&format!("lr = {}\n", t.lr));
        s.push_str(&format!("lr_final = {}\n", t.lr_final));
        s.push_str(&format!(
            "anneal_start = {}\n",
            t.anneal_start.map(|v| v.to_string()).unwrap_or_default()
        ));
        s.push_str(&format!(
            "anneal_end = {}\n",
            t.anneal_end.map(|v| v.to_string()).unwrap_or_default()
        ));
        s.push_str(&format!("warmup = {}\n", t.warmup));
        s.push_str(&format!("train_corruption = {}\n", t.train_corruption.name()));
        s.push_str(&format!("train_severity = {}\n", t.train_severity));
        let e = &self.eval;
        s.push_str("\n[eval]\n");
        s.push_str(&format!(
            "corruptions = {}\n",
            e.corruptions.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
        ));
        s.push_str(&format!(
            "severities = {}\n",
            e.severities.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        ));
        s.push_str(&format!(
            "baseline_records = {}\n",
            path_str(&e.baseline_records)
        ));
        s.push_str("\n[run]\n");
        s.push_str(&format!(
            "seeds = {}\n",
            self.run.seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        ));
        s.push_str(&format!("out = {}\n", self.run.out.display()));
        s
    }

    /// Fingerprint of everything that affects TRAINING (data, model, train
    /// sections) plus (method, seed); eval and output settings are excluded
    /// so re-running with a different eval grid reuses cached checkpoints.
    pub fn train_fingerprint(&self, method: Method, seed: u64) -> u64 {
        let echo = self.canonical_echo();
        let train_part = echo
            .split("\n[eval]\n")
            .next()
            .unwrap_or(&echo)
            .to_string();
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for b in train_part.bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        for b in method.name().bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        hash ^= seed;
        crate::rng::derive_stream(hash, &[0x5eed])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_appendix_profile_defaults() {
        let config = ExperimentConfig::parse_str("").unwrap();
        assert_eq!(config.train.sigma, 0.2);
        assert_eq!(config.train.weight_decay, 5e-4);
        assert_eq!(config.train.momentum, 0.9);
        assert!(config.train.nesterov);
        assert_eq!(config.train.batch_size, 128);
        assert_eq!(config.train.sub_batches, 8);
        assert_eq!(config.train.lr, 0.1);
        assert_eq!(config.hidden, vec![256, 256]);
        assert_eq!(config.run.seeds, vec![1, 2, 3]);
        assert_eq!(config.eval.corruptions.len(), 7);
        assert_eq!(config.eval.severities, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn negative_sigma_is_a_config_error() {
        let err = ExperimentConfig::parse_str("[train]\nsigma = -1\n").unwrap_err();
        match err {
            Error::Config { line, msg } => {
                assert_eq!(line, Some(2));
                assert!(msg.contains("sigma"), "{msg}");
            }
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let err = ExperimentConfig::parse_str("[train]\nepochs = 3\nunknown_key = 3\n").unwrap_err();
        match err {
            Error::Config { line, msg } => {
                assert_eq!(line, Some(3));
                assert!(msg.contains("unknown_key"), "{msg}");
            }
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn unknown_section_and_type_mismatch_report_lines() {
        let err = ExperimentConfig::parse_str("[nope]\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(1), .. }));
        let err = ExperimentConfig::parse_str("[train]\nepochs = many\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = ExperimentConfig::parse_str("[train]\nepochs = 3\nepochs = 4\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(3), .. }));
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let err = ExperimentConfig::parse_str("[run]\nseeds = 1,1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }));
    }

    #[test]
    fn mnist_requires_paths() {
        let err = ExperimentConfig::parse_str("[data]\nkind = mnist\n").unwrap_err();
        match err {
            Error::Config { line: None, msg } => assert!(msg.contains("train_images"), "{msg}"),
            other => panic!("expected missing-key config error, got {other}"),
        }
    }

    #[test]
    fn run_config_maps_methods_to_perturbations() {
        let config = ExperimentConfig::parse_str("[train]\nsigma = 0.3\nrho_sam = 0.1\n").unwrap();
        let damp = config.run_config(Method::Damp, 1).unwrap();
        assert_eq!(
            damp.perturbation,
            PerturbationSpec::MultiplicativeGaussian { sigma: 0.3 }
        );
        let sam = config.run_config(Method::Sam, 1).unwrap();
        assert_eq!(sam.perturbation, PerturbationSpec::Sam { rho: 0.1 });
        damp.validate().unwrap();
        sam.validate().unwrap();
    }

    #[test]
    fn piecewise_defaults_scale_with_epochs() {
        let config = ExperimentConfig::parse_str("[train]\nepochs = 300\n").unwrap();
        let rc = config.run_config(Method::Sgd, 1).unwrap();
        assert_eq!(
            rc.schedule,
            ScheduleSpec::PiecewiseLinear {
                initial: 0.1,
                final_lr: 0.001,
                anneal_start: 150.0,
                anneal_end: 270.0,
            }
        );
    }

    #[test]
    fn canonical_echo_round_trips_and_is_stable() {
        let config = ExperimentConfig::parse_str("[train]\nepochs = 7\nsigma = 0.15\n").unwrap();
        let echo = config.canonical_echo();
        let reparsed = ExperimentConfig::parse_str(&echo).unwrap();
        assert_eq!(echo, reparsed.canonical_echo());
    }

    #[test]
    fn fingerprint_ignores_eval_but_not_train() {
        let a = ExperimentConfig::parse_str("[train]\nepochs = 7\n").unwrap();
        let b = ExperimentConfig::parse_str("[train]\nepochs = 7\n[eval]\nseverities = 1-3\n")
            .unwrap();
        let c = ExperimentConfig::parse_str("[train]\nepochs = 8\n").unwrap();
        assert_eq!(
            a.train_fingerprint(Method::Sgd, 1),
            b.train_fingerprint(Method::Sgd, 1)
        );
        assert_ne!(
            a.train_fingerprint(Method::Sgd, 1),
            c.train_fingerprint(Method::Sgd, 1)
        );
        assert_ne!(
            a.train_fingerprint(Method::Sgd, 1),
            a.train_fingerprint(Method::Damp, 1)
        );
        assert_ne!(
            a.train_fingerprint(Method::Sgd, 1),
            a.train_fingerprint(Method::Sgd, 2)
        );
    }

    #[test]
    fn severity_range_syntax() {
        let config = ExperimentConfig::parse_str("[eval]\nseverities = 2-4\n").unwrap();
        assert_eq!(config.eval.severities, vec![2, 3, 4]);
        assert!(ExperimentConfig::parse_str("[eval]\nseverities = 0-9\n").is_err());
        assert!(ExperimentConfig::parse_str("[eval]\nseverities = 5-2\n").is_err());
    }
}
