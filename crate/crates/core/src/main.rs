//! Experiment runner CLI.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wptrain::bench;
use wptrain::config::ExperimentConfig;
use wptrain::metrics;
use wptrain::verify;

#[derive(Parser)]
#[command(name = "wptrain", version, about = "Weight-perturbation training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker-thread cap for sub-batch gradients (results do not depend on
    /// it); falls back to PERTURB_TRAIN_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured (method, seed) pair into the checkpoint cache.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate cached checkpoints over the corruption grid.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Evaluate only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: train/load, evaluate, write records.csv + aggregate.csv.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite existing result CSVs.
        #[arg(long)]
        force: bool,
    },
    /// Run the numerical verification suite; exit 0 iff all checks pass.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for verify_report.jsonl (the report also prints to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate an existing records.csv into a corruption-error table.
    Report {
        /// Directory holding records.csv (aggregate.csv is written next to it).
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads(threads: Option<usize>) {
    let n = threads.or_else(|| {
        std::env::var("PERTURB_TRAIN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if n > 0 {
            // Ignore failure: the global pool can only be set once.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn load_config(
    path: &PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> wptrain::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::parse_file(path)?;
    if let Some(out) = out {
        config.run.out = out;
    }
    if let Some(seed) = seed {
        config.run.seeds = vec![seed];
    }
    Ok(config)
}

fn run(cli: Cli) -> wptrain::Result<bool> {
    init_threads(cli.threads);
    match cli.command {
        Command::Train { config, seed, out } => {
            let config = load_config(&config, out, seed)?;
            let out_dir = config.run.out.clone();
            std::fs::create_dir_all(&out_dir)?;
            let data = bench::resolve_data(&config)?;
            for &method in &config.train.methods {
                for &seed in &config.run.seeds {
                    let (_, trained) =
                        bench::train_or_load(&config, &data, method, seed, &out_dir)?;
                    let path = bench::checkpoint_path(&out_dir, &config, method, seed);
                    println!(
                        "{} {} seed {seed} -> {}",
                        if trained { "trained" } else { "cached " },
                        method.name(),
                        path.display()
                    );
                }
            }
            Ok(true)
        }
        Command::Eval { config, seed, out } => {
            let config = load_config(&config, out, seed)?;
            let out_dir = config.run.out.clone();
            let data = bench::resolve_data(&config)?;
            let mut nets = Vec::new();
            for &method in &config.train.methods {
                for &seed in &config.run.seeds {
                    let path = bench::checkpoint_path(&out_dir, &config, method, seed);
                    if !path.exists() {
                        return Err(wptrain::Error::InvalidInput(format!(
                            "no checkpoint at {}; run `wptrain train` first",
                            path.display()
                        )));
                    }
                    nets.push((method, seed, wptrain::checkpoint::load(&path)?));
                }
            }
            let records = bench::evaluate_grid(&config, &data, &nets)?;
            let path = out_dir.join("records.csv");
            metrics::write_records_csv(&records, &path)?;
            println!("wrote {} records to {}", records.len(), path.display());
            Ok(true)
        }
        Command::Benchmark { config, out, force } => {
            let config = load_config(&config, out, None)?;
            let out_dir = config.run.out.clone();
            let summary = bench::run_benchmark(&config, &out_dir, force)?;
            println!(
                "benchmark done: {} trained, {} cached",
                summary.trained, summary.cached
            );
            println!("records:   {}", summary.records_path.display());
            println!("aggregate: {}", summary.aggregate_path.display());
            for row in &summary.rows {
                println!(
                    "  {:<16} {:<16} CE {:.6} (std {:.6})",
                    row.method, row.corruption, row.mean_ce, row.std_ce
                );
            }
            Ok(true)
        }
        Command::Verify { seed, out } => {
            let reports = verify::run_verify(seed)?;
            for r in &reports {
                println!(
                    "{}",
                    serde_json::to_string(r).map_err(|e| wptrain::Error::InvalidInput(
                        format!("report serialization failed: {e}")
                    ))?
                );
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                verify::write_reports_jsonl(&reports, &dir.join("verify_report.jsonl"))?;
            }
            let failed: Vec<&str> = reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| r.check.as_str())
                .collect();
            if failed.is_empty() {
                eprintln!("all {} checks passed", reports.len());
                Ok(true)
            } else {
                eprintln!("FAILED checks: {}", failed.join(", "));
                Ok(false)
            }
        }
        Command::Report { out } => {
            let records = metrics::read_records_csv(&out.join("records.csv"))?;
            let rows = metrics::aggregate(&records, "sgd")?;
            let path = out.join("aggregate.csv");
            metrics::write_aggregate_csv(&rows, &path)?;
            println!("method,corruption,mean_CE,std_CE");
            for row in &rows {
                println!(
                    "{},{},{:.6},{:.6}",
                    row.method, row.corruption, row.mean_ce, row.std_ce
                );
            }
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
