use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mcsa_core::experiments::{aggregate_quantiles, run_with_threads, write_records, ExperimentConfig};
use mcsa_core::McsaError;

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mcsa", version, about = "Inclusive-KL variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path; `-` or absent with no `output` key writes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores). Output does not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Record every R-th iteration.
        #[arg(long = "record-stride")]
        record_stride: Option<usize>,
    },
    /// Per-group quantiles of one CSV column.
    Aggregate {
        csv: PathBuf,
        /// Comma-separated grouping columns.
        #[arg(long, value_delimiter = ',', required = true)]
        group: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9")]
        quantiles: Vec<f64>,
        /// Column to summarize.
        #[arg(long, default_value = "kl")]
        value: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(Failure::Config)?;
    ExperimentConfig::parse(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(Failure::Config)
}

enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) if p != Path::new("-") => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        _ => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            threads,
            record_stride,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = record_stride {
                if r == 0 {
                    return Err(Failure::Config(anyhow::anyhow!("--record-stride must be at least 1")));
                }
                cfg.record_stride = Some(r);
            }
            let summary = run_with_threads(&cfg, threads).map_err(|e| match e {
                McsaError::Config { .. } => Failure::Config(e.into()),
                other => Failure::Other(anyhow::Error::new(other).context("experiment failed")),
            })?;
            let mut buf = Vec::new();
            write_records(&mut buf, &summary.records).context("cannot encode CSV")?;
            write_output(out.as_deref().or(cfg.output.as_deref()), &buf)?;
            if summary.all_diverged() {
                eprintln!("all {} runs diverged", summary.runs);
                return Ok(EXIT_ALL_DIVERGED);
            }
            Ok(0)
        }
        Command::Aggregate {
            csv,
            group,
            quantiles,
            value,
            out,
        } => {
            let text = fs::read_to_string(&csv).with_context(|| format!("cannot read {}", csv.display()))?;
            let keys: Vec<&str> = group.iter().map(String::as_str).collect();
            let table = aggregate_quantiles(&text, &keys, &value, &quantiles)
                .with_context(|| format!("cannot aggregate {}", csv.display()))?;
            write_output(out.as_deref(), table.as_bytes())?;
            Ok(0)
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: ok ({})", config.display(), cfg.experiment);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
