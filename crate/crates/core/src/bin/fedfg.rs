use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedfg::baselines::AggregatorKind;
use fedfg::harness::{self, emit_csv, RunConfig, RunOutput};

#[derive(Debug, Parser)]
#[command(name = "fedfg", version, about = "Federated learning simulator with flow-matching probe verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Aggregator {
    Fedfg,
    Fedavg,
    CoordMedian,
    TrimmedMean,
    GeometricMedian,
}

impl From<Aggregator> for AggregatorKind {
    fn from(a: Aggregator) -> Self {
        match a {
            Aggregator::Fedfg => AggregatorKind::Fedfg,
            Aggregator::Fedavg => AggregatorKind::Fedavg,
            Aggregator::CoordMedian => AggregatorKind::CoordMedian,
            Aggregator::TrimmedMean => AggregatorKind::TrimmedMean { trim_fraction: None },
            Aggregator::GeometricMedian => AggregatorKind::geometric_median(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; falls back to `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named desk-scale preset.
    Preset {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        aggregator: Option<Aggregator>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Print the resolved config as TOML instead of running it.
        #[arg(long)]
        dump_config: bool,
    },
    /// Run several presets and print a summary table.
    Sweep {
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',', required = true)]
        presets: Vec<String>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "fedfg")]
        aggregators: Vec<Aggregator>,
        /// Directory for per-run CSVs (`<preset>.<aggregator>.csv`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn execute(cfg: &RunConfig, out: &Path) -> fedfg::Result<RunOutput> {
    let output = harness::run(cfg)?;
    emit_csv(&output.records, cfg.clients, out)?;
    Ok(output)
}

fn summary(output: &RunOutput) -> String {
    let last = output.records.last();
    format!(
        "rounds={} final_acc={:.4} flagged_last={}",
        output.records.len(),
        last.map_or(f64::NAN, |r| r.accuracy),
        last.map_or(0, |r| r.flagged.iter().filter(|&&f| f).count()),
    )
}

fn main_inner(cli: Cli) -> fedfg::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let out = out.or_else(|| cfg.output.clone()).ok_or_else(|| fedfg::FedFgError::InvalidConfig {
                field: "output".into(),
                message: "no --out given and no `output` in the config".into(),
            })?;
            let output = execute(&cfg, &out)?;
            println!("{}", summary(&output));
        }
        Command::Preset {
            name,
            out,
            aggregator,
            seed,
            threads,
            dump_config,
        } => {
            let mut cfg = harness::preset(&name)?;
            if let Some(a) = aggregator {
                cfg.aggregator = a.into();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            if dump_config {
                print!("{}", cfg.to_toml_string());
                return Ok(());
            }
            let output = execute(&cfg, &out)?;
            println!("{name} {} {}", cfg.aggregator.name(), summary(&output));
        }
        Command::Sweep {
            presets,
            aggregators,
            out_dir,
            seed,
        } => {
            if let Some(dir) = &out_dir {
                std::fs::create_dir_all(dir).map_err(|e| fedfg::FedFgError::Io {
                    path: dir.clone(),
                    source: e,
                })?;
            }
            println!("{:<16} {:<18} {:>9}", "preset", "aggregator", "final_acc");
            for name in &presets {
                for &agg in &aggregators {
                    let mut cfg = harness::preset(name)?;
                    cfg.aggregator = agg.into();
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    let output = harness::run(&cfg)?;
                    if let Some(dir) = &out_dir {
                        let path = dir.join(format!("{name}.{}.csv", cfg.aggregator.name()));
                        emit_csv(&output.records, cfg.clients, path)?;
                    }
                    let acc = output.records.last().map_or(f64::NAN, |r| r.accuracy);
                    println!("{:<16} {:<18} {:>9.4}", name, cfg.aggregator.name(), acc);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
