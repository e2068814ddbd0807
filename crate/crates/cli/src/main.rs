use std::error::Error;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use taskmap_core::experiment::{
    compare_report, run_experiment, scaling_sweep, write_sweep, ExperimentConfig, ExperimentError,
    SummaryRow, SweepTable,
};

/// Maps task graphs onto simulated clusters and compares the mappers.
#[derive(Parser, Debug)]
#[command(name = "taskmap", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct Overrides {
    /// Base seed; repetition r uses seed + r.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `compare`, where ranking.csv is written).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Also write per-repetition dispatch and mapping event logs.
    #[arg(long, global = true)]
    verbose_events: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every configured mapper over every repetition and write a bundle.
    Run { config: PathBuf },
    /// Rank the mappers of two or more bundles built from the same instance.
    Compare {
        #[arg(required = true, num_args = 2..)]
        bundles: Vec<PathBuf>,
        /// Print CSV instead of the aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Measure simulated mapping runtime at several cluster sizes.
    Sweep {
        config: PathBuf,
        /// Strictly ascending node counts.
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<usize>,
    },
}

const RANKING_FILE: &str = "ranking.csv";

fn load(path: &Path, o: &Overrides) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(dir) = &o.out_dir {
        config.out_dir = std::path::absolute(dir).map_err(|source| ExperimentError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    config.verbose_events |= o.verbose_events;
    Ok(config)
}

fn summary_text(rows: &[SummaryRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.mapper.len())
        .max()
        .unwrap_or(0)
        .max("mapper".len());
    let mut out = format!(
        "{:<width$}  {:>7}  {:>10}  {:>10}  {:>10}  {:>10}\n",
        "mapper", "samples", "mean_s", "std_s", "map_mean_s", "map_std_s"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>7}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}\n",
            r.mapper,
            r.samples,
            r.mean_makespan_seconds,
            r.std_makespan_seconds,
            r.mean_mapping_seconds,
            r.std_mapping_seconds
        ));
    }
    out
}

fn sweep_text(table: &SweepTable) -> String {
    let width = table
        .rows
        .iter()
        .map(|r| r.mapper.len())
        .max()
        .unwrap_or(0)
        .max("mapper".len());
    let mut out = format!(
        "{:<width$}  {:>6}  {:>4}  {:>10}  {:>10}\n",
        "mapper", "nodes", "reps", "mean_s", "std_s"
    );
    for r in &table.rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>4}  {:>10.4}  {:>10.4}\n",
            r.mapper, r.nodes, r.repetitions, r.mean_seconds, r.std_seconds
        ));
    }
    out
}

/// Runs the command and returns what it prints on success.
fn execute(cli: Cli) -> Result<String, ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    let out = match cli.command {
        Command::Run { config } => {
            let config = load(&config, &cli.overrides)?;
            let result = run_experiment(&config, true)?;
            format!(
                "{}bundle: {}\n",
                summary_text(&result.summary),
                config.output_dir().display()
            )
        }
        Command::Compare { bundles, csv } => {
            let table = compare_report(&bundles)?;
            let mut rows = Vec::new();
            table.write_csv(&mut rows).expect("writing CSV to memory");
            if let Some(dir) = &cli.overrides.out_dir {
                fs::create_dir_all(dir).map_err(io(dir))?;
                let path = dir.join(RANKING_FILE);
                fs::write(&path, &rows).map_err(io(&path))?;
            }
            if csv {
                String::from_utf8(rows).expect("CSV is UTF-8")
            } else {
                table.to_text()
            }
        }
        Command::Sweep { config, nodes } => {
            let config = load(&config, &cli.overrides)?;
            let table = scaling_sweep(&config, &nodes)?;
            let path = write_sweep(&config, &table)?;
            format!("{}table: {}\n", sweep_text(&table), path.display())
        }
    };
    Ok(out)
}

fn report(err: &ExperimentError) {
    eprintln!("error: {err}");
    let mut source = err.source();
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
    if let ExperimentError::Invariant { violations, .. } = err {
        for v in violations {
            eprintln!("  violation: {v}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(text) => {
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(err) => {
            report(&err);
            ExitCode::from(err.exit_code())
        }
    }
}
