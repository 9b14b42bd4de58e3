//! Command-line driver: validate topology documents, run experiments,
//! evaluate the brute-force oracle, and sweep rate grids.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 validation
//! errors, 2 input/parse errors, 3 simulation limit exceeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qpu_core::experiment::{run_experiment, sweep, sweep_csv, ExperimentError, RunOptions};
use qpu_core::metrics::CSV_HEADER;
use qpu_core::oracle::{oracle_eval, BaseSnapshot};
use qpu_core::query::Query;
use qpu_core::topology::{parse_topology, validate, TopologyError, TopologySpec};
use qpu_core::workload::{rows_from_data, DataRow, WorkloadSpec};

#[derive(Parser)]
#[command(
    name = "qpusim",
    about = "Assemble geo-distributed query graphs from processing units and measure \
             placement trade-offs on a deterministic network simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a topology document.
    Validate {
        #[arg(long)]
        topology: PathBuf,
        /// Emit the validation report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run one workload against one topology and write metrics files.
    Run {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Override the workload seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; all artifacts land here.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the full event trace (events.trace).
        #[arg(long)]
        trace: bool,
        /// Virtual-time horizon in milliseconds.
        #[arg(long, default_value_t = 600_000.0)]
        limit_ms: f64,
    },
    /// Evaluate the brute-force oracle over a data file.
    Oracle {
        /// JSON list of rows: {"ad", "tags", "price_cents"}.
        #[arg(long)]
        data: PathBuf,
        /// JSON query document.
        #[arg(long)]
        query: PathBuf,
    },
    /// Run a rate-ratio grid over one or more topologies.
    Sweep {
        /// Topology file; repeat the flag for several.
        #[arg(long = "topology", required = true)]
        topologies: Vec<PathBuf>,
        #[arg(long)]
        workload: PathBuf,
        /// query:write rate pairs in events per second.
        #[arg(long, default_value = "100:1,10:1,1:1,1:10")]
        ratios: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 600_000.0)]
        limit_ms: f64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<TopologyError> for Failure {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::Parse { .. } => Failure {
                code: 2,
                message: e.to_string(),
            },
            TopologyError::Invalid(report) => Failure {
                code: 1,
                message: report.to_string(),
            },
            TopologyError::Sim(e) => Failure {
                code: 1,
                message: e.to_string(),
            },
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Topology(t) => t.into(),
            ExperimentError::LimitExceeded { .. } => Failure {
                code: 3,
                message: e.to_string(),
            },
            ExperimentError::Sim(_) | ExperimentError::UnknownWorkloadSite(_) => Failure {
                code: 1,
                message: e.to_string(),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message.trim_end());
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { topology, json } => cmd_validate(&topology, json),
        Command::Run {
            topology,
            workload,
            seed,
            out,
            trace,
            limit_ms,
        } => cmd_run(&topology, &workload, seed, &out, trace, limit_ms),
        Command::Oracle { data, query } => cmd_oracle(&data, &query),
        Command::Sweep {
            topologies,
            workload,
            ratios,
            seed,
            out,
            limit_ms,
        } => cmd_sweep(&topologies, &workload, &ratios, seed, &out, limit_ms),
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<TopologySpec, Failure> {
    Ok(parse_topology(&read_file(path)?)?)
}

fn topology_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_validate(topology: &Path, json: bool) -> Result<(), Failure> {
    let spec = load_spec(topology)?;
    let report = validate(&spec);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        print!("{report}");
    }
    if report.is_deployable() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("{} validation error(s)", report.errors.len()),
        })
    }
}

fn load_workload(path: &Path, seed: Option<u64>) -> Result<WorkloadSpec, Failure> {
    let mut workload: WorkloadSpec = serde_json::from_str(&read_file(path)?)
        .map_err(|e| Failure::input(format!("bad workload file {}: {e}", path.display())))?;
    if let Some(seed) = seed {
        workload.seed = seed;
    }
    Ok(workload)
}

fn ensure_out(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", out.display())))
}

fn write_out(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn cmd_run(
    topology: &Path,
    workload: &Path,
    seed: Option<u64>,
    out: &Path,
    trace: bool,
    limit_ms: f64,
) -> Result<(), Failure> {
    let spec = load_spec(topology)?;
    let workload = load_workload(workload, seed)?;
    let options = RunOptions { limit_ms, trace };
    let artifacts = run_experiment(&topology_name(topology), &spec, &workload, &options)?;

    ensure_out(out)?;
    write_out(&out.join("metrics.json"), &artifacts.report.to_json())?;
    let csv = format!("{CSV_HEADER}\n{}\n", artifacts.report.csv_row());
    write_out(&out.join("metrics.csv"), &csv)?;
    if let Some(trace) = &artifacts.trace {
        write_out(&out.join("events.trace"), trace)?;
    }
    print!("{}", artifacts.report.summary());
    println!("wrote {}", out.join("metrics.json").display());
    Ok(())
}

fn cmd_oracle(data: &Path, query: &Path) -> Result<(), Failure> {
    let rows: Vec<DataRow> = serde_json::from_str(&read_file(data)?)
        .map_err(|e| Failure::input(format!("bad data file {}: {e}", data.display())))?;
    let query: Query = serde_json::from_str(&read_file(query)?)
        .map_err(|e| Failure::input(format!("bad query file {}: {e}", query.display())))?;
    query
        .validate()
        .map_err(|e| Failure::input(format!("invalid query: {e}")))?;
    for attr in query.referenced_attributes() {
        if attr != "tags" && attr != "price" {
            return Err(Failure::input(format!(
                "unknown attribute in query: {attr}"
            )));
        }
    }
    let snapshot = BaseSnapshot::from_rows(&rows_from_data(&rows));
    for (key, price) in oracle_eval(&snapshot, &query) {
        println!("{key} {price}");
    }
    Ok(())
}

fn parse_ratios(text: &str) -> Result<Vec<(f64, f64)>, Failure> {
    text.split(',')
        .map(|pair| {
            let (q, w) = pair
                .split_once(':')
                .ok_or_else(|| Failure::input(format!("bad ratio {pair}, expected q:w")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Failure::input(format!("bad rate {s}: {e}")))
            };
            Ok((parse(q)?, parse(w)?))
        })
        .collect()
}

fn cmd_sweep(
    topologies: &[PathBuf],
    workload: &Path,
    ratios: &str,
    seed: Option<u64>,
    out: &Path,
    limit_ms: f64,
) -> Result<(), Failure> {
    let mut named = Vec::new();
    for path in topologies {
        named.push((topology_name(path), load_spec(path)?));
    }
    let template = load_workload(workload, seed)?;
    let rate_pairs = parse_ratios(ratios)?;
    let options = RunOptions {
        limit_ms,
        trace: false,
    };
    let cells = sweep(&named, &template, &rate_pairs, &options)?;
    let csv = sweep_csv(&cells);
    ensure_out(out)?;
    write_out(&out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(())
}
