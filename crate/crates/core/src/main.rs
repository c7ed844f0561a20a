use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aodvsec::aodv::Protocol;
use aodvsec::metrics;
use aodvsec::scenario::Scenario;
use aodvsec::suite::{self, SuiteError};
use aodvsec::trace;

#[derive(Parser)]
#[command(
    name = "aodvsec",
    version,
    about = "MANET routing simulator: AODV vs the RREQ-ACK cache extension"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace, metrics.json and metrics.csv.
    Run {
        scenario: PathBuf,
        /// Override the scenario's protocol (AODV or AODVSEC).
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every .scn file in a directory under each protocol and seed.
    Suite {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "AODV,AODVSEC")]
        protocols: Vec<Protocol>,
        /// Comma-separated seeds; empty means seed 1.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a scenario file and report every problem found.
    Validate { scenario: PathBuf },
    /// Recompute metrics from a trace file alone.
    Replay {
        trace: PathBuf,
        /// Also write the CSV rows to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<bool, SuiteError> {
    match cmd {
        Command::Run {
            scenario,
            protocol,
            seed,
            out,
        } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(p) = protocol {
                sc.protocol = p;
            }
            if let Some(s) = seed {
                sc.seed = s;
            }
            let (run, report) = suite::execute(&sc)?;
            let dir = suite::run_dir(&out, &sc);
            suite::write_run(&dir, &run, &report)?;
            log::info!(
                "{} {} seed {}: pdf {:.4}, nrl {:.4}, trace {}",
                sc.name,
                sc.protocol,
                sc.seed,
                report.total.pdf.unwrap_or(f64::NAN),
                report.total.nrl.unwrap_or(f64::NAN),
                trace::digest(&run.trace)
            );
            println!("{}", dir.display());
            Ok(report.conserved != Some(false))
        }
        Command::Suite {
            dir,
            protocols,
            seeds,
            out,
        } => {
            let mut scenarios = Vec::new();
            let mut ok = true;
            for f in suite::scenario_files(&dir)? {
                match Scenario::load(&f) {
                    Ok(sc) => scenarios.push(sc),
                    Err(e) => {
                        log::error!("{}: {e}", f.display());
                        ok = false;
                    }
                }
            }
            let summary = suite::run_suite(&scenarios, &protocols, &seeds, &out);
            log::info!("{} runs, {} failed", summary.runs, summary.failures.len());
            Ok(ok && summary.failures.is_empty())
        }
        Command::Validate { scenario } => {
            let sc = Scenario::load(&scenario)?;
            println!(
                "{}: ok ({} nodes, {} flows, {} attacks)",
                sc.name,
                sc.nodes.len(),
                sc.flows.len(),
                sc.attacks.len()
            );
            Ok(true)
        }
        Command::Replay { trace: path, csv } => {
            let io = |source| SuiteError::Io {
                path: path.display().to_string(),
                source,
            };
            let f = File::open(&path).map_err(io)?;
            let records = trace::read_jsonl(BufReader::new(f)).map_err(io)?;
            let report = metrics::compute(&records)?;
            if let Some(p) = csv {
                let f = File::create(&p).map_err(|source| SuiteError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                report.write_csv(f).map_err(|source| SuiteError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
            }
            println!("{}", report.to_json());
            Ok(report.conserved != Some(false))
        }
    }
}
