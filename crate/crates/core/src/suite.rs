//! Batch execution and on-disk artifacts.
//!
//! Each run writes `trace.jsonl`, `metrics.json` and `metrics.csv` into its
//! own directory, so parallel runs never share a file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::aodv::Protocol;
use crate::metrics::{self, MetricsReport, METRICS_SCHEMA_VERSION};
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{self, RunOutput, SimError};
use crate::trace;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SuiteError + '_ {
    move |source| SuiteError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs one scenario and computes its report.
pub fn execute(sc: &Scenario) -> Result<(RunOutput, MetricsReport), SuiteError> {
    let out = sim::run(sc)?;
    let report = metrics::compute(&out.trace)?.with_wall_clock(out.handler_wall, out.handler_calls);
    Ok((out, report))
}

/// Writes the three per-run artifacts into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput, report: &MetricsReport) -> Result<(), SuiteError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("trace.jsonl");
    let f = File::create(&p).map_err(io_err(&p))?;
    trace::write_jsonl(&out.trace, BufWriter::new(f)).map_err(io_err(&p))?;
    let p = dir.join("metrics.json");
    fs::write(&p, report.to_json()).map_err(io_err(&p))?;
    let p = dir.join("metrics.csv");
    let f = File::create(&p).map_err(io_err(&p))?;
    report.write_csv(BufWriter::new(f)).map_err(io_err(&p))?;
    Ok(())
}

pub fn run_dir(out: &Path, sc: &Scenario) -> PathBuf {
    out.join(&sc.name)
        .join(sc.protocol.as_str())
        .join(format!("seed{}", sc.seed))
}

#[derive(Debug, Default)]
pub struct SuiteSummary {
    pub runs: usize,
    pub failures: Vec<(String, String)>,
}

/// Every `.scn` file in `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, SuiteError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs the cartesian product scenarios × protocols × seeds. A failed run is
/// recorded and the rest continue. An empty seed list means seed 1.
pub fn run_suite(
    scenarios: &[Scenario],
    protocols: &[Protocol],
    seeds: &[u64],
    out: &Path,
) -> SuiteSummary {
    let seeds = if seeds.is_empty() {
        vec![1]
    } else {
        seeds.to_vec()
    };
    let jobs: Vec<Scenario> = scenarios
        .iter()
        .flat_map(|sc| {
            let seeds = &seeds;
            protocols.iter().flat_map(move |p| {
                seeds
                    .iter()
                    .map(move |s| sc.with_protocol(*p).with_seed(*s))
            })
        })
        .collect();
    let results: Vec<(Scenario, Result<MetricsReport, SuiteError>)> = jobs
        .into_par_iter()
        .map(|sc| {
            let res = execute(&sc).and_then(|(o, r)| {
                write_run(&run_dir(out, &sc), &o, &r)?;
                Ok(r)
            });
            (sc, res)
        })
        .collect();

    let mut summary = SuiteSummary::default();
    let mut by_name: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for (sc, res) in results {
        summary.runs += 1;
        match res {
            Ok(r) => by_name.entry(sc.name.clone()).or_default().push(r),
            Err(e) => {
                log::error!("{} {} seed {}: {e}", sc.name, sc.protocol, sc.seed);
                summary.failures.push((
                    format!("{}/{}/seed{}", sc.name, sc.protocol, sc.seed),
                    e.to_string(),
                ));
            }
        }
    }
    for (name, reports) in by_name {
        let p = out.join(&name).join("comparison.csv");
        if let Err(e) = write_comparison(&p, protocols, &reports) {
            summary.failures.push((name, e.to_string()));
        }
    }
    summary
}

/// Aligns protocols side by side: one row per seed, window and metric.
pub fn write_comparison(
    path: &Path,
    protocols: &[Protocol],
    reports: &[MetricsReport],
) -> Result<(), SuiteError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut cells: BTreeMap<(u64, usize, &'static str), BTreeMap<String, f64>> = BTreeMap::new();
    let mut bounds: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let mut scenario = String::new();
    for r in reports {
        scenario = r.scenario.clone();
        for (i, w) in r.windows.iter().enumerate() {
            bounds.insert(i, (w.start, w.end));
            for (metric, v) in w.values() {
                cells
                    .entry((r.seed, i, metric))
                    .or_default()
                    .insert(r.protocol.clone(), v);
            }
        }
    }
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let header: Vec<&str> = protocols.iter().map(|p| p.as_str()).collect();
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(
            w,
            "schema_version,scenario,seed,window_start,window_end,metric,{}",
            header.join(",")
        )?;
        for ((seed, i, metric), vals) in &cells {
            let (s, e) = bounds[i];
            let cols: Vec<String> = header
                .iter()
                .map(|p| vals.get(*p).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            writeln!(
                w,
                "{METRICS_SCHEMA_VERSION},{scenario},{seed},{s},{e},{metric},{}",
                cols.join(",")
            )?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}
