//! Evaluation metrics, recomputed from a trace alone.
//!
//! Windows are `[k·w, (k+1)·w)`; the last one is cut at `sim_time`. A metric
//! with no defined value in a window (no packets generated, nothing
//! delivered, too few arrivals) is absent rather than zero.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{TraceEvent, TraceRecord};
use crate::wire::{MessageKind, NodeId};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("trace has no run_start record")]
    MissingRunStart,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub start: f64,
    pub end: f64,
    /// Fraction of the packets generated in this window that were delivered.
    pub pdf: Option<f64>,
    /// Control transmissions per delivered packet.
    pub nrl: Option<f64>,
    /// Delivered throughput, kb/s.
    pub at: f64,
    /// Mean end-to-end delay, s.
    pub aed: Option<f64>,
    /// Mean absolute difference of successive inter-arrival gaps, s.
    pub jitter: Option<f64>,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub control_tx: u64,
    pub rreq_ack_tx: u64,
    pub forged_tx: u64,
    pub snooped: u64,
    pub swallowed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindCost {
    pub messages: u64,
    pub ops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Processing {
    pub messages: u64,
    pub ops: u64,
    pub ops_per_message: Option<f64>,
    pub by_kind: BTreeMap<String, KindCost>,
    /// Wall-clock cost; only known for live runs, never from replay.
    pub wall_us_per_message: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackerCounters {
    pub forged: u64,
    pub snooped: u64,
    pub swallowed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    pub sim_time: f64,
    pub window: f64,
    pub windows: Vec<WindowMetrics>,
    pub total: WindowMetrics,
    pub processing: Processing,
    pub attackers: BTreeMap<u32, AttackerCounters>,
    pub conserved: Option<bool>,
}

impl MetricsReport {
    /// Attaches wall-clock handler cost measured outside the trace.
    pub fn with_wall_clock(mut self, wall: Duration, calls: u64) -> Self {
        self.processing.wall_us_per_message =
            (calls > 0).then(|| wall.as_secs_f64() * 1e6 / calls as f64);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    /// One row per window per defined metric.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for win in &self.windows {
            for (metric, value) in win.values() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    self.schema_version,
                    self.scenario,
                    self.protocol,
                    self.seed,
                    win.start,
                    win.end,
                    metric,
                    value
                )?;
            }
        }
        w.flush()
    }
}

pub const CSV_HEADER: &str =
    "schema_version,scenario,protocol,seed,window_start,window_end,metric,value";

impl WindowMetrics {
    /// Defined metric values by name, in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut v = Vec::new();
        let opt = [
            ("pdf", self.pdf),
            ("nrl", self.nrl),
            ("at", Some(self.at)),
            ("aed", self.aed),
            ("jitter", self.jitter),
        ];
        for (k, x) in opt {
            if let Some(x) = x {
                v.push((k, x));
            }
        }
        for (k, x) in [
            ("generated", self.generated),
            ("delivered", self.delivered),
            ("dropped", self.dropped),
            ("control_tx", self.control_tx),
            ("rreq_ack_tx", self.rreq_ack_tx),
            ("forged_tx", self.forged_tx),
            ("snooped", self.snooped),
            ("swallowed", self.swallowed),
        ] {
            v.push((k, x as f64));
        }
        v
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.values()
            .into_iter()
            .find(|(k, _)| *k == metric)
            .map(|(_, v)| v)
    }
}

pub fn pdf(generated: u64, delivered: u64) -> Option<f64> {
    (generated > 0).then(|| delivered as f64 / generated as f64)
}

pub fn nrl(control_tx: u64, delivered: u64) -> Option<f64> {
    (delivered > 0).then(|| control_tx as f64 / delivered as f64)
}

pub fn throughput_kbps(bytes: u64, seconds: f64) -> f64 {
    if seconds <= 0.0 {
        0.0
    } else {
        bytes as f64 * 8.0 / seconds / 1000.0
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Absolute changes between successive inter-arrival gaps of sorted arrival
/// times.
pub fn gap_changes(arrivals: &[f64]) -> Vec<f64> {
    let gaps: Vec<f64> = arrivals.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.windows(2).map(|g| (g[1] - g[0]).abs()).collect()
}

pub fn jitter(arrivals: &[f64]) -> Option<f64> {
    mean(&gap_changes(arrivals))
}

struct Acc {
    w: WindowMetrics,
    gen_keys: Vec<(u32, u32)>,
    bytes: u64,
    delays: Vec<f64>,
    arrivals: BTreeMap<u32, Vec<f64>>,
}

impl Acc {
    fn new(start: f64, end: f64) -> Self {
        Acc {
            w: WindowMetrics {
                start,
                end,
                ..Default::default()
            },
            gen_keys: Vec::new(),
            bytes: 0,
            delays: Vec::new(),
            arrivals: BTreeMap::new(),
        }
    }

    fn finish(mut self, delivered_keys: &BTreeSet<(u32, u32)>) -> WindowMetrics {
        let ok = self
            .gen_keys
            .iter()
            .filter(|k| delivered_keys.contains(k))
            .count() as u64;
        self.w.pdf = pdf(self.w.generated, ok);
        self.w.nrl = nrl(self.w.control_tx, self.w.delivered);
        self.w.at = throughput_kbps(self.bytes, self.w.end - self.w.start);
        self.w.aed = mean(&self.delays);
        let changes: Vec<f64> = self
            .arrivals
            .values()
            .flat_map(|a| gap_changes(a))
            .collect();
        self.w.jitter = mean(&changes);
        self.w
    }
}

/// Computes the full report from a trace.
pub fn compute(trace: &[TraceRecord]) -> Result<MetricsReport, MetricsError> {
    let (scenario, protocol, seed, sim_time, window) = trace
        .iter()
        .find_map(|r| match &r.event {
            TraceEvent::RunStart {
                scenario,
                protocol,
                seed,
                sim_time,
                window,
                ..
            } => Some((
                scenario.clone(),
                protocol.clone(),
                *seed,
                *sim_time,
                *window,
            )),
            _ => None,
        })
        .ok_or(MetricsError::MissingRunStart)?;

    let n_windows = ((sim_time / window).ceil() as usize).max(1);
    let mut wins: Vec<Acc> = (0..n_windows)
        .map(|k| Acc::new(k as f64 * window, ((k + 1) as f64 * window).min(sim_time)))
        .collect();
    let mut total = Acc::new(0.0, sim_time);
    let idx = |t: f64| ((t / window).floor().max(0.0) as usize).min(n_windows - 1);

    let mut delivered_keys = BTreeSet::new();
    let mut processing = Processing::default();
    let mut attackers: BTreeMap<u32, AttackerCounters> = BTreeMap::new();
    let mut conserved = None;

    for r in trace {
        let k = idx(r.t);
        let mut apply = |f: &mut dyn FnMut(&mut Acc)| {
            f(&mut wins[k]);
            f(&mut total);
        };
        match &r.event {
            TraceEvent::Send { kind, forged, .. } => {
                if *forged {
                    attackers.entry(r.node.0).or_default().forged += 1;
                    apply(&mut |a| a.w.forged_tx += 1);
                } else if kind.is_control() {
                    let ack = *kind == MessageKind::RreqAck;
                    apply(&mut |a| {
                        a.w.control_tx += 1;
                        a.w.rreq_ack_tx += ack as u64;
                    });
                }
            }
            TraceEvent::DataGenerated { flow, seq, .. } => {
                let key = (*flow, *seq);
                apply(&mut |a| {
                    a.w.generated += 1;
                    a.gen_keys.push(key);
                });
            }
            TraceEvent::DataDelivered {
                flow,
                seq,
                sent_at,
                bytes,
                ..
            } => {
                delivered_keys.insert((*flow, *seq));
                let delay = r.t - sent_at;
                let (flow, bytes, t) = (*flow, *bytes as u64, r.t);
                apply(&mut |a| {
                    a.w.delivered += 1;
                    a.bytes += bytes;
                    a.delays.push(delay);
                    a.arrivals.entry(flow).or_default().push(t);
                });
            }
            TraceEvent::DataDropped { .. } => apply(&mut |a| a.w.dropped += 1),
            TraceEvent::Snoop { .. } => {
                attackers.entry(r.node.0).or_default().snooped += 1;
                apply(&mut |a| a.w.snooped += 1);
            }
            TraceEvent::Swallow { .. } => {
                attackers.entry(r.node.0).or_default().swallowed += 1;
                apply(&mut |a| a.w.swallowed += 1);
            }
            TraceEvent::Handler { kind, ops } => {
                processing.messages += 1;
                processing.ops += ops;
                let c = processing
                    .by_kind
                    .entry(kind.as_str().to_string())
                    .or_default();
                c.messages += 1;
                c.ops += ops;
            }
            TraceEvent::RunEnd { conserved: c, .. } => conserved = Some(*c),
            _ => {}
        }
    }
    processing.ops_per_message =
        (processing.messages > 0).then(|| processing.ops as f64 / processing.messages as f64);

    Ok(MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario,
        protocol,
        seed,
        sim_time,
        window,
        windows: wins
            .into_iter()
            .map(|a| a.finish(&delivered_keys))
            .collect(),
        total: total.finish(&delivered_keys),
        processing,
        attackers,
        conserved,
    })
}

/// Instants at which two nodes each held a valid route to `dest` through the
/// other, reconstructed from route writes and invalidations.
pub fn mutual_next_hops(trace: &[TraceRecord], dest: NodeId) -> Vec<(f64, NodeId, NodeId)> {
    let mut next: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut found = Vec::new();
    for r in trace {
        match &r.event {
            TraceEvent::RouteWrite {
                dest: d, next_hop, ..
            } if *d == dest => {
                next.insert(r.node, *next_hop);
                if next.get(next_hop) == Some(&r.node) {
                    found.push((r.t, r.node, *next_hop));
                }
            }
            TraceEvent::RouteInvalidated { dest: d, .. } if *d == dest => {
                next.remove(&r.node);
            }
            _ => {}
        }
    }
    found
}
