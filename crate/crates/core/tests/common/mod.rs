#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use aodvsec::aodv::Protocol;
use aodvsec::metrics::{self, MetricsReport};
use aodvsec::scenario::{FlowSpec, Placement, Scenario};
use aodvsec::sim::mobility::Position;
use aodvsec::sim::{self, RunOutput};
use aodvsec::trace::{TraceEvent, TraceRecord};
use aodvsec::wire::NodeId;

pub fn scenario(name: &str) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.scn"));
    Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn run(sc: &Scenario) -> (RunOutput, MetricsReport) {
    let out = sim::run(sc).unwrap_or_else(|e| panic!("{} {}: {e}", sc.name, sc.protocol));
    let report = metrics::compute(&out.trace).expect("metrics");
    (out, report)
}

/// A static scenario with explicit positions and one flow.
pub fn static_scenario(positions: &[(u32, f64, f64)], flow: FlowSpec, sim_time: f64) -> Scenario {
    let mut sc = Scenario {
        name: "test".into(),
        sim_time,
        placement: Placement::Explicit,
        flows: vec![flow],
        ..Scenario::default()
    };
    for &(id, x, y) in positions {
        sc.nodes.insert(NodeId(id), Some(Position { x, y }));
        sc.area = (sc.area.0.max(x.ceil()), sc.area.1.max(y.ceil()));
    }
    sc
}

pub fn flow(src: u32, dst: u32, rate: f64, start: f64, stop: f64) -> FlowSpec {
    FlowSpec {
        src: NodeId(src),
        dst: NodeId(dst),
        rate,
        size: 512,
        start,
        stop,
    }
}

/// Nodes 1..=n spaced 200 m apart on a line, range 250 m.
pub fn chain(n: u32) -> Vec<(u32, f64, f64)> {
    (1..=n)
        .map(|i| (i, 50.0 + 200.0 * (i - 1) as f64, 100.0))
        .collect()
}

/// Breadth-first hop distances from `src` in the unit-disk graph.
pub fn bfs(positions: &[(u32, f64, f64)], range: f64, src: u32) -> BTreeMap<u32, u32> {
    bfs_through(positions, range, src, &[])
}

/// Like [`bfs`], but nodes in `sinks` are reached and never relay.
pub fn bfs_through(
    positions: &[(u32, f64, f64)],
    range: f64,
    src: u32,
    sinks: &[u32],
) -> BTreeMap<u32, u32> {
    let adj = |a: &(u32, f64, f64), b: &(u32, f64, f64)| {
        a.0 != b.0 && (a.1 - b.1).powi(2) + (a.2 - b.2).powi(2) <= range * range
    };
    let mut dist = BTreeMap::from([(src, 0)]);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        if u != src && sinks.contains(&u) {
            continue;
        }
        let pu = positions.iter().find(|p| p.0 == u).unwrap();
        for p in positions {
            if adj(pu, p) && !dist.contains_key(&p.0) {
                dist.insert(p.0, dist[&u] + 1);
                q.push_back(p.0);
            }
        }
    }
    dist
}

pub fn events(trace: &[TraceRecord]) -> impl Iterator<Item = (f64, NodeId, &TraceEvent)> {
    trace.iter().map(|r| (r.t, r.node, &r.event))
}

pub fn forged_frames(trace: &[TraceRecord]) -> BTreeSet<u64> {
    events(trace)
        .filter_map(|(_, _, e)| match e {
            TraceEvent::Send {
                frame,
                forged: true,
                ..
            } => Some(*frame),
            _ => None,
        })
        .collect()
}

pub fn snoop_times(trace: &[TraceRecord]) -> Vec<f64> {
    events(trace)
        .filter(|(_, _, e)| matches!(e, TraceEvent::Snoop { .. }))
        .map(|(t, _, _)| t)
        .collect()
}

/// Relative closeness. `None` only matches `None`; two zeros match.
pub fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => (a - b).abs() <= tol * a.abs().max(b.abs()),
        _ => false,
    }
}

pub fn with(sc: &Scenario, protocol: Protocol, seed: u64) -> Scenario {
    sc.with_protocol(protocol).with_seed(seed)
}
