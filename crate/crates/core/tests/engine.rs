mod common;

use aodvsec::aodv::Protocol;
use aodvsec::trace::{self, DropReason, TraceEvent};
use aodvsec::wire::{MessageKind, NodeId};

use common::*;

fn count(trace: &[aodvsec::trace::TraceRecord], pred: impl Fn(&TraceEvent) -> bool) -> usize {
    trace.iter().filter(|r| pred(&r.event)).count()
}

fn run_end(trace: &[aodvsec::trace::TraceRecord]) -> (u64, u64, u64, u64, bool) {
    match &trace.last().unwrap().event {
        TraceEvent::RunEnd {
            generated,
            delivered,
            dropped,
            in_flight,
            conserved,
        } => (*generated, *delivered, *dropped, *in_flight, *conserved),
        e => panic!("last record is {e:?}"),
    }
}

#[test]
fn chain_delivers_everything_in_four_hops() {
    for protocol in [Protocol::Aodv, Protocol::AodvSec] {
        let sc =
            static_scenario(&chain(5), flow(1, 5, 4.0, 1.0, 26.0), 30.0).with_protocol(protocol);
        let (out, report) = run(&sc);
        assert_eq!(report.total.generated, 100);
        assert_eq!(report.total.delivered, 100);
        assert_eq!(report.total.pdf, Some(1.0));
        let data_tx = count(&out.trace, |e| {
            matches!(
                e,
                TraceEvent::Send {
                    kind: MessageKind::Data,
                    ..
                }
            )
        });
        assert_eq!(data_tx, 400, "{protocol}");
        assert_eq!(run_end(&out.trace), (100, 100, 0, 0, true));
    }
}

#[test]
fn same_seed_same_trace() {
    let sc = scenario("normal").with_seed(7);
    let a = trace::digest(&run(&sc).0.trace);
    let b = trace::digest(&run(&sc).0.trace);
    assert_eq!(a, b);
    let c = trace::digest(&run(&sc.with_seed(8)).0.trace);
    assert_ne!(a, c);
}

#[test]
fn trace_survives_jsonl_round_trip() {
    let (out, report) = run(&scenario("rc").with_protocol(Protocol::AodvSec));
    let mut buf = Vec::new();
    trace::write_jsonl(&out.trace, &mut buf).unwrap();
    let back = trace::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(trace::digest(&back), trace::digest(&out.trace));
    let again = aodvsec::metrics::compute(&back).unwrap();
    assert_eq!(again.to_json(), report.to_json());
}

#[test]
fn total_loss_delivers_nothing() {
    let mut sc = static_scenario(&chain(3), flow(1, 3, 4.0, 1.0, 11.0), 20.0);
    sc.loss_rate = 1.0;
    let (out, report) = run(&sc);
    assert_eq!(report.total.delivered, 0);
    assert_eq!(
        count(&out.trace, |e| matches!(e, TraceEvent::Recv { .. })),
        0
    );
    let (generated, _, dropped, in_flight, conserved) = run_end(&out.trace);
    assert_eq!(generated, 40);
    assert_eq!(dropped + in_flight, 40);
    assert!(conserved);
}

#[test]
fn broadcast_loss_is_binomial() {
    // A hub with 30 neighbors; count how many hear its first RREQ.
    let mut nodes = vec![(1, 300.0, 300.0)];
    for i in 0..30u32 {
        let a = i as f64 * std::f64::consts::TAU / 30.0;
        nodes.push((i + 2, 300.0 + 200.0 * a.cos(), 300.0 + 200.0 * a.sin()));
    }
    let mut heard = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let mut sc = static_scenario(&nodes, flow(1, 2, 1.0, 1.0, 1.5), 2.0).with_seed(seed);
        sc.loss_rate = 0.5;
        let out = run(&sc).0;
        let first = out
            .trace
            .iter()
            .find_map(|r| match r.event {
                TraceEvent::Send {
                    frame,
                    kind: MessageKind::Rreq,
                    ..
                } if r.node == NodeId(1) => Some(frame),
                _ => None,
            })
            .unwrap();
        heard += count(
            &out.trace,
            |e| matches!(e, TraceEvent::Recv { frame, .. } if *frame == first),
        );
    }
    let n = 30.0 * seeds as f64;
    let (mean, sd) = (n * 0.5, (n * 0.25).sqrt());
    assert!((heard as f64 - mean).abs() <= 4.0 * sd, "{heard} of {n}");
}

#[test]
fn relay_failure_raises_rerr_and_drops() {
    let mut sc = static_scenario(&chain(5), flow(1, 5, 4.0, 1.0, 30.0), 40.0);
    sc.failures.push((NodeId(3), 10.0));
    let (out, report) = run(&sc);
    let after = |r: &&aodvsec::trace::TraceRecord| r.t >= 10.0;
    assert!(out.trace.iter().filter(after).any(|r| r.node == NodeId(2)
        && matches!(r.event, TraceEvent::LinkFailure { neighbor } if neighbor == NodeId(3))));
    assert!(out.trace.iter().filter(after).any(|r| r.node == NodeId(2)
        && matches!(
            r.event,
            TraceEvent::Send {
                kind: MessageKind::Rerr,
                ..
            }
        )));
    assert!(out.trace.iter().filter(after).any(|r| r.node == NodeId(1)
        && matches!(r.event, TraceEvent::RouteInvalidated { dest, .. } if dest == NodeId(5))));
    let late = out
        .trace
        .iter()
        .filter(|r| matches!(r.event, TraceEvent::DataDelivered { sent_at, .. } if sent_at > 10.1))
        .count();
    assert_eq!(late, 0);
    assert!(report.total.delivered >= 35);
    assert_eq!(report.conserved, Some(true));
}

#[test]
fn discovery_finds_the_other_branch_after_failure() {
    // 1 reaches 4 through either 2 or 3.
    let nodes = [
        (1, 50.0, 200.0),
        (2, 230.0, 100.0),
        (3, 230.0, 300.0),
        (4, 410.0, 200.0),
    ];
    let sc = static_scenario(&nodes, flow(1, 4, 4.0, 1.0, 60.0), 70.0);
    let (first, _) = run(&sc);
    let relay = first
        .trace
        .iter()
        .find_map(|r| match r.event {
            TraceEvent::RouteWrite { dest, next_hop, .. }
                if r.node == NodeId(1) && dest == NodeId(4) =>
            {
                Some(next_hop)
            }
            _ => None,
        })
        .unwrap();
    let mut sc = sc.clone();
    sc.failures.push((relay, 20.0));
    let (out, report) = run(&sc);
    let late = out
        .trace
        .iter()
        .filter(|r| matches!(r.event, TraceEvent::DataDelivered { sent_at, .. } if sent_at > 25.0))
        .count();
    assert!(late > 100, "{late}");
    assert_eq!(report.conserved, Some(true));
}

#[test]
fn isolated_source_drops_with_no_route() {
    let nodes = [(1, 50.0, 50.0), (2, 700.0, 400.0), (3, 800.0, 450.0)];
    let sc = static_scenario(&nodes, flow(1, 3, 2.0, 1.0, 11.0), 30.0);
    let (out, report) = run(&sc);
    assert!(out
        .trace
        .iter()
        .any(|r| matches!(r.event, TraceEvent::Warning { .. })));
    assert_eq!(report.total.delivered, 0);
    let no_route = count(&out.trace, |e| {
        matches!(
            e,
            TraceEvent::DataDropped {
                reason: DropReason::NoRoute,
                ..
            }
        )
    });
    assert_eq!(no_route as u64, report.total.generated);
    assert_eq!(report.conserved, Some(true));
}

#[test]
fn invalid_scenario_is_rejected() {
    let mut sc = static_scenario(&chain(3), flow(1, 9, 1.0, 1.0, 2.0), 5.0);
    sc.loss_rate = 1.5;
    let err = aodvsec::sim::run(&sc).unwrap_err().to_string();
    assert!(err.contains("loss"), "{err}");
    assert!(err.contains('9'), "{err}");
}

#[test]
fn steady_state_delay_is_hops_times_propagation() {
    let sc = static_scenario(&chain(5), flow(1, 5, 4.0, 1.0, 60.0), 60.0);
    let (out, report) = run(&sc);
    let delays: Vec<f64> = out
        .trace
        .iter()
        .filter_map(|r| match r.event {
            TraceEvent::DataDelivered { sent_at, .. } => Some(r.t - sent_at),
            _ => None,
        })
        .collect();
    // The first packet waits for discovery.
    assert!(delays[0] > 0.004 + 1e-6);
    for d in &delays[1..] {
        assert!((d - 0.004).abs() < 1e-6, "{d}");
    }
    let late = &report.windows[1];
    assert!((late.aed.unwrap() - 0.004).abs() < 1e-6);
    assert_eq!(late.jitter.map(|j| j < 1e-6), Some(true));
}

#[test]
fn windows_sum_to_totals() {
    for name in ["normal", "combined", "table1_bh"] {
        let (_, r) = run(&scenario(name));
        let sum =
            |f: fn(&aodvsec::metrics::WindowMetrics) -> u64| r.windows.iter().map(f).sum::<u64>();
        assert_eq!(sum(|w| w.generated), r.total.generated, "{name}");
        assert_eq!(sum(|w| w.delivered), r.total.delivered, "{name}");
        assert_eq!(sum(|w| w.dropped), r.total.dropped, "{name}");
        assert_eq!(sum(|w| w.control_tx), r.total.control_tx, "{name}");
        assert_eq!(sum(|w| w.snooped), r.total.snooped, "{name}");
        assert_eq!(sum(|w| w.swallowed), r.total.swallowed, "{name}");
        for w in &r.windows {
            assert!(w.pdf.is_none_or(|p| (0.0..=1.0).contains(&p)));
            assert!(w.nrl.is_none_or(|n| n >= 0.0));
        }
    }
}

#[test]
fn bundled_blackhole_scenario_matches_the_parameter_table() {
    let sc = scenario("table1_bh");
    assert_eq!(sc.nodes.len(), 15);
    assert_eq!(sc.flows.len(), 1);
    assert_eq!(sc.flows[0].size, 512);
    assert_eq!(sc.area, (850.0, 550.0));
    assert_eq!(sc.sim_time, 500.0);
    assert_eq!(sc.attacks.len(), 1);
    assert_eq!(
        sc.attacks[0].kind,
        aodvsec::adversary::AttackKind::Blackhole
    );
    assert_eq!(sc.attacks[0].start.as_secs_f64(), 200.0);
}

#[test]
fn parser_rejects_late_attacks_and_degenerate_flows() {
    let text = "nodes 2\nnode 1 0 0\nnode 2 100 0\nsim_time 500\n\
                flow 1 1 rate=1 size=10 start=0 stop=5\n\
                attack bh node=2 start=600 src=1 dst=2\n";
    let err = aodvsec::scenario::Scenario::parse(text)
        .unwrap_err()
        .to_string();
    assert!(err.contains("same source and destination"), "{err}");
    assert!(err.contains("line 6"), "{err}");
}
