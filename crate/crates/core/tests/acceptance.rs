//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use aodvsec::aodv::{AodvNode, Outbox, Protocol, ProtocolConstants};
use aodvsec::aodvsec::{RreqAckCache, Validation};
use aodvsec::metrics::{self, MetricsReport};
use aodvsec::scenario::Scenario;
use aodvsec::trace::{DiscardReason, DiscoveryPhase, TraceEvent};
use aodvsec::wire::{self, *};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const TOL: f64 = 0.02;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn windows_close(
    a: &MetricsReport,
    b: &MetricsReport,
    metric: &str,
    from: f64,
    to: f64,
) -> Result<(), String> {
    for (wa, wb) in a.windows.iter().zip(&b.windows) {
        if wa.start < from || wa.start >= to {
            continue;
        }
        let (va, vb) = (wa.get(metric), wb.get(metric));
        check(
            close(va, vb, TOL),
            format!(
                "{metric} differs in [{}, {}): {va:?} vs {vb:?}",
                wa.start, wa.end
            ),
        )?;
    }
    Ok(())
}

fn baseline(sc: &Scenario) -> MetricsReport {
    run(&sc.without_attacks()).1
}

fn equivalence() -> Outcome {
    let sc = scenario("normal");
    let mut slowest = Duration::ZERO;
    for seed in SEEDS {
        let t0 = Instant::now();
        let (_, a) = run(&with(&sc, Protocol::Aodv, seed));
        slowest = slowest.max(t0.elapsed());
        let t0 = Instant::now();
        let (_, s) = run(&with(&sc, Protocol::AodvSec, seed));
        slowest = slowest.max(t0.elapsed());
        for m in ["pdf", "at", "aed", "jitter"] {
            windows_close(&s, &a, m, 0.0, f64::INFINITY)
                .map_err(|e| format!("seed {seed}: {e}"))?;
        }
        for (ws, wa) in s.windows.iter().zip(&a.windows) {
            check(
                ws.control_tx - ws.rreq_ack_tx == wa.control_tx,
                format!(
                    "seed {seed}: control traffic differs beyond RREQ-ACKs in [{}, {})",
                    ws.start, ws.end
                ),
            )?;
        }
        check(
            a.total.delivered > 0,
            format!("seed {seed}: nothing delivered"),
        )?;
    }
    check(
        slowest < Duration::from_secs(10),
        format!("slowest run {slowest:?}"),
    )?;
    Ok(format!(
        "5 seeds, slowest run {:.2}s",
        slowest.as_secs_f64()
    ))
}

fn resource_consumption() -> Outcome {
    let sc = scenario("rc");
    let dst = sc.flows[0].dst;
    let attack_at = sc.attacks[0].start.as_secs_f64();

    let (out, a) = run(&sc.with_protocol(Protocol::Aodv));
    let loops: Vec<_> = metrics::mutual_next_hops(&out.trace, dst)
        .into_iter()
        .filter(|(t, _, _)| *t >= attack_at)
        .collect();
    let Some(&(formed, x, y)) = loops.first() else {
        return Err("no mutual next-hop cycle under AODV".into());
    };
    let affected: Vec<_> = a.windows.iter().filter(|w| w.start >= formed).collect();
    check(!affected.is_empty(), "no window after the loop")?;
    for w in &affected {
        check(
            w.pdf == Some(0.0),
            format!("AODV PDF {:?} in [{}, {})", w.pdf, w.start, w.end),
        )?;
    }

    let s_sc = sc.with_protocol(Protocol::AodvSec);
    let (out, s) = run(&s_sc);
    let base = baseline(&s_sc);
    windows_close(&s, &base, "pdf", attack_at, f64::INFINITY)?;
    let forged = forged_frames(&out.trace);
    check(!forged.is_empty(), "attacker sent nothing")?;
    let writes = events(&out.trace)
        .filter(|(_, _, e)| matches!(e, TraceEvent::RouteWrite { cause: Some(c), .. } if forged.contains(c)))
        .count();
    check(
        writes == 0,
        format!("{writes} route writes caused by forged frames"),
    )?;
    check(
        metrics::mutual_next_hops(&out.trace, dst).is_empty(),
        "cycle under AODVSEC",
    )?;
    Ok(format!(
        "AODV loop {}<->{} at {formed:.3}s; AODVSEC unaffected",
        x.0, y.0
    ))
}

fn mean_nrl(r: &MetricsReport, from: f64, to: f64) -> f64 {
    let xs: Vec<f64> = r
        .windows
        .iter()
        .filter(|w| w.start >= from && w.start < to)
        .map(|w| w.nrl.unwrap_or(0.0))
        .collect();
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn route_disturb() -> Outcome {
    let sc = scenario("rd");
    let attack_at = sc.attacks[0].start.as_secs_f64();
    let (out, a) = run(&sc.with_protocol(Protocol::Aodv));
    let (pre, post) = (
        mean_nrl(&a, 0.0, attack_at),
        mean_nrl(&a, attack_at, f64::INFINITY),
    );
    check(
        post > pre,
        format!("AODV NRL post {post:.4} not above pre {pre:.4}"),
    )?;
    let rediscoveries = events(&out.trace)
        .filter(|(t, _, e)| {
            *t > attack_at
                && matches!(
                    e,
                    TraceEvent::Discovery {
                        phase: DiscoveryPhase::Start,
                        ..
                    }
                )
        })
        .count();
    check(rediscoveries > 0, "no route discovery after the attack")?;

    let s_sc = sc.with_protocol(Protocol::AodvSec);
    let (_, s) = run(&s_sc);
    let base = baseline(&s_sc);
    windows_close(&s, &base, "nrl", 0.0, f64::INFINITY)?;
    windows_close(&s, &base, "jitter", 0.0, f64::INFINITY)?;
    Ok(format!(
        "AODV NRL {pre:.4} -> {post:.4}, {rediscoveries} rediscoveries; AODVSEC matches baseline"
    ))
}

fn route_invasion() -> Outcome {
    let sc = scenario("ri");
    let attack_at = sc.attacks[0].start.as_secs_f64();
    let (out, a) = run(&sc.with_protocol(Protocol::Aodv));
    let snoops = snoop_times(&out.trace);
    check(
        snoops.iter().all(|t| *t >= attack_at),
        "AODV snooped before the attack",
    )?;
    check(!snoops.is_empty(), "AODV attacker snooped nothing")?;
    windows_close(
        &a,
        &baseline(&sc.with_protocol(Protocol::Aodv)),
        "pdf",
        0.0,
        f64::INFINITY,
    )?;

    let (out, s) = run(&sc.with_protocol(Protocol::AodvSec));
    let s_snoops = snoop_times(&out.trace).len();
    check(
        s_snoops == 0,
        format!("AODVSEC attacker snooped {s_snoops}"),
    )?;
    check(
        s.attackers.values().all(|c| c.snooped == 0),
        "AODVSEC counter nonzero",
    )?;
    Ok(format!(
        "AODV snooped {} after {attack_at}s; AODVSEC 0",
        snoops.len()
    ))
}

fn combined() -> Outcome {
    let sc = scenario("combined");
    let mut starts: Vec<f64> = sc.attacks.iter().map(|a| a.start.as_secs_f64()).collect();
    starts.sort_by(f64::total_cmp);
    let (first, second, third) = (starts[0], starts[1], starts[2]);

    let (out, _) = run(&sc.with_protocol(Protocol::Aodv));
    let snoops = snoop_times(&out.trace);
    check(
        snoops.iter().all(|t| *t >= first),
        "snooped before the first attack",
    )?;
    check(
        snoops.iter().any(|t| *t < second),
        "no snooping before the second attack",
    )?;
    let last = snoops.last().copied().unwrap_or(0.0);
    check(
        (second..=third).contains(&last),
        format!("snoop counter last rose at {last:.3}s, outside [{second}, {third}]"),
    )?;

    let s_sc = sc.with_protocol(Protocol::AodvSec);
    let (_, s) = run(&s_sc);
    let base = baseline(&s_sc);
    for m in ["pdf", "nrl", "at", "aed", "jitter"] {
        windows_close(&s, &base, m, 0.0, f64::INFINITY)?;
    }
    Ok(format!(
        "AODV snooped {} until {last:.3}s; AODVSEC matches baseline",
        snoops.len()
    ))
}

fn blackhole() -> Outcome {
    let sc = scenario("table1_bh");
    let spec = &sc.attacks[0];
    let (src, bh) = (spec.target.0, spec.attacker);
    let attack_at = spec.start.as_secs_f64();

    let (out, _) = run(&sc.with_protocol(Protocol::Aodv));
    let effect = events(&out.trace).find_map(|(t, n, e)| match e {
        TraceEvent::RouteWrite { dest, next_hop, .. }
            if t >= attack_at && n == src && *dest == spec.target.1 && *next_hop == bh =>
        {
            Some(t)
        }
        _ => None,
    });
    let Some(effect) = effect else {
        return Err("source never routed into the blackhole".into());
    };
    let late = events(&out.trace)
        .filter(
            |(_, _, e)| matches!(e, TraceEvent::DataDelivered { sent_at, .. } if *sent_at > effect),
        )
        .count();
    check(
        late == 0,
        format!("{late} packets generated after {effect:.3}s delivered"),
    )?;

    let s_sc = sc.with_protocol(Protocol::AodvSec);
    let (out, s) = run(&s_sc);
    windows_close(&s, &baseline(&s_sc), "pdf", 0.0, f64::INFINITY)?;
    let forged = forged_frames(&out.trace);
    let mut reasons: BTreeMap<u64, DiscardReason> = BTreeMap::new();
    for (_, _, e) in events(&out.trace) {
        if let TraceEvent::RrepDiscarded { frame, reason } = e {
            reasons.insert(*frame, *reason);
        }
    }
    check(!forged.is_empty(), "blackhole never replied under AODVSEC")?;
    for f in &forged {
        check(
            reasons.get(f) == Some(&DiscardReason::NoCacheEntry),
            format!("forged frame {f}: {:?}", reasons.get(f)),
        )?;
    }
    Ok(format!(
        "AODV effect at {effect:.3}s, 0 later deliveries; {} forged RREPs discarded (no cache entry)",
        forged.len()
    ))
}

fn processing_cost() -> Outcome {
    let sc = scenario("normal");
    let mut deltas = Vec::new();
    for rate in [2.0, 4.0, 8.0] {
        for seed in [1, 2, 3] {
            let mut v = sc.with_seed(seed);
            v.flows[0].rate = rate;
            let a = run(&v.with_protocol(Protocol::Aodv))
                .1
                .processing
                .ops_per_message;
            let s = run(&v.with_protocol(Protocol::AodvSec))
                .1
                .processing
                .ops_per_message;
            let (Some(a), Some(s)) = (a, s) else {
                return Err(format!("rate {rate} seed {seed}: no control messages"));
            };
            check(s > a, format!("rate {rate} seed {seed}: {s:.3} <= {a:.3}"))?;
            deltas.push(s - a);
        }
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let sd = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cv = sd / mean;
    check(cv < 0.10, format!("delta CV {cv:.4} (mean {mean:.3})"))?;
    Ok(format!("delta {mean:.3} ops/message, CV {cv:.4}"))
}

fn cache_expiry() -> Outcome {
    // 2 * (2 * 40 ms * 35) = 28/5 s, in 32.32 fixed point, rounded.
    let pdt_ticks = (((28u128 << 32) * 2 + 5) / 10) as u64;
    let c = ProtocolConstants::default();
    let pdt = c.path_discovery_time();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cache = RreqAckCache::new(1 << 16);
    for i in 0..1000 {
        let now = Timestamp::from_raw(rng.gen_range(0..(1u64 << 40)));
        let e = cache.insert(
            NodeId(rng.gen_range(1..50)),
            NodeId(rng.gen_range(1..50)),
            Timestamp::from_raw(rng.gen()),
            rng.gen(),
            now,
            pdt,
        );
        check(
            e.ex.raw() - now.raw() == pdt_ticks,
            format!("insert {i}: ex - now = {}", e.ex.raw() - now.raw()),
        )?;
    }

    let mut cache = RreqAckCache::default();
    let now = Timestamp::from_secs_f64(10.0);
    let t = Timestamp::from_secs_f64(9.5);
    let e = cache.insert(NodeId(2), NodeId(5), t, true, now, pdt);
    let rrep = RrepMessage {
        destination: NodeId(5),
        timestamp: t,
        ..Default::default()
    };
    let after = Timestamp::from_raw(e.ex.raw() + 1);
    check(
        matches!(
            cache.validate(NodeId(2), &rrep, e.ex),
            Validation::Accept(_)
        ),
        "rejected at ex",
    )?;
    check(
        cache.validate(NodeId(2), &rrep, after) == Validation::Discard(DiscardReason::NoCacheEntry),
        "accepted after ex",
    )?;
    check(cache.purge_expired(e.ex) == 0, "purged at ex")?;
    check(cache.purge_expired(after) == 1, "kept after ex")?;
    Ok("1000 inserts exact; boundary at ex inclusive".into())
}

fn random_connected(rng: &mut ChaCha8Rng) -> Vec<(u32, f64, f64)> {
    loop {
        let n = rng.gen_range(2..=12u32);
        let side = 150.0 * (n as f64).sqrt() + 100.0;
        let pos: Vec<_> = (1..=n)
            .map(|i| (i, rng.gen_range(0.0..side), rng.gen_range(0.0..side)))
            .collect();
        if bfs(&pos, 250.0, 1).len() == n as usize {
            return pos;
        }
    }
}

fn discovery_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let graphs: Vec<_> = (0..100).map(|_| random_connected(&mut rng)).collect();
    let mut checked = 0;
    let mut longest = 0;
    for (g, pos) in graphs.iter().enumerate() {
        let n = pos.len() as u32;
        let src = 1;
        let dst = n;
        if src == dst {
            continue;
        }
        let to_dst = bfs(pos, 250.0, src)[&dst];
        // The destination answers instead of re-flooding.
        let flood = bfs_through(pos, 250.0, src, &[dst]);
        longest = longest.max(to_dst);
        for protocol in [Protocol::Aodv, Protocol::AodvSec] {
            let sc =
                static_scenario(pos, flow(src, dst, 1.0, 1.0, 2.0), 3.0).with_protocol(protocol);
            let (out, _) = run(&sc);
            let mut first: BTreeMap<(NodeId, NodeId), u32> = BTreeMap::new();
            for (_, node, e) in events(&out.trace) {
                if let TraceEvent::RouteWrite {
                    dest, hop_count, ..
                } = e
                {
                    first.entry((node, *dest)).or_insert(*hop_count);
                }
            }
            let fwd = first.get(&(NodeId(src), NodeId(dst)));
            check(
                fwd == Some(&to_dst),
                format!("graph {g} {protocol}: route {src}->{dst} hops {fwd:?}, oracle {to_dst}"),
            )?;
            for ((node, dest), hops) in &first {
                if dest.0 == src {
                    let want = flood[&node.0];
                    check(
                        *hops == want,
                        format!("graph {g} {protocol}: reverse route at {node} hops {hops}, oracle {want}"),
                    )?;
                }
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} runs on 100 graphs, up to {longest} hops"
    ))
}

fn arb_ts() -> impl Strategy<Value = Timestamp> {
    any::<u64>().prop_map(Timestamp::from_raw)
}

fn arb_node() -> impl Strategy<Value = NodeId> {
    any::<u32>().prop_map(NodeId)
}

fn arb_message() -> impl Strategy<Value = Message> {
    let rreq = (
        any::<[bool; 6]>(),
        0u32..256,
        any::<u32>(),
        arb_node(),
        any::<u32>(),
        arb_node(),
        any::<u32>(),
        arb_ts(),
        arb_node(),
    )
        .prop_map(
            |(
                f,
                hop_count,
                broadcast_id,
                destination,
                dest_seq,
                originator,
                orig_seq,
                timestamp,
                previous_node,
            )| {
                Message::Rreq(RreqMessage {
                    join: f[0],
                    repair: f[1],
                    gratuitous: f[2],
                    dest_only: f[3],
                    unknown_seq: f[4],
                    ack: f[5],
                    hop_count,
                    broadcast_id,
                    destination,
                    dest_seq,
                    originator,
                    orig_seq,
                    timestamp,
                    previous_node,
                })
            },
        );
    let rrep = (
        any::<(bool, bool)>(),
        0u8..32,
        0u32..256,
        arb_node(),
        any::<u32>(),
        arb_node(),
        any::<u32>(),
        arb_ts(),
    )
        .prop_map(
            |(
                (repair, ack),
                prefix_size,
                hop_count,
                destination,
                dest_seq,
                originator,
                lifetime_ms,
                timestamp,
            )| {
                Message::Rrep(RrepMessage {
                    repair,
                    ack,
                    prefix_size,
                    hop_count,
                    destination,
                    dest_seq,
                    originator,
                    lifetime_ms,
                    timestamp,
                })
            },
        );
    let rerr = prop::collection::vec((arb_node(), any::<u32>()), 1..=255).prop_map(|v| {
        Message::Rerr(RerrMessage {
            unreachable: v
                .into_iter()
                .map(|(destination, dest_seq)| Unreachable {
                    destination,
                    dest_seq,
                })
                .collect(),
        })
    });
    let ack =
        (arb_node(), arb_node(), arb_ts()).prop_map(|(own_address, destination, timestamp)| {
            Message::RreqAck(RreqAckMessage {
                own_address,
                destination,
                timestamp,
            })
        });
    let data = (
        any::<u32>(),
        any::<u32>(),
        arb_node(),
        arb_node(),
        any::<u32>(),
        arb_ts(),
        any::<u8>(),
    )
        .prop_map(|(flow_id, seq, src, dst, payload_len, sent_at, ttl)| {
            Message::Data(DataPacket {
                flow_id,
                seq,
                src,
                dst,
                payload_len,
                sent_at,
                ttl,
            })
        });
    prop_oneof![rreq, rrep, rerr, ack, data]
}

fn malformed_inputs() -> Vec<(&'static str, Vec<u8>)> {
    let rreq = wire::encode(&Message::Rreq(RreqMessage {
        ack: true,
        destination: NodeId(5),
        originator: NodeId(1),
        ..Default::default()
    }))
    .unwrap();
    let rrep = wire::encode(&Message::Rrep(RrepMessage {
        destination: NodeId(5),
        originator: NodeId(1),
        ..Default::default()
    }))
    .unwrap();
    let mut reserved = rreq.clone();
    reserved[2] = 0x01;
    let mut rrep_reserved = rrep.clone();
    rrep_reserved[1] = 0x01;
    let mut trailing = rrep.clone();
    trailing.push(0);
    let mut unknown = rrep.clone();
    unknown[0] = 9;
    let mut rerr_short = vec![3, 0, 0, 2];
    rerr_short.extend_from_slice(&[0; 8]);
    vec![
        ("empty", vec![]),
        ("truncated RREQ", rreq[..20].to_vec()),
        ("truncated RREP", rrep[..27].to_vec()),
        ("RREQ reserved bits", reserved),
        ("RREP reserved bits", rrep_reserved),
        ("trailing bytes", trailing),
        ("unknown type", unknown),
        ("RERR with zero entries", vec![3, 0, 0, 0]),
        ("RERR count beyond buffer", rerr_short),
        ("truncated RREQ-ACK", vec![5, 0, 0, 0, 0, 0, 0, 1]),
        ("truncated DATA", vec![16, 0, 0, 64]),
    ]
}

fn codec() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&arb_message(), |msg| {
            let bytes = wire::encode(&msg).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = wire::decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(back, msg);
            Ok(())
        })
        .map_err(|e| format!("round trip: {e}"))?;

    for protocol in [Protocol::Aodv, Protocol::AodvSec] {
        let mut node = AodvNode::new(NodeId(3), protocol, ProtocolConstants::default());
        let mut out = Outbox::new();
        let now = Timestamp::from_secs_f64(1.0);
        let rreq = Message::Rreq(RreqMessage {
            ack: protocol == Protocol::AodvSec,
            destination: NodeId(9),
            originator: NodeId(1),
            timestamp: now,
            previous_node: NodeId(1),
            ..Default::default()
        });
        node.receive_bytes(
            1,
            NodeId(2),
            NodeId(2),
            &wire::encode(&rreq).unwrap(),
            now,
            &mut out,
        );
        let before = format!("{node:?}");
        for (i, (name, bytes)) in malformed_inputs().into_iter().enumerate() {
            check(wire::decode(&bytes).is_err(), format!("{name} decoded"))?;
            let mut out = Outbox::new();
            node.receive_bytes(100 + i as u64, NodeId(2), NodeId(2), &bytes, now, &mut out);
            check(
                format!("{node:?}") == before,
                format!("{protocol}: {name} changed node state"),
            )?;
            check(
                out.sends().next().is_none(),
                format!("{protocol}: {name} caused a send"),
            )?;
            let traced: Vec<_> = out.traces().collect();
            check(
                traced.len() == 1 && matches!(traced[0], TraceEvent::DecodeError { .. }),
                format!("{protocol}: {name} traced {traced:?}"),
            )?;
        }
    }
    Ok(format!(
        "10000 round trips; {} malformed inputs rejected",
        malformed_inputs().len()
    ))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("baseline equivalence", equivalence),
        ("resource consumption", resource_consumption),
        ("route disturb", route_disturb),
        ("route invasion", route_invasion),
        ("combined attackers", combined),
        ("blackhole", blackhole),
        ("processing cost", processing_cost),
        ("cache expiry", cache_expiry),
        ("discovery oracle", discovery_oracle),
        ("codec", codec),
    ];
    let results: Vec<Outcome> = criteria
        .par_iter()
        .map(|(_, f)| std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into())))
        .collect();
    let mut failed = 0;
    for (i, ((name, _), res)) in criteria.iter().zip(results).enumerate() {
        match res {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
