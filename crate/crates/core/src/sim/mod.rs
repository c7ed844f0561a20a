//! Discrete-event engine: clock, event queue, unit-disk radio, mobility and
//! CBR traffic. A run is a pure function of its scenario.

pub mod mobility;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::Attacker;
use crate::aodv::{Action, AodvNode, Outbox, Timer, Transmission};
use crate::scenario::{Issue, Placement, Scenario};
use crate::trace::{DropReason, TraceEvent, TraceRecord, TRACE_SCHEMA_VERSION};
use crate::wire::{decode, encode, DataPacket, Frame, Message, NodeId, Timestamp};

use mobility::{MobilityModel, Position, Trajectory};

/// Link-layer retransmissions before a unicast is reported as failed.
pub const UNICAST_RETRIES: u32 = 2;
pub const UNICAST_RETRY_INTERVAL: Duration = Duration::from_millis(5);

const PLACEMENT_ATTEMPTS: usize = 1000;

const STREAM_PLACEMENT: u64 = 1;
const STREAM_MOBILITY: u64 = 2;
const STREAM_JITTER: u64 = 3;
const STREAM_LOSS: u64 = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Issue>),
    #[error("node {node} sent an unmarked frame claiming to be node {claimed}")]
    Impersonation { node: u32, claimed: u32 },
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    /// Wall-clock time spent inside control-message handlers.
    pub handler_wall: Duration,
    pub handler_calls: u64,
    /// Node state when the clock passed `sim_time`.
    pub nodes: BTreeMap<NodeId, AodvNode>,
    pub positions: BTreeMap<NodeId, Position>,
}

#[derive(Debug)]
enum Event {
    Deliver {
        to: NodeId,
        frame: u64,
        link_sender: NodeId,
        net_sender: NodeId,
        bytes: Vec<u8>,
        unicast: bool,
        data: Option<DataPacket>,
    },
    Unicast {
        from: NodeId,
        to: NodeId,
        frame: u64,
        net_sender: NodeId,
        bytes: Vec<u8>,
        msg: Message,
        attempt: u32,
    },
    Timer {
        node: NodeId,
        timer: Timer,
    },
    Traffic {
        flow: usize,
    },
    Fail {
        node: NodeId,
    },
}

#[derive(Debug)]
struct Pending {
    at: Timestamp,
    seq: u64,
    event: Event,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// reversed so BinaryHeap pops the earliest event, ties by insertion order
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct SimNode {
    node: AodvNode,
    attacker: Option<Attacker>,
    alive: bool,
}

struct Engine<'a> {
    sc: &'a Scenario,
    now: Timestamp,
    horizon: Timestamp,
    prop: Duration,
    queue: BinaryHeap<Pending>,
    next_seq: u64,
    next_frame: u64,
    nodes: BTreeMap<NodeId, SimNode>,
    traj: BTreeMap<NodeId, Trajectory>,
    jitter_rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    flow_next: Vec<u32>,
    trace: Vec<TraceRecord>,
    wall: Duration,
    calls: u64,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Runs one scenario to completion.
pub fn run(sc: &Scenario) -> Result<RunOutput, SimError> {
    let issues = sc.validate();
    if !issues.is_empty() {
        return Err(SimError::Invalid(issues));
    }
    let mut warnings = Vec::new();
    let start = place_nodes(sc, &mut warnings);
    let traj = build_trajectories(sc, &start);

    let mut by_attacker: BTreeMap<NodeId, Vec<_>> = BTreeMap::new();
    for a in &sc.attacks {
        by_attacker.entry(a.attacker).or_default().push(a.clone());
    }
    let nodes = sc
        .node_ids()
        .map(|id| {
            let attacker = by_attacker
                .remove(&id)
                .map(|specs| Attacker::new(id, specs));
            let sim = SimNode {
                node: AodvNode::new(id, sc.protocol, sc.constants.clone()),
                attacker,
                alive: true,
            };
            (id, sim)
        })
        .collect();

    let mut e = Engine {
        sc,
        now: Timestamp::ZERO,
        horizon: Timestamp::from_secs_f64(sc.sim_time),
        prop: Duration::from_secs_f64(sc.prop_delay),
        queue: BinaryHeap::new(),
        next_seq: 0,
        next_frame: 0,
        nodes,
        traj,
        jitter_rng: rng(sc.seed, STREAM_JITTER),
        loss_rng: rng(sc.seed, STREAM_LOSS),
        flow_next: vec![0; sc.flows.len()],
        trace: Vec::new(),
        wall: Duration::ZERO,
        calls: 0,
    };
    e.record(
        NodeId::UNSPECIFIED,
        TraceEvent::RunStart {
            schema_version: TRACE_SCHEMA_VERSION,
            scenario: sc.name.clone(),
            protocol: sc.protocol.to_string(),
            seed: sc.seed,
            sim_time: sc.sim_time,
            window: sc.window,
        },
    );
    for w in warnings {
        e.record(NodeId::UNSPECIFIED, TraceEvent::Warning { message: w });
    }
    e.check_flow_connectivity();
    e.schedule_initial();
    e.run_loop()?;
    Ok(e.finish())
}

fn place_nodes(sc: &Scenario, warnings: &mut Vec<String>) -> BTreeMap<NodeId, Position> {
    let fixed: BTreeMap<NodeId, Position> = sc
        .nodes
        .iter()
        .filter_map(|(id, p)| p.map(|p| (*id, p)))
        .collect();
    if sc.placement == Placement::Explicit || fixed.len() == sc.nodes.len() {
        return fixed;
    }
    let mut r = rng(sc.seed, STREAM_PLACEMENT);
    let mut last = fixed.clone();
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut pos = fixed.clone();
        for id in sc.node_ids() {
            pos.entry(id).or_insert_with(|| {
                Position::new(r.gen_range(0.0..=sc.area.0), r.gen_range(0.0..=sc.area.1))
            });
        }
        if connected_components(&pos, sc.radio_range) == 1 {
            return pos;
        }
        last = pos;
    }
    warnings.push(format!(
        "no connected random placement found in {PLACEMENT_ATTEMPTS} attempts"
    ));
    last
}

fn connected_components(pos: &BTreeMap<NodeId, Position>, range: f64) -> usize {
    let ids: Vec<_> = pos.keys().copied().collect();
    let mut seen = BTreeSet::new();
    let mut comps = 0;
    for &root in &ids {
        if !seen.insert(root) {
            continue;
        }
        comps += 1;
        let mut q = VecDeque::from([root]);
        while let Some(u) = q.pop_front() {
            for &v in &ids {
                if pos[&u].distance(pos[&v]) <= range && seen.insert(v) {
                    q.push_back(v);
                }
            }
        }
    }
    comps
}

fn build_trajectories(
    sc: &Scenario,
    start: &BTreeMap<NodeId, Position>,
) -> BTreeMap<NodeId, Trajectory> {
    let mut r = rng(sc.seed, STREAM_MOBILITY);
    let mut out = BTreeMap::new();
    for (&id, &p) in start {
        let t = match (sc.waypoints.get(&id), sc.mobility) {
            (Some(w), _) => Trajectory::scripted(p, w),
            (
                None,
                MobilityModel::RandomWaypoint {
                    min_speed,
                    max_speed,
                    pause,
                },
            ) => Trajectory::random_waypoint(
                p,
                sc.area,
                min_speed,
                max_speed,
                pause,
                sc.sim_time,
                &mut r,
            ),
            (None, MobilityModel::Static) => Trajectory::fixed(p),
        };
        out.insert(id, t);
    }
    out
}

impl Engine<'_> {
    fn record(&mut self, node: NodeId, event: TraceEvent) {
        self.trace.push(TraceRecord {
            t: self.now.as_secs_f64(),
            node,
            event,
        });
    }

    fn push(&mut self, at: Timestamp, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending { at, seq, event });
    }

    fn position(&self, id: NodeId) -> Option<Position> {
        let t = self.now.as_secs_f64();
        self.traj.get(&id).map(|tr| tr.position(t))
    }

    fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        match (self.position(a), self.position(b)) {
            (Some(pa), Some(pb)) => pa.distance(pb) <= self.sc.radio_range,
            _ => false,
        }
    }

    fn alive(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.alive)
    }

    /// Live nodes within range of `id`, in id order.
    fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(v, n)| **v != id && n.alive && self.in_range(id, **v))
            .map(|(v, _)| *v)
            .collect()
    }

    fn lost(&mut self) -> bool {
        let p = self.sc.loss_rate;
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.loss_rng.gen_bool(p)
        }
    }

    fn check_flow_connectivity(&mut self) {
        let static_run = self.traj.values().all(Trajectory::is_static);
        if !static_run {
            return;
        }
        let pos: BTreeMap<_, _> = self
            .nodes
            .keys()
            .filter_map(|id| self.position(*id).map(|p| (*id, p)))
            .collect();
        let mut msgs = Vec::new();
        for f in &self.sc.flows {
            if hop_distance(&pos, self.sc.radio_range, f.src, f.dst).is_none() {
                msgs.push(format!(
                    "flow {} -> {} is not connected at t=0",
                    f.src.0, f.dst.0
                ));
            }
        }
        for m in msgs {
            self.record(NodeId::UNSPECIFIED, TraceEvent::Warning { message: m });
        }
    }

    fn schedule_initial(&mut self) {
        for (i, f) in self.sc.flows.iter().enumerate() {
            let at = Timestamp::from_secs_f64(f.start);
            self.push(at, Event::Traffic { flow: i });
        }
        for &(node, at) in &self.sc.failures {
            self.push(Timestamp::from_secs_f64(at), Event::Fail { node });
        }
        for a in &self.sc.attacks {
            let index = self.nodes[&a.attacker]
                .attacker
                .as_ref()
                .and_then(|att| att.specs().iter().position(|s| s == a))
                .expect("attacker built from this spec");
            self.push(
                a.start,
                Event::Timer {
                    node: a.attacker,
                    timer: Timer::Attack { index },
                },
            );
        }
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        while let Some(p) = self.queue.peek() {
            if p.at > self.horizon {
                break;
            }
            let p = self.queue.pop().expect("peeked");
            self.now = p.at;
            self.dispatch(p.event)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::Deliver {
                to,
                frame,
                link_sender,
                net_sender,
                bytes,
                unicast,
                data,
            } => self.deliver(to, frame, link_sender, net_sender, &bytes, unicast, data),
            Event::Unicast {
                from,
                to,
                frame,
                net_sender,
                bytes,
                msg,
                attempt,
            } => self.unicast_attempt(from, to, frame, net_sender, bytes, msg, attempt),
            Event::Timer { node, timer } => self.timer(node, timer),
            Event::Traffic { flow } => self.traffic(flow),
            Event::Fail { node } => {
                self.fail(node);
                Ok(())
            }
        }
    }

    fn apply(&mut self, node: NodeId, out: Outbox) -> Result<(), SimError> {
        for action in out.actions {
            match action {
                Action::Send(tx) => self.transmit(node, tx)?,
                Action::Schedule { at, timer } => self.push(at, Event::Timer { node, timer }),
                Action::Trace(ev) => self.record(node, ev),
            }
        }
        Ok(())
    }

    fn transmit(&mut self, from: NodeId, tx: Transmission) -> Result<(), SimError> {
        if !tx.forged && tx.net_sender != from {
            return Err(SimError::Impersonation {
                node: from.0,
                claimed: tx.net_sender.0,
            });
        }
        let bytes = match encode(&tx.msg) {
            Ok(b) => b,
            Err(e) => {
                self.record(
                    from,
                    TraceEvent::Warning {
                        message: format!("cannot encode {}: {e}", tx.msg.kind().as_str()),
                    },
                );
                if let Message::Data(p) = &tx.msg {
                    self.drop_data(from, p, DropReason::NoRoute);
                }
                return Ok(());
            }
        };
        let frame = self.next_frame;
        self.next_frame += 1;
        self.record(
            from,
            TraceEvent::Send {
                frame,
                kind: tx.msg.kind(),
                to: tx.to,
                net_sender: tx.net_sender,
                forged: tx.forged,
                len: bytes.len(),
            },
        );
        match tx.to {
            Some(to) => self.unicast_attempt(from, to, frame, tx.net_sender, bytes, tx.msg, 0),
            None => {
                for v in self.neighbors(from) {
                    if self.lost() {
                        continue;
                    }
                    let jitter = if self.sc.flood_jitter > 0.0 {
                        self.jitter_rng.gen_range(0.0..self.sc.flood_jitter)
                    } else {
                        0.0
                    };
                    let at = self.now + self.prop + Duration::from_secs_f64(jitter);
                    self.push(
                        at,
                        Event::Deliver {
                            to: v,
                            frame,
                            link_sender: from,
                            net_sender: tx.net_sender,
                            bytes: bytes.clone(),
                            unicast: false,
                            data: None,
                        },
                    );
                }
                Ok(())
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn unicast_attempt(
        &mut self,
        from: NodeId,
        to: NodeId,
        frame: u64,
        net_sender: NodeId,
        bytes: Vec<u8>,
        msg: Message,
        attempt: u32,
    ) -> Result<(), SimError> {
        if !self.alive(from) {
            if let Message::Data(p) = &msg {
                self.drop_data(from, p, DropReason::NodeFailed);
            }
            return Ok(());
        }
        if attempt == 0 {
            self.overhear(from, to, &msg);
        }
        let reachable = self.alive(to) && self.in_range(from, to);
        if reachable && !self.lost() {
            let data = match &msg {
                Message::Data(p) => Some(p.clone()),
                _ => None,
            };
            let at = self.now + self.prop;
            self.push(
                at,
                Event::Deliver {
                    to,
                    frame,
                    link_sender: from,
                    net_sender,
                    bytes,
                    unicast: true,
                    data,
                },
            );
            return Ok(());
        }
        if attempt < UNICAST_RETRIES {
            let at = self.now + UNICAST_RETRY_INTERVAL;
            self.push(
                at,
                Event::Unicast {
                    from,
                    to,
                    frame,
                    net_sender,
                    bytes,
                    msg,
                    attempt: attempt + 1,
                },
            );
            return Ok(());
        }
        let now = self.now;
        let mut out = Outbox::new();
        let sim = self.nodes.get_mut(&from).expect("sender exists");
        sim.node.on_send_failure(to, &msg, now, &mut out);
        self.apply(from, out)
    }

    /// Attackers in range of a unicast learn from it without receiving it.
    fn overhear(&mut self, from: NodeId, to: NodeId, msg: &Message) {
        let listeners: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(id, n)| n.attacker.is_some() && n.alive && **id != from && **id != to)
            .map(|(id, _)| *id)
            .filter(|id| self.in_range(from, *id))
            .collect();
        for id in listeners {
            if let Some(att) = self.nodes.get_mut(&id).and_then(|n| n.attacker.as_mut()) {
                att.observe(from, Some(to), msg);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn deliver(
        &mut self,
        to: NodeId,
        frame_id: u64,
        link_sender: NodeId,
        net_sender: NodeId,
        bytes: &[u8],
        unicast: bool,
        data: Option<DataPacket>,
    ) -> Result<(), SimError> {
        if !self.alive(to) {
            if let Some(p) = data {
                self.drop_data(to, &p, DropReason::NodeFailed);
            }
            return Ok(());
        }
        let body = match decode(bytes) {
            Ok(b) => b,
            Err(e) => {
                self.record(
                    to,
                    TraceEvent::DecodeError {
                        frame: frame_id,
                        error: e.to_string(),
                    },
                );
                return Ok(());
            }
        };
        let kind = body.kind();
        self.record(
            to,
            TraceEvent::Recv {
                frame: frame_id,
                kind,
                link_sender,
                net_sender,
            },
        );
        let frame = Frame {
            id: frame_id,
            link_sender,
            net_sender,
            body,
        };
        let now = self.now;
        let mut out = Outbox::new();
        let sim = self.nodes.get_mut(&to).expect("receiver exists");
        let started = Instant::now();
        match sim.attacker.as_mut() {
            Some(att) => {
                att.observe(link_sender, unicast.then_some(to), &frame.body);
                att.handle_frame(&mut sim.node, &frame, now, &mut out);
            }
            None => sim.node.handle_frame(&frame, now, &mut out),
        }
        if kind.is_control() {
            self.wall += started.elapsed();
            self.calls += 1;
        }
        self.apply(to, out)
    }

    fn timer(&mut self, node: NodeId, timer: Timer) -> Result<(), SimError> {
        if !self.alive(node) {
            return Ok(());
        }
        let now = self.now;
        let mut out = Outbox::new();
        match timer {
            Timer::Attack { index } => {
                let near: BTreeSet<NodeId> = self.neighbors(node).into_iter().collect();
                let sim = self.nodes.get_mut(&node).expect("attacker exists");
                if let Some(att) = sim.attacker.as_mut() {
                    att.launch(index, &mut sim.node, now, &|n| near.contains(&n), &mut out);
                }
            }
            Timer::Discovery { .. } => {
                let sim = self.nodes.get_mut(&node).expect("node exists");
                sim.node.on_timer(timer, now, &mut out);
            }
        }
        self.apply(node, out)
    }

    fn traffic(&mut self, flow: usize) -> Result<(), SimError> {
        let f = &self.sc.flows[flow];
        let seq = self.flow_next[flow];
        self.flow_next[flow] += 1;
        let pkt = DataPacket {
            flow_id: flow as u32,
            seq,
            src: f.src,
            dst: f.dst,
            payload_len: f.size,
            sent_at: self.now,
            ttl: self.sc.constants.ttl_data,
        };
        let next = f.start + (seq as f64 + 1.0) / f.rate;
        if next < f.stop {
            self.push(Timestamp::from_secs_f64(next), Event::Traffic { flow });
        }
        let src = f.src;
        let now = self.now;
        if !self.alive(src) {
            self.record(
                src,
                TraceEvent::DataGenerated {
                    flow: pkt.flow_id,
                    seq: pkt.seq,
                    dst: pkt.dst,
                    bytes: pkt.payload_len,
                },
            );
            self.drop_data(src, &pkt, DropReason::NodeFailed);
            return Ok(());
        }
        let mut out = Outbox::new();
        let sim = self.nodes.get_mut(&src).expect("flow source exists");
        sim.node.originate_data(pkt, now, &mut out);
        self.apply(src, out)
    }

    fn fail(&mut self, node: NodeId) {
        let Some(sim) = self.nodes.get_mut(&node) else {
            return;
        };
        if !sim.alive {
            return;
        }
        sim.alive = false;
        let lost = sim.node.drain_queues();
        self.record(node, TraceEvent::NodeFailed);
        for p in lost {
            self.drop_data(node, &p, DropReason::NodeFailed);
        }
    }

    fn drop_data(&mut self, node: NodeId, p: &DataPacket, reason: DropReason) {
        self.record(
            node,
            TraceEvent::DataDropped {
                flow: p.flow_id,
                seq: p.seq,
                reason,
            },
        );
    }

    fn finish(mut self) -> RunOutput {
        let mut generated = 0u64;
        let mut delivered = 0u64;
        let mut dropped = 0u64;
        for r in &self.trace {
            match r.event {
                TraceEvent::DataGenerated { .. } => generated += 1,
                TraceEvent::DataDelivered { .. } => delivered += 1,
                TraceEvent::DataDropped { .. } => dropped += 1,
                _ => {}
            }
        }
        let pending = self
            .queue
            .iter()
            .filter(|p| match &p.event {
                Event::Deliver { data, .. } => data.is_some(),
                Event::Unicast { msg, .. } => matches!(msg, Message::Data(_)),
                _ => false,
            })
            .count() as u64;
        let queued: u64 = self.nodes.values().map(|n| n.node.queued() as u64).sum();
        let in_flight = pending + queued;
        self.now = self.horizon;
        self.record(
            NodeId::UNSPECIFIED,
            TraceEvent::RunEnd {
                generated,
                delivered,
                dropped,
                in_flight,
                conserved: generated == delivered + dropped + in_flight,
            },
        );
        let positions = self
            .nodes
            .keys()
            .filter_map(|id| self.position(*id).map(|p| (*id, p)))
            .collect();
        RunOutput {
            trace: self.trace,
            handler_wall: self.wall,
            handler_calls: self.calls,
            nodes: self.nodes.into_iter().map(|(id, s)| (id, s.node)).collect(),
            positions,
        }
    }
}

/// Breadth-first hop distance on the unit-disk graph.
pub fn hop_distance(
    pos: &BTreeMap<NodeId, Position>,
    range: f64,
    src: NodeId,
    dst: NodeId,
) -> Option<u32> {
    let mut dist = BTreeMap::from([(src, 0u32)]);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        if u == dst {
            return Some(dist[&u]);
        }
        for (&v, &pv) in pos {
            if !dist.contains_key(&v) && pos[&u].distance(pv) <= range {
                dist.insert(v, dist[&u] + 1);
                q.push_back(v);
            }
        }
    }
    None
}
