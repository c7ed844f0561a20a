//! Insider attackers. An attacker is an ordinary node that, from its start
//! time on, also forges RREPs. It can lie about the network-layer sender of a
//! frame but never about the link-layer sender, which the radio fills in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aodv::{AodvNode, Outbox, RouteCandidate, Timer, Transmission};
use crate::trace::{DropReason, TraceEvent};
use crate::wire::{Frame, Message, NodeId, RrepMessage, Timestamp};

pub const DEFAULT_BH_DELTA: u32 = 100;

/// How often a route invader re-checks for its own route before giving up.
const RI_ROUTE_WAIT: Duration = Duration::from_millis(500);
const RI_MAX_WAITS: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "RC")]
    ResourceConsumption,
    #[serde(rename = "RD")]
    RouteDisturb,
    #[serde(rename = "RI")]
    RouteInvasion,
    #[serde(rename = "BH")]
    Blackhole,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::ResourceConsumption => "RC",
            AttackKind::RouteDisturb => "RD",
            AttackKind::RouteInvasion => "RI",
            AttackKind::Blackhole => "BH",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rc" => Ok(AttackKind::ResourceConsumption),
            "rd" => Ok(AttackKind::RouteDisturb),
            "ri" => Ok(AttackKind::RouteInvasion),
            "bh" => Ok(AttackKind::Blackhole),
            other => Err(format!(
                "unknown attack `{other}` (expected rc, rd, ri or bh)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub attacker: NodeId,
    pub kind: AttackKind,
    pub start: Timestamp,
    /// `(src, dst)` of the flow under attack.
    pub target: (NodeId, NodeId),
    pub repeat: Option<Duration>,
    /// Pinned victims. RC takes two (X, Y), RD one. Empty means pick from
    /// the observed path.
    pub victims: Vec<NodeId>,
    pub delta: u32,
}

/// The victim route as far as the attacker has seen it, source first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PathKnowledge {
    pub nodes: Vec<NodeId>,
}

impl PathKnowledge {
    /// Nodes strictly between the source and the destination.
    pub fn interior(&self, dst: NodeId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .skip(1)
            .copied()
            .filter(|n| *n != dst)
            .collect()
    }
}

/// Everything an attacker learned from frames it sent, received or overheard.
#[derive(Clone, Debug, Default)]
pub struct Observations {
    hops: BTreeMap<(NodeId, NodeId), BTreeMap<NodeId, NodeId>>,
    max_seq: BTreeMap<NodeId, u32>,
    last_rreq_ts: BTreeMap<NodeId, Timestamp>,
}

impl Observations {
    pub fn observe(&mut self, link_sender: NodeId, link_dest: Option<NodeId>, msg: &Message) {
        match msg {
            Message::Data(p) => {
                if let Some(to) = link_dest {
                    self.hops
                        .entry((p.src, p.dst))
                        .or_default()
                        .insert(link_sender, to);
                }
            }
            Message::Rreq(r) => {
                if !r.unknown_seq {
                    self.bump_seq(r.destination, r.dest_seq);
                }
                self.last_rreq_ts.insert(r.destination, r.timestamp);
            }
            Message::Rrep(r) => self.bump_seq(r.destination, r.dest_seq),
            Message::Rerr(e) => {
                for u in &e.unreachable {
                    self.bump_seq(u.destination, u.dest_seq);
                }
            }
            Message::RreqAck(_) => {}
        }
    }

    fn bump_seq(&mut self, dest: NodeId, seq: u32) {
        let e = self.max_seq.entry(dest).or_insert(seq);
        *e = (*e).max(seq);
    }

    /// Walks observed data hops from `src`. Stops at `dst`, at a gap, or at
    /// a repeated node.
    pub fn path(&self, src: NodeId, dst: NodeId) -> PathKnowledge {
        let mut nodes = vec![src];
        if let Some(hops) = self.hops.get(&(src, dst)) {
            let mut seen = BTreeSet::from([src]);
            let mut cur = src;
            while let Some(&next) = hops.get(&cur) {
                if !seen.insert(next) {
                    break;
                }
                nodes.push(next);
                if next == dst {
                    break;
                }
                cur = next;
            }
        }
        PathKnowledge { nodes }
    }

    /// Observed data hops of a flow, those on the walk from `src` first and
    /// in path order.
    pub fn hops(&self, src: NodeId, dst: NodeId) -> Vec<(NodeId, NodeId)> {
        let Some(map) = self.hops.get(&(src, dst)) else {
            return Vec::new();
        };
        let walk = self.path(src, dst).nodes;
        let mut out: Vec<(NodeId, NodeId)> = walk.windows(2).map(|w| (w[0], w[1])).collect();
        for (a, b) in map {
            if !out.contains(&(*a, *b)) {
                out.push((*a, *b));
            }
        }
        out
    }

    /// Best known sequence number for `dest`, falling back to the attacker's
    /// own table.
    pub fn seq_for(&self, dest: NodeId, own: Option<u32>) -> u32 {
        match (self.max_seq.get(&dest).copied(), own) {
            (Some(a), Some(b)) => a.max(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => 0,
        }
    }

    pub fn last_rreq_timestamp(&self, dest: NodeId) -> Timestamp {
        self.last_rreq_ts
            .get(&dest)
            .copied()
            .unwrap_or(Timestamp::ZERO)
    }
}

/// Identity used by route disturb; never assigned to a real node.
pub fn phantom_id(attacker: NodeId) -> NodeId {
    NodeId(0xFFFF_0000 | (attacker.0 & 0xFFFF))
}

#[derive(Clone, Debug)]
pub struct Attacker {
    id: NodeId,
    specs: Vec<AttackSpec>,
    obs: Observations,
    blackhole: Option<u32>,
    bh_seen: BTreeSet<(NodeId, u32)>,
    ri_waits: BTreeMap<usize, u32>,
}

impl Attacker {
    pub fn new(id: NodeId, specs: Vec<AttackSpec>) -> Self {
        Attacker {
            id,
            specs,
            obs: Observations::default(),
            blackhole: None,
            bh_seen: BTreeSet::new(),
            ri_waits: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn specs(&self) -> &[AttackSpec] {
        &self.specs
    }

    pub fn observations(&self) -> &Observations {
        &self.obs
    }

    pub fn observe(&mut self, link_sender: NodeId, link_dest: Option<NodeId>, msg: &Message) {
        self.obs.observe(link_sender, link_dest, msg);
    }

    /// Receive path. Honest processing unless an active blackhole claims the
    /// frame.
    pub fn handle_frame(
        &mut self,
        node: &mut AodvNode,
        frame: &Frame,
        now: Timestamp,
        out: &mut Outbox,
    ) {
        if let Some(delta) = self.blackhole {
            match &frame.body {
                Message::Rreq(r) => {
                    let fresh = self.bh_seen.insert((r.originator, r.broadcast_id));
                    if fresh && r.originator != self.id && r.destination != self.id {
                        let rrep = RrepMessage {
                            hop_count: 1,
                            destination: r.destination,
                            dest_seq: r.dest_seq.wrapping_add(delta),
                            originator: r.originator,
                            lifetime_ms: lifetime_ms(node),
                            timestamp: r.timestamp,
                            ..Default::default()
                        };
                        self.forge(out, frame.net_sender, self.id, rrep);
                    }
                    return;
                }
                Message::Data(p) if p.dst != self.id => {
                    out.trace(TraceEvent::Swallow {
                        flow: p.flow_id,
                        seq: p.seq,
                    });
                    out.trace(TraceEvent::DataDropped {
                        flow: p.flow_id,
                        seq: p.seq,
                        reason: DropReason::Blackhole,
                    });
                    return;
                }
                _ => {}
            }
        }
        if let Message::Data(p) = &frame.body {
            if p.dst != self.id {
                out.trace(TraceEvent::Snoop {
                    flow: p.flow_id,
                    seq: p.seq,
                });
            }
        }
        node.handle_frame(frame, now, out);
    }

    /// Fires attack `index`. `in_range` answers whether a node is currently a
    /// radio neighbor of the attacker.
    pub fn launch(
        &mut self,
        index: usize,
        node: &mut AodvNode,
        now: Timestamp,
        in_range: &dyn Fn(NodeId) -> bool,
        out: &mut Outbox,
    ) {
        let Some(spec) = self.specs.get(index).cloned() else {
            return;
        };
        match spec.kind {
            AttackKind::ResourceConsumption => self.launch_rc(&spec, node, in_range, out),
            AttackKind::RouteDisturb => {
                self.launch_rd(&spec, node, in_range, out);
                if let Some(every) = spec.repeat {
                    out.schedule(now + every, Timer::Attack { index });
                }
            }
            AttackKind::RouteInvasion => self.launch_ri(index, &spec, node, now, in_range, out),
            AttackKind::Blackhole => {
                self.blackhole = Some(spec.delta);
                report(out, &spec, "launched", format!("delta={}", spec.delta));
            }
        }
    }

    fn seq(&self, node: &AodvNode, dst: NodeId) -> u32 {
        let own = node.route(dst).map(|e| e.dest_seq);
        self.obs.seq_for(dst, own)
    }

    fn forge(&self, out: &mut Outbox, to: NodeId, claimed: NodeId, rrep: RrepMessage) {
        out.send(Transmission {
            to: Some(to),
            net_sender: claimed,
            msg: Message::Rrep(rrep),
            forged: true,
        });
    }

    fn fake_rrep(&self, node: &AodvNode, spec: &AttackSpec, seq: u32) -> RrepMessage {
        let (src, dst) = spec.target;
        RrepMessage {
            hop_count: 1,
            destination: dst,
            dest_seq: seq,
            originator: src,
            lifetime_ms: lifetime_ms(node),
            timestamp: self.obs.last_rreq_timestamp(dst),
            ..Default::default()
        }
    }

    fn launch_rc(
        &mut self,
        spec: &AttackSpec,
        node: &AodvNode,
        in_range: &dyn Fn(NodeId) -> bool,
        out: &mut Outbox,
    ) {
        let (src, dst) = spec.target;
        let pair = match spec.victims.as_slice() {
            [x, y] => Some((*x, *y)),
            _ => self.obs.hops(src, dst).into_iter().find(|(a, b)| {
                ![src, dst].contains(a) && ![src, dst].contains(b) && in_range(*a) && in_range(*b)
            }),
        };
        let Some((x, y)) = pair.filter(|(x, y)| in_range(*x) && in_range(*y)) else {
            report(out, spec, "infeasible", "no two in-range path nodes".into());
            return;
        };
        let s = self.seq(node, dst);
        // X is told Y is one hop from dst; Y is told the same about X, with
        // a fresher number so Y prefers it over what X forwards.
        self.forge(out, x, y, self.fake_rrep(node, spec, s.wrapping_add(1)));
        self.forge(out, y, x, self.fake_rrep(node, spec, s.wrapping_add(2)));
        report(
            out,
            spec,
            "launched",
            format!("x={} y={} seq={}", x.0, y.0, s),
        );
    }

    fn launch_rd(
        &mut self,
        spec: &AttackSpec,
        node: &AodvNode,
        in_range: &dyn Fn(NodeId) -> bool,
        out: &mut Outbox,
    ) {
        let (src, dst) = spec.target;
        let victim = match spec.victims.first() {
            Some(v) => Some(*v),
            None => self
                .obs
                .hops(src, dst)
                .into_iter()
                .map(|(a, _)| a)
                .find(|a| *a != src && *a != dst && in_range(*a)),
        };
        let Some(victim) = victim.filter(|v| in_range(*v)) else {
            report(out, spec, "infeasible", "no in-range path node".into());
            return;
        };
        let s = self.seq(node, dst);
        let phantom = phantom_id(self.id);
        self.forge(
            out,
            victim,
            phantom,
            self.fake_rrep(node, spec, s.wrapping_add(1)),
        );
        report(
            out,
            spec,
            "launched",
            format!("victim={} phantom={} seq={}", victim.0, phantom.0, s),
        );
    }

    fn launch_ri(
        &mut self,
        index: usize,
        spec: &AttackSpec,
        node: &mut AodvNode,
        now: Timestamp,
        in_range: &dyn Fn(NodeId) -> bool,
        out: &mut Outbox,
    ) {
        let (src, dst) = spec.target;
        if !in_range(src) {
            report(out, spec, "infeasible", "source out of range".into());
            return;
        }
        if node.routes().active(dst, now).is_none()
            && !self.adopt_overheard_route(spec, node, now, in_range, out)
        {
            let waits = self.ri_waits.entry(index).or_insert(0);
            if *waits >= RI_MAX_WAITS {
                report(out, spec, "infeasible", "no route to destination".into());
                return;
            }
            *waits += 1;
            node.originate_discovery(dst, now, out);
            out.schedule(now + RI_ROUTE_WAIT, Timer::Attack { index });
            return;
        }
        let s = self.seq(node, dst);
        self.forge(
            out,
            src,
            self.id,
            self.fake_rrep(node, spec, s.wrapping_add(1)),
        );
        report(out, spec, "launched", format!("seq={s}"));
    }
}

impl Attacker {
    /// Routes to the flow destination through the relay the source is seen
    /// forwarding to, when that relay is a neighbor.
    fn adopt_overheard_route(
        &self,
        spec: &AttackSpec,
        node: &mut AodvNode,
        now: Timestamp,
        in_range: &dyn Fn(NodeId) -> bool,
        out: &mut Outbox,
    ) -> bool {
        let (src, dst) = spec.target;
        let path = self.obs.path(src, dst).nodes;
        let Some(&relay) = path.get(1) else {
            return false;
        };
        if relay == self.id || !in_range(relay) {
            return false;
        }
        let hop_count = if path.last() == Some(&dst) {
            path.len() as u32 - 1
        } else {
            path.len() as u32
        };
        let cand = RouteCandidate {
            destination: dst,
            next_hop: relay,
            hop_count,
            dest_seq: self.seq(node, dst),
        };
        node.learn_route(cand, now, out)
    }
}

fn lifetime_ms(node: &AodvNode) -> u32 {
    node.constants().active_route_timeout.as_millis() as u32
}

fn report(out: &mut Outbox, spec: &AttackSpec, outcome: &str, detail: String) {
    out.trace(TraceEvent::Attack {
        kind: spec.kind.as_str().to_string(),
        outcome: outcome.to_string(),
        detail,
    });
}
