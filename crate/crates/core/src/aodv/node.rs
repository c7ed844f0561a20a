use std::collections::{BTreeMap, VecDeque};

use crate::aodvsec::{RreqAckCache, Validation};
use crate::trace::{DiscoveryPhase, DropReason, TraceEvent};
use crate::wire::{
    decode, DataPacket, Frame, Message, NodeId, RerrMessage, RrepMessage, RreqAckMessage,
    RreqMessage, Timestamp, Unreachable,
};

use super::route::{RouteCandidate, RouteEntry, RouteTable};
use super::{Protocol, ProtocolConstants};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timer {
    Discovery { dest: NodeId, attempt: u32 },
    Attack { index: usize },
}

/// A frame a node asks the radio to send. `to == None` is a broadcast.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub to: Option<NodeId>,
    pub net_sender: NodeId,
    pub msg: Message,
    pub forged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Send(Transmission),
    Schedule { at: Timestamp, timer: Timer },
    Trace(TraceEvent),
}

/// Everything a handler produced, in order.
#[derive(Debug, Default)]
pub struct Outbox {
    pub actions: Vec<Action>,
}

impl Outbox {
    pub fn new() -> Self {
        Outbox::default()
    }

    pub fn send(&mut self, tx: Transmission) {
        self.actions.push(Action::Send(tx));
    }

    pub fn schedule(&mut self, at: Timestamp, timer: Timer) {
        self.actions.push(Action::Schedule { at, timer });
    }

    pub fn trace(&mut self, ev: TraceEvent) {
        self.actions.push(Action::Trace(ev));
    }

    pub fn sends(&self) -> impl Iterator<Item = &Transmission> {
        self.actions.iter().filter_map(|a| match a {
            Action::Send(tx) => Some(tx),
            _ => None,
        })
    }

    pub fn traces(&self) -> impl Iterator<Item = &TraceEvent> {
        self.actions.iter().filter_map(|a| match a {
            Action::Trace(ev) => Some(ev),
            _ => None,
        })
    }

    pub fn clear(&mut self) {
        self.actions.clear();
    }
}

#[derive(Clone, Copy, Debug)]
struct Discovery {
    attempt: u32,
}

/// One routing node. Handlers take `(input, now)` and append their effects to
/// an [`Outbox`]; the node never touches the radio or the clock directly.
#[derive(Clone, Debug)]
pub struct AodvNode {
    id: NodeId,
    protocol: Protocol,
    constants: ProtocolConstants,
    seq_num: u32,
    broadcast_id: u32,
    routes: RouteTable,
    seen: BTreeMap<(NodeId, u32), Timestamp>,
    discoveries: BTreeMap<NodeId, Discovery>,
    queues: BTreeMap<NodeId, VecDeque<DataPacket>>,
    cache: RreqAckCache,
    ops: u64,
}

impl AodvNode {
    pub fn new(id: NodeId, protocol: Protocol, constants: ProtocolConstants) -> Self {
        let cache = RreqAckCache::new(constants.cache_capacity);
        AodvNode {
            id,
            protocol,
            constants,
            seq_num: 0,
            broadcast_id: 0,
            routes: RouteTable::new(),
            seen: BTreeMap::new(),
            discoveries: BTreeMap::new(),
            queues: BTreeMap::new(),
            cache,
            ops: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn constants(&self) -> &ProtocolConstants {
        &self.constants
    }

    pub fn seq_num(&self) -> u32 {
        self.seq_num
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    pub fn route(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.routes.get(dest)
    }

    pub fn cache(&self) -> &RreqAckCache {
        &self.cache
    }

    pub fn discovery_pending(&self, dest: NodeId) -> bool {
        self.discoveries.contains_key(&dest)
    }

    pub fn queued(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn has_seen(&self, originator: NodeId, broadcast_id: u32) -> bool {
        self.seen.contains_key(&(originator, broadcast_id))
    }

    /// Removes and returns every buffered data packet.
    pub fn drain_queues(&mut self) -> Vec<DataPacket> {
        std::mem::take(&mut self.queues)
            .into_values()
            .flatten()
            .collect()
    }

    fn secure(&self) -> bool {
        self.protocol == Protocol::AodvSec
    }

    fn unicast(&self, out: &mut Outbox, to: NodeId, msg: Message) {
        out.send(Transmission {
            to: Some(to),
            net_sender: self.id,
            msg,
            forged: false,
        });
    }

    fn broadcast(&self, out: &mut Outbox, msg: Message) {
        out.send(Transmission {
            to: None,
            net_sender: self.id,
            msg,
            forged: false,
        });
    }

    fn write_route(
        &mut self,
        cand: RouteCandidate,
        cause: u64,
        now: Timestamp,
        out: &mut Outbox,
    ) -> bool {
        self.ops += 2;
        let accepted = self
            .routes
            .update(cand, now, self.constants.active_route_timeout);
        if accepted {
            out.trace(TraceEvent::RouteWrite {
                dest: cand.destination,
                next_hop: cand.next_hop,
                hop_count: cand.hop_count,
                seq: cand.dest_seq,
                cause: Some(cause),
            });
        }
        accepted
    }

    /// Installs a route learned outside the normal message flow, such as by
    /// overhearing. Subject to the same freshness rule.
    pub fn learn_route(&mut self, cand: RouteCandidate, now: Timestamp, out: &mut Outbox) -> bool {
        let accepted = self
            .routes
            .update(cand, now, self.constants.active_route_timeout);
        if accepted {
            out.trace(TraceEvent::RouteWrite {
                dest: cand.destination,
                next_hop: cand.next_hop,
                hop_count: cand.hop_count,
                seq: cand.dest_seq,
                cause: None,
            });
        }
        accepted
    }

    /// Decodes raw bytes and dispatches them. Malformed input is traced and
    /// otherwise ignored.
    pub fn receive_bytes(
        &mut self,
        id: u64,
        link_sender: NodeId,
        net_sender: NodeId,
        bytes: &[u8],
        now: Timestamp,
        out: &mut Outbox,
    ) {
        match decode(bytes) {
            Ok(body) => {
                let frame = Frame {
                    id,
                    link_sender,
                    net_sender,
                    body,
                };
                self.handle_frame(&frame, now, out);
            }
            Err(e) => out.trace(TraceEvent::DecodeError {
                frame: id,
                error: e.to_string(),
            }),
        }
    }

    pub fn handle_frame(&mut self, frame: &Frame, now: Timestamp, out: &mut Outbox) {
        if let Message::Data(pkt) = &frame.body {
            self.handle_data(frame, pkt.clone(), now, out);
            return;
        }
        // one unit for parsing the message
        self.ops = 1;
        if self.secure() {
            self.ops += 1;
            let removed = self.cache.purge_expired(now);
            if removed > 0 {
                out.trace(TraceEvent::CachePurge { removed });
            }
        }
        let kind = frame.body.kind();
        match &frame.body {
            Message::Rreq(m) => self.handle_rreq(frame, m, now, out),
            Message::Rrep(m) => self.handle_rrep(frame, m, now, out),
            Message::Rerr(m) => self.handle_rerr(frame, m, now, out),
            Message::RreqAck(m) => self.recv_rreq_ack(m, now, out),
            Message::Data(_) => unreachable!(),
        }
        out.trace(TraceEvent::Handler {
            kind,
            ops: self.ops,
        });
    }

    // ---- route discovery -------------------------------------------------

    /// Starts a discovery for `dest` unless one is already pending.
    pub fn originate_discovery(&mut self, dest: NodeId, now: Timestamp, out: &mut Outbox) -> bool {
        if self.discoveries.contains_key(&dest) {
            return false;
        }
        self.discoveries.insert(dest, Discovery { attempt: 0 });
        out.trace(TraceEvent::Discovery {
            dest,
            phase: DiscoveryPhase::Start,
            attempt: 0,
        });
        self.send_rreq(dest, 0, now, out);
        true
    }

    fn send_rreq(&mut self, dest: NodeId, attempt: u32, now: Timestamp, out: &mut Outbox) {
        self.seq_num = self.seq_num.wrapping_add(1);
        self.broadcast_id = self.broadcast_id.wrapping_add(1);
        let (dest_seq, unknown_seq) = match self.routes.get(dest) {
            Some(e) if e.seq_valid => (e.dest_seq, false),
            _ => (0, true),
        };
        let rreq = RreqMessage {
            unknown_seq,
            ack: self.secure(),
            hop_count: 0,
            broadcast_id: self.broadcast_id,
            destination: dest,
            dest_seq,
            originator: self.id,
            orig_seq: self.seq_num,
            timestamp: now,
            previous_node: self.id,
            ..Default::default()
        };
        self.seen.insert((self.id, self.broadcast_id), now);
        self.broadcast(out, Message::Rreq(rreq));
        let wait = self.constants.net_traversal_time() * 2u32.pow(attempt.min(16));
        out.schedule(now + wait, Timer::Discovery { dest, attempt });
    }

    pub fn on_timer(&mut self, timer: Timer, now: Timestamp, out: &mut Outbox) {
        let Timer::Discovery { dest, attempt } = timer else {
            return;
        };
        match self.discoveries.get(&dest) {
            Some(d) if d.attempt == attempt => {}
            _ => return,
        }
        if self.routes.active(dest, now).is_some() {
            self.complete_discovery(dest, now, out);
            return;
        }
        if attempt < self.constants.rreq_retries {
            self.discoveries.insert(
                dest,
                Discovery {
                    attempt: attempt + 1,
                },
            );
            out.trace(TraceEvent::Discovery {
                dest,
                phase: DiscoveryPhase::Retry,
                attempt: attempt + 1,
            });
            self.send_rreq(dest, attempt + 1, now, out);
        } else {
            self.discoveries.remove(&dest);
            out.trace(TraceEvent::Discovery {
                dest,
                phase: DiscoveryPhase::Failed,
                attempt,
            });
            for pkt in self.queues.remove(&dest).unwrap_or_default() {
                drop_data(out, &pkt, DropReason::NoRoute);
            }
        }
    }

    fn complete_discovery(&mut self, dest: NodeId, now: Timestamp, out: &mut Outbox) {
        if let Some(d) = self.discoveries.remove(&dest) {
            out.trace(TraceEvent::Discovery {
                dest,
                phase: DiscoveryPhase::Complete,
                attempt: d.attempt,
            });
        }
        for pkt in self.queues.remove(&dest).unwrap_or_default() {
            self.forward_data(pkt, None, now, out);
        }
    }

    fn handle_rreq(&mut self, frame: &Frame, rreq: &RreqMessage, now: Timestamp, out: &mut Outbox) {
        let pdt = self.constants.path_discovery_time();
        self.seen.retain(|_, first| *first + pdt >= now);
        self.ops += 1;
        if self
            .seen
            .contains_key(&(rreq.originator, rreq.broadcast_id))
        {
            self.on_duplicate_rreq(frame, rreq, now, out);
            return;
        }
        self.seen.insert((rreq.originator, rreq.broadcast_id), now);

        if rreq.hop_count >= u8::MAX as u32 {
            return;
        }
        self.write_route(
            RouteCandidate {
                destination: rreq.originator,
                next_hop: frame.net_sender,
                hop_count: rreq.hop_count + 1,
                dest_seq: rreq.orig_seq,
            },
            frame.id,
            now,
            out,
        );

        self.ops += 1;
        if rreq.destination == self.id {
            self.seq_num = self.seq_num.max(rreq.dest_seq);
            let rrep = RrepMessage {
                ack: self.secure(),
                hop_count: 0,
                destination: self.id,
                dest_seq: self.seq_num,
                originator: rreq.originator,
                lifetime_ms: self.constants.my_route_timeout().as_millis() as u32,
                timestamp: rreq.timestamp,
                ..Default::default()
            };
            self.reply(frame, rreq, rrep, out);
            return;
        }

        let fresh = self
            .routes
            .active(rreq.destination, now)
            .filter(|e| e.seq_valid && (rreq.unknown_seq || e.dest_seq >= rreq.dest_seq))
            .cloned();
        if let (Some(e), false) = (fresh, rreq.dest_only) {
            let rrep = RrepMessage {
                ack: self.secure(),
                hop_count: e.hop_count,
                destination: rreq.destination,
                dest_seq: e.dest_seq,
                originator: rreq.originator,
                lifetime_ms: e.expiry.saturating_sub(now).to_duration().as_millis() as u32,
                timestamp: rreq.timestamp,
                ..Default::default()
            };
            self.routes
                .add_precursor(rreq.destination, frame.net_sender);
            self.routes.add_precursor(rreq.originator, e.next_hop);
            self.reply(frame, rreq, rrep, out);
            return;
        }

        if rreq.hop_count + 1 >= self.constants.net_diameter {
            return;
        }
        let mut fwd = rreq.clone();
        fwd.hop_count += 1;
        fwd.previous_node = frame.net_sender;
        self.ops += 1;
        self.broadcast(out, Message::Rreq(fwd));
    }

    /// A duplicate RREQ whose previous-node field names us proves that the
    /// sender re-flooded our copy, so it may later answer us with an RREP.
    pub fn on_duplicate_rreq(
        &mut self,
        frame: &Frame,
        rreq: &RreqMessage,
        now: Timestamp,
        out: &mut Outbox,
    ) {
        if !(self.secure() && rreq.ack) {
            return;
        }
        self.ops += 1;
        if rreq.previous_node != self.id {
            return;
        }
        self.ops += 1;
        let e = self.cache.insert(
            frame.net_sender,
            rreq.destination,
            rreq.timestamp,
            false,
            now,
            self.constants.path_discovery_time(),
        );
        out.trace(cache_insert_event(&e));
    }

    /// Answers an RREQ: RREQ-ACK first when the extension is in use, then the
    /// RREP, both to the neighbor the RREQ came from.
    fn reply(&mut self, frame: &Frame, rreq: &RreqMessage, rrep: RrepMessage, out: &mut Outbox) {
        if self.secure() && rreq.ack {
            self.send_rreq_ack(frame.net_sender, rreq, out);
        }
        self.ops += 1;
        self.unicast(out, frame.net_sender, Message::Rrep(rrep));
    }

    pub fn send_rreq_ack(&mut self, target: NodeId, rreq: &RreqMessage, out: &mut Outbox) {
        self.ops += 1;
        let ack = RreqAckMessage {
            own_address: self.id,
            destination: rreq.destination,
            timestamp: rreq.timestamp,
        };
        self.unicast(out, target, Message::RreqAck(ack));
    }

    pub fn recv_rreq_ack(&mut self, ack: &RreqAckMessage, now: Timestamp, out: &mut Outbox) {
        if !self.secure() {
            return;
        }
        self.ops += 1;
        let e = self.cache.insert(
            ack.own_address,
            ack.destination,
            ack.timestamp,
            true,
            now,
            self.constants.path_discovery_time(),
        );
        out.trace(cache_insert_event(&e));
    }

    /// Cache check applied to every RREP before it can touch the routing table.
    pub fn validate_rrep(
        &mut self,
        frame: &Frame,
        rrep: &RrepMessage,
        now: Timestamp,
        out: &mut Outbox,
    ) -> bool {
        self.ops += 1;
        let ts = rrep.timestamp.as_secs_f64();
        match self.cache.validate(frame.net_sender, rrep, now) {
            Validation::Accept(_) => {
                out.trace(TraceEvent::CacheHit {
                    frame: frame.id,
                    nb: frame.net_sender,
                    d: rrep.destination,
                    ts,
                });
                true
            }
            Validation::Discard(reason) => {
                out.trace(TraceEvent::CacheMiss {
                    frame: frame.id,
                    nb: frame.net_sender,
                    d: rrep.destination,
                    ts,
                });
                out.trace(TraceEvent::RrepDiscarded {
                    frame: frame.id,
                    reason,
                });
                false
            }
        }
    }

    fn handle_rrep(&mut self, frame: &Frame, rrep: &RrepMessage, now: Timestamp, out: &mut Outbox) {
        if self.secure() && !self.validate_rrep(frame, rrep, now, out) {
            return;
        }
        if rrep.hop_count >= u8::MAX as u32 {
            return;
        }
        let accepted = self.write_route(
            RouteCandidate {
                destination: rrep.destination,
                next_hop: frame.net_sender,
                hop_count: rrep.hop_count + 1,
                dest_seq: rrep.dest_seq,
            },
            frame.id,
            now,
            out,
        );
        if rrep.originator == self.id {
            if self.routes.active(rrep.destination, now).is_some() {
                self.complete_discovery(rrep.destination, now, out);
            }
            return;
        }
        if !accepted {
            return;
        }
        self.ops += 1;
        let Some(reverse) = self.routes.active(rrep.originator, now) else {
            return;
        };
        let upstream = reverse.next_hop;
        self.routes.add_precursor(rrep.destination, upstream);
        self.routes.add_precursor(rrep.originator, frame.net_sender);
        let art = self.constants.active_route_timeout;
        self.routes.refresh(rrep.originator, now, art);
        let mut fwd = rrep.clone();
        fwd.hop_count += 1;
        self.ops += 1;
        self.unicast(out, upstream, Message::Rrep(fwd));
    }

    // ---- route maintenance -----------------------------------------------

    fn handle_rerr(&mut self, frame: &Frame, rerr: &RerrMessage, now: Timestamp, out: &mut Outbox) {
        let mut lost = Vec::new();
        let mut notify = false;
        for u in &rerr.unreachable {
            self.ops += 1;
            let Some(e) = self.routes.active(u.destination, now) else {
                continue;
            };
            if e.next_hop != frame.net_sender {
                continue;
            }
            notify |= !e.precursors.is_empty();
            if let Some(seq) = self.routes.invalidate(u.destination, u.dest_seq, now) {
                out.trace(TraceEvent::RouteInvalidated {
                    dest: u.destination,
                    seq,
                });
                lost.push(Unreachable {
                    destination: u.destination,
                    dest_seq: seq,
                });
            }
        }
        if notify && !lost.is_empty() {
            self.ops += 1;
            self.broadcast(out, Message::Rerr(RerrMessage { unreachable: lost }));
        }
    }

    /// Invalidates every route through `neighbor` and tells precursors.
    fn break_link(&mut self, neighbor: NodeId, now: Timestamp, out: &mut Outbox) {
        let mut lost = Vec::new();
        let mut notify = false;
        for dest in self.routes.routes_via(neighbor, now) {
            let e = self.routes.get(dest).expect("listed route exists");
            notify |= !e.precursors.is_empty();
            let bumped = e.dest_seq.wrapping_add(1);
            if let Some(seq) = self.routes.invalidate(dest, bumped, now) {
                out.trace(TraceEvent::RouteInvalidated { dest, seq });
                lost.push(Unreachable {
                    destination: dest,
                    dest_seq: seq,
                });
            }
        }
        if notify && !lost.is_empty() {
            self.broadcast(out, Message::Rerr(RerrMessage { unreachable: lost }));
        }
    }

    /// Link-layer feedback: a unicast to `to` was never acknowledged.
    pub fn on_send_failure(&mut self, to: NodeId, msg: &Message, now: Timestamp, out: &mut Outbox) {
        out.trace(TraceEvent::LinkFailure { neighbor: to });
        self.break_link(to, now, out);
        if let Message::Data(pkt) = msg {
            if pkt.src == self.id {
                self.enqueue(pkt.clone(), now, out);
            } else {
                drop_data(out, pkt, DropReason::LinkFailure);
            }
        }
    }

    // ---- data plane --------------------------------------------------------

    /// Entry point for locally generated traffic.
    pub fn originate_data(&mut self, pkt: DataPacket, now: Timestamp, out: &mut Outbox) {
        out.trace(TraceEvent::DataGenerated {
            flow: pkt.flow_id,
            seq: pkt.seq,
            dst: pkt.dst,
            bytes: pkt.payload_len,
        });
        if pkt.dst == self.id {
            deliver(out, &pkt);
            return;
        }
        self.forward_data(pkt, None, now, out);
    }

    fn handle_data(
        &mut self,
        frame: &Frame,
        mut pkt: DataPacket,
        now: Timestamp,
        out: &mut Outbox,
    ) {
        if pkt.dst == self.id {
            deliver(out, &pkt);
            return;
        }
        pkt.ttl = pkt.ttl.saturating_sub(1);
        if pkt.ttl == 0 {
            drop_data(out, &pkt, DropReason::Ttl);
            return;
        }
        self.forward_data(pkt, Some(frame.net_sender), now, out);
    }

    /// Sends `pkt` along an active route, buffers it at its source while a
    /// route is discovered, or drops it and reports the broken route.
    pub fn forward_data(
        &mut self,
        pkt: DataPacket,
        prev_hop: Option<NodeId>,
        now: Timestamp,
        out: &mut Outbox,
    ) {
        let art = self.constants.active_route_timeout;
        if let Some(e) = self.routes.active(pkt.dst, now) {
            let next = e.next_hop;
            self.routes.refresh(pkt.dst, now, art);
            if let Some(prev) = prev_hop {
                self.routes.add_precursor(pkt.dst, prev);
                self.routes.refresh(pkt.src, now, art);
            }
            self.unicast(out, next, Message::Data(pkt));
            return;
        }
        if pkt.src == self.id {
            self.enqueue(pkt, now, out);
            return;
        }
        let seq = self.routes.get(pkt.dst).map(|e| e.dest_seq).unwrap_or(0);
        let dst = pkt.dst;
        drop_data(out, &pkt, DropReason::NoRoute);
        self.broadcast(
            out,
            Message::Rerr(RerrMessage {
                unreachable: vec![Unreachable {
                    destination: dst,
                    dest_seq: seq,
                }],
            }),
        );
    }

    fn enqueue(&mut self, pkt: DataPacket, now: Timestamp, out: &mut Outbox) {
        let dst = pkt.dst;
        let queue = self.queues.entry(dst).or_default();
        if queue.len() >= self.constants.queue_limit {
            drop_data(out, &pkt, DropReason::QueueOverflow);
        } else {
            queue.push_back(pkt);
        }
        self.originate_discovery(dst, now, out);
    }
}

fn cache_insert_event(e: &crate::aodvsec::RreqAckCacheEntry) -> TraceEvent {
    TraceEvent::CacheInsert {
        nb: e.nb,
        d: e.d,
        ts: e.t.as_secs_f64(),
        f: e.f as u8,
        ex: e.ex.as_secs_f64(),
    }
}

fn deliver(out: &mut Outbox, pkt: &DataPacket) {
    out.trace(TraceEvent::DataDelivered {
        flow: pkt.flow_id,
        seq: pkt.seq,
        src: pkt.src,
        sent_at: pkt.sent_at.as_secs_f64(),
        bytes: pkt.payload_len,
    });
}

pub(crate) fn drop_data(out: &mut Outbox, pkt: &DataPacket, reason: DropReason) {
    out.trace(TraceEvent::DataDropped {
        flow: pkt.flow_id,
        seq: pkt.seq,
        reason,
    });
}
