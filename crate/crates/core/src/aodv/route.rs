use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use crate::wire::{NodeId, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteState {
    Valid,
    Invalid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteEntry {
    pub destination: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
    pub seq_valid: bool,
    pub expiry: Timestamp,
    pub state: RouteState,
    /// Neighbors that forward traffic through this route; they get our RERRs.
    pub precursors: BTreeSet<NodeId>,
}

impl RouteEntry {
    pub fn is_active(&self, now: Timestamp) -> bool {
        self.state == RouteState::Valid && now <= self.expiry
    }
}

/// A route offered by a received RREQ or RREP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteCandidate {
    pub destination: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
}

/// The freshness rule. An active entry is replaced only by a strictly newer
/// sequence number, or the same sequence number with fewer hops. An inactive
/// entry is replaced by anything at least as fresh, so sequence numbers never
/// go backwards.
pub fn should_replace(
    existing: Option<&RouteEntry>,
    cand: &RouteCandidate,
    now: Timestamp,
) -> bool {
    match existing {
        None => true,
        Some(e) if !e.seq_valid => true,
        Some(e) if !e.is_active(now) => cand.dest_seq >= e.dest_seq,
        Some(e) => {
            cand.dest_seq > e.dest_seq
                || (cand.dest_seq == e.dest_seq && cand.hop_count < e.hop_count)
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RouteTable {
    entries: BTreeMap<NodeId, RouteEntry>,
}

impl RouteTable {
    pub fn new() -> Self {
        RouteTable::default()
    }

    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    pub fn get_mut(&mut self, dest: NodeId) -> Option<&mut RouteEntry> {
        self.entries.get_mut(&dest)
    }

    pub fn active(&self, dest: NodeId, now: Timestamp) -> Option<&RouteEntry> {
        self.entries.get(&dest).filter(|e| e.is_active(now))
    }

    pub fn iter(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies the freshness rule; on acceptance the entry is (re)written as
    /// valid with `expiry = now + lifetime`. Precursors survive replacement.
    pub fn update(&mut self, cand: RouteCandidate, now: Timestamp, lifetime: Duration) -> bool {
        if !should_replace(self.entries.get(&cand.destination), &cand, now) {
            return false;
        }
        let precursors = self
            .entries
            .remove(&cand.destination)
            .map(|e| e.precursors)
            .unwrap_or_default();
        self.entries.insert(
            cand.destination,
            RouteEntry {
                destination: cand.destination,
                next_hop: cand.next_hop,
                hop_count: cand.hop_count,
                dest_seq: cand.dest_seq,
                seq_valid: true,
                expiry: now + lifetime,
                state: RouteState::Valid,
                precursors,
            },
        );
        true
    }

    /// Pushes the expiry of an active route out to at least `now + lifetime`.
    pub fn refresh(&mut self, dest: NodeId, now: Timestamp, lifetime: Duration) {
        if let Some(e) = self.entries.get_mut(&dest) {
            if e.is_active(now) {
                e.expiry = e.expiry.max(now + lifetime);
            }
        }
    }

    pub fn add_precursor(&mut self, dest: NodeId, precursor: NodeId) {
        if let Some(e) = self.entries.get_mut(&dest) {
            e.precursors.insert(precursor);
        }
    }

    /// Marks a route invalid and bumps its sequence number to at least
    /// `min_seq`. Returns the new sequence number if the route was active.
    pub fn invalidate(&mut self, dest: NodeId, min_seq: u32, now: Timestamp) -> Option<u32> {
        let e = self.entries.get_mut(&dest)?;
        if !e.is_active(now) {
            return None;
        }
        e.state = RouteState::Invalid;
        e.dest_seq = e.dest_seq.max(min_seq);
        Some(e.dest_seq)
    }

    /// Active destinations currently routed through `neighbor`.
    pub fn routes_via(&self, neighbor: NodeId, now: Timestamp) -> Vec<NodeId> {
        self.entries
            .values()
            .filter(|e| e.is_active(now) && e.next_hop == neighbor)
            .map(|e| e.destination)
            .collect()
    }
}
