//! RREQ-ACK cache and RREP validation.
//!
//! A node running the extension records, for every route discovery it
//! witnesses, which neighbors are entitled to send it an RREP for that
//! discovery. Entitlement comes from two sources:
//!
//! * a duplicate RREQ whose previous-node field names this node, meaning the
//!   neighbor accepted and re-flooded our copy (`f = 0`);
//! * an RREQ-ACK, sent by a neighbor that answers the RREQ instead of
//!   re-flooding it (`f = 1`).
//!
//! An incoming RREP is accepted only if an unexpired entry matches its
//! network-layer sender, destination and RREQ timestamp exactly. Entries live
//! for `PATH_DISCOVERY_TIME` from insertion.
//!
//! The handlers that drive the cache live on [`crate::aodv::AodvNode`]
//! (`on_duplicate_rreq`, `recv_rreq_ack`, `validate_rrep`); this module holds
//! the data structure and the matching rule.

use std::collections::BTreeMap;
use std::time::Duration;

use crate::trace::DiscardReason;
use crate::wire::{NodeId, RrepMessage, Timestamp};

pub const DEFAULT_CACHE_CAPACITY: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RreqAckCacheEntry {
    pub nb: NodeId,
    pub d: NodeId,
    pub t: Timestamp,
    /// `true` when the entry came from an RREQ-ACK, `false` for a duplicate RREQ.
    pub f: bool,
    pub ex: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Validation {
    Accept(RreqAckCacheEntry),
    Discard(DiscardReason),
}

type Key = (NodeId, NodeId, Timestamp);

#[derive(Clone, Debug)]
pub struct RreqAckCache {
    entries: BTreeMap<Key, RreqAckCacheEntry>,
    capacity: usize,
}

impl Default for RreqAckCache {
    fn default() -> Self {
        RreqAckCache::new(DEFAULT_CACHE_CAPACITY)
    }
}

impl RreqAckCache {
    pub fn new(capacity: usize) -> Self {
        RreqAckCache {
            entries: BTreeMap::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RreqAckCacheEntry> {
        self.entries.values()
    }

    pub fn get(&self, nb: NodeId, d: NodeId, t: Timestamp) -> Option<&RreqAckCacheEntry> {
        self.entries.get(&(nb, d, t))
    }

    /// Inserts or refreshes the entry for `(nb, d, t)` with
    /// `ex = now + path_discovery_time`. A full cache evicts the entry with
    /// the earliest expiry.
    pub fn insert(
        &mut self,
        nb: NodeId,
        d: NodeId,
        t: Timestamp,
        f: bool,
        now: Timestamp,
        path_discovery_time: Duration,
    ) -> RreqAckCacheEntry {
        let key = (nb, d, t);
        let entry = RreqAckCacheEntry {
            nb,
            d,
            t,
            f,
            ex: now + path_discovery_time,
        };
        if !self.entries.contains_key(&key) && self.entries.len() >= self.capacity {
            let oldest = self
                .entries
                .iter()
                .min_by_key(|(k, e)| (e.ex, **k))
                .map(|(k, _)| *k);
            if let Some(k) = oldest {
                self.entries.remove(&k);
            }
        }
        self.entries.insert(key, entry);
        entry
    }

    /// Drops every entry with `ex < now`. An entry is still valid at exactly
    /// `now == ex`.
    pub fn purge_expired(&mut self, now: Timestamp) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| e.ex >= now);
        before - self.entries.len()
    }

    /// Matches an RREP received from `net_sender` against the cache. Never
    /// mutates the cache.
    pub fn validate(&self, net_sender: NodeId, rrep: &RrepMessage, now: Timestamp) -> Validation {
        match self
            .entries
            .get(&(net_sender, rrep.destination, rrep.timestamp))
        {
            Some(e) if now <= e.ex => Validation::Accept(*e),
            _ => {
                let lo = (net_sender, NodeId(0), Timestamp::ZERO);
                let hi = (net_sender, NodeId(u32::MAX), Timestamp::MAX);
                let any_for_sender = self.entries.range(lo..=hi).any(|(_, e)| now <= e.ex);
                if any_for_sender {
                    Validation::Discard(DiscardReason::Mismatch)
                } else {
                    Validation::Discard(DiscardReason::NoCacheEntry)
                }
            }
        }
    }
}
