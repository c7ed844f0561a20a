//! Structured trace records.
//!
//! A trace is newline-delimited JSON, one [`TraceRecord`] per line. Every
//! metric in [`crate::metrics`] is recomputable from a trace alone.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::wire::{MessageKind, NodeId};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoRoute,
    LinkFailure,
    Ttl,
    Blackhole,
    QueueOverflow,
    NodeFailed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// No unexpired cache entry names the sending neighbor.
    NoCacheEntry,
    /// Entries exist for the neighbor but none matches destination and timestamp.
    Mismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscoveryPhase {
    Start,
    Retry,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStart {
        schema_version: u32,
        scenario: String,
        protocol: String,
        seed: u64,
        sim_time: f64,
        window: f64,
    },
    Send {
        frame: u64,
        kind: MessageKind,
        to: Option<NodeId>,
        net_sender: NodeId,
        forged: bool,
        len: usize,
    },
    Recv {
        frame: u64,
        kind: MessageKind,
        link_sender: NodeId,
        net_sender: NodeId,
    },
    DecodeError {
        frame: u64,
        error: String,
    },
    DataGenerated {
        flow: u32,
        seq: u32,
        dst: NodeId,
        bytes: u32,
    },
    DataDelivered {
        flow: u32,
        seq: u32,
        src: NodeId,
        sent_at: f64,
        bytes: u32,
    },
    DataDropped {
        flow: u32,
        seq: u32,
        reason: DropReason,
    },
    RouteWrite {
        dest: NodeId,
        next_hop: NodeId,
        hop_count: u32,
        seq: u32,
        cause: Option<u64>,
    },
    RouteInvalidated {
        dest: NodeId,
        seq: u32,
    },
    CacheInsert {
        nb: NodeId,
        d: NodeId,
        ts: f64,
        f: u8,
        ex: f64,
    },
    CacheHit {
        frame: u64,
        nb: NodeId,
        d: NodeId,
        ts: f64,
    },
    CacheMiss {
        frame: u64,
        nb: NodeId,
        d: NodeId,
        ts: f64,
    },
    CachePurge {
        removed: usize,
    },
    RrepDiscarded {
        frame: u64,
        reason: DiscardReason,
    },
    Handler {
        kind: MessageKind,
        ops: u64,
    },
    Discovery {
        dest: NodeId,
        phase: DiscoveryPhase,
        attempt: u32,
    },
    LinkFailure {
        neighbor: NodeId,
    },
    Snoop {
        flow: u32,
        seq: u32,
    },
    Swallow {
        flow: u32,
        seq: u32,
    },
    Attack {
        kind: String,
        outcome: String,
        detail: String,
    },
    NodeFailed,
    Warning {
        message: String,
    },
    RunEnd {
        generated: u64,
        delivered: u64,
        dropped: u64,
        in_flight: u64,
        conserved: bool,
    },
}

/// One trace line. `node` is 0 for engine-level records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub node: NodeId,
    #[serde(flatten)]
    pub event: TraceEvent,
}

pub fn write_jsonl<W: Write>(records: &[TraceRecord], mut w: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// SHA-256 over the serialized trace, hex encoded.
pub fn digest(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf).expect("writing to a Vec cannot fail");
    hex::encode(Sha256::digest(&buf))
}
