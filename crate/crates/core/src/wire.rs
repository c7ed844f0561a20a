//! Packet types and their binary encodings.
//!
//! Layouts follow the AODV conventions (8-bit hop counts, 32-bit addresses and
//! sequence numbers, big-endian) extended with the RREQ-ACK machinery:
//!
//! ```text
//! RREQ      (36 bytes)  type=1 | J R G D U A rsv(2) | rsv(8) | hop count
//!                       broadcast id | destination | destination seq
//!                       originator | originator seq | timestamp (8) | previous node
//! RREP      (28 bytes)  type=2 | R A rsv(9) prefix(5) | hop count
//!                       destination | destination seq | originator | lifetime (ms)
//!                       timestamp (8)
//! RERR      (4 + 8n)    type=3 | rsv(16) | count | (destination, seq) * count
//! RREQ-ACK  (20 bytes)  type=5 | rsv(24) | own address | destination | timestamp (8)
//! DATA      (32 bytes)  type=16 | rsv(16) | ttl | flow | seq | src | dst
//!                       payload length | sent at (8)
//! ```
//!
//! Timestamps travel as unsigned 32.32 fixed-point seconds.

use std::fmt;
use std::ops::Add;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TYPE_RREQ: u8 = 1;
pub const TYPE_RREP: u8 = 2;
pub const TYPE_RERR: u8 = 3;
pub const TYPE_RREQ_ACK: u8 = 5;
pub const TYPE_DATA: u8 = 16;

pub const RREQ_LEN: usize = 36;
pub const RREP_LEN: usize = 28;
pub const RREQ_ACK_LEN: usize = 20;
pub const DATA_LEN: usize = 32;
pub const RERR_HEADER_LEN: usize = 4;
pub const RERR_ENTRY_LEN: usize = 8;

/// A node address. Stands in for an IPv4 address; `0` means "unspecified".
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const UNSPECIFIED: NodeId = NodeId(0);

    pub fn is_unspecified(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

const FRAC_ONE: u128 = 1 << 32;
const NANOS_PER_SEC: u128 = 1_000_000_000;

/// Simulation time in unsigned 32.32 fixed-point seconds.
///
/// The same representation is used on the wire, so a timestamp copied out of
/// a received message compares exactly equal to the one that was sent.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);
    pub const MAX: Timestamp = Timestamp(u64::MAX);

    pub const fn from_raw(raw: u64) -> Self {
        Timestamp(raw)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    /// Rounds to the nearest representable instant. Negative and NaN inputs
    /// clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        if secs.is_nan() || secs <= 0.0 {
            return Timestamp::ZERO;
        }
        let ticks = (secs * FRAC_ONE as f64).round();
        if ticks >= u64::MAX as f64 {
            Timestamp::MAX
        } else {
            Timestamp(ticks as u64)
        }
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / FRAC_ONE as f64
    }

    pub fn from_duration(d: Duration) -> Self {
        let ticks = (d.as_nanos() * FRAC_ONE + NANOS_PER_SEC / 2) / NANOS_PER_SEC;
        Timestamp(u64::try_from(ticks).unwrap_or(u64::MAX))
    }

    pub fn to_duration(self) -> Duration {
        let nanos = (self.0 as u128 * NANOS_PER_SEC + FRAC_ONE / 2) / FRAC_ONE;
        Duration::from_nanos(nanos as u64)
    }

    pub fn saturating_sub(self, other: Timestamp) -> Timestamp {
        Timestamp(self.0.saturating_sub(other.0))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(Timestamp::from_duration(rhs).0))
    }
}

impl Add<Timestamp> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Timestamp) -> Timestamp {
        Timestamp(self.0.saturating_add(rhs.0))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.as_secs_f64())
    }
}

/// Route request, with the acknowledgement flag, timestamp and previous-node
/// fields used by the RREQ-ACK cache.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RreqMessage {
    pub join: bool,
    pub repair: bool,
    pub gratuitous: bool,
    pub dest_only: bool,
    pub unknown_seq: bool,
    /// Set when the originator runs the cache-validating extension.
    pub ack: bool,
    pub hop_count: u32,
    pub broadcast_id: u32,
    pub destination: NodeId,
    pub dest_seq: u32,
    pub originator: NodeId,
    pub orig_seq: u32,
    pub timestamp: Timestamp,
    /// Node this copy was received from before re-flooding.
    pub previous_node: NodeId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RrepMessage {
    pub repair: bool,
    pub ack: bool,
    pub prefix_size: u8,
    pub hop_count: u32,
    pub destination: NodeId,
    pub dest_seq: u32,
    pub originator: NodeId,
    pub lifetime_ms: u32,
    /// Copied from the RREQ that triggered this reply.
    pub timestamp: Timestamp,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RreqAckMessage {
    pub own_address: NodeId,
    pub destination: NodeId,
    pub timestamp: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Unreachable {
    pub destination: NodeId,
    pub dest_seq: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RerrMessage {
    pub unreachable: Vec<Unreachable>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataPacket {
    pub flow_id: u32,
    pub seq: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload_len: u32,
    pub sent_at: Timestamp,
    pub ttl: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Rreq(RreqMessage),
    Rrep(RrepMessage),
    Rerr(RerrMessage),
    RreqAck(RreqAckMessage),
    Data(DataPacket),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum MessageKind {
    Rreq,
    Rrep,
    Rerr,
    RreqAck,
    Data,
}

impl MessageKind {
    pub fn is_control(self) -> bool {
        !matches!(self, MessageKind::Data)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Rreq => "RREQ",
            MessageKind::Rrep => "RREP",
            MessageKind::Rerr => "RERR",
            MessageKind::RreqAck => "RREQ-ACK",
            MessageKind::Data => "DATA",
        }
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Rreq(_) => MessageKind::Rreq,
            Message::Rrep(_) => MessageKind::Rrep,
            Message::Rerr(_) => MessageKind::Rerr,
            Message::RreqAck(_) => MessageKind::RreqAck,
            Message::Data(_) => MessageKind::Data,
        }
    }
}

/// A received or transmitted packet together with its two sender identities.
///
/// `link_sender` is filled in by the radio and cannot be forged;
/// `net_sender` is the network-layer source and can be.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub id: u64,
    pub link_sender: NodeId,
    pub net_sender: NodeId,
    pub body: Message,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{field} value {value} does not fit in {bits} bits")]
    Overflow {
        field: &'static str,
        value: u64,
        bits: u32,
    },
    #[error("RERR must list at least one unreachable destination")]
    EmptyRerr,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated buffer: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("nonzero reserved bits in byte {offset}")]
    ReservedBits { offset: usize },
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("RERR with zero destinations")]
    EmptyRerr,
}

fn check_width(field: &'static str, value: u64, bits: u32) -> Result<(), EncodeError> {
    if bits < 64 && value >> bits != 0 {
        return Err(EncodeError::Overflow { field, value, bits });
    }
    Ok(())
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_be_bytes());
}

fn put_ts(buf: &mut Vec<u8>, t: Timestamp) {
    buf.extend_from_slice(&t.raw().to_be_bytes());
}

/// Serializes a message. Fails if any field exceeds its on-wire width.
pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let mut buf = Vec::with_capacity(RREQ_LEN);
    match msg {
        Message::Rreq(m) => {
            check_width("hop_count", m.hop_count as u64, 8)?;
            let flags = (m.join as u8) << 7
                | (m.repair as u8) << 6
                | (m.gratuitous as u8) << 5
                | (m.dest_only as u8) << 4
                | (m.unknown_seq as u8) << 3
                | (m.ack as u8) << 2;
            buf.extend_from_slice(&[TYPE_RREQ, flags, 0, m.hop_count as u8]);
            put_u32(&mut buf, m.broadcast_id);
            put_u32(&mut buf, m.destination.0);
            put_u32(&mut buf, m.dest_seq);
            put_u32(&mut buf, m.originator.0);
            put_u32(&mut buf, m.orig_seq);
            put_ts(&mut buf, m.timestamp);
            put_u32(&mut buf, m.previous_node.0);
        }
        Message::Rrep(m) => {
            check_width("hop_count", m.hop_count as u64, 8)?;
            check_width("prefix_size", m.prefix_size as u64, 5)?;
            let flags = (m.repair as u8) << 7 | (m.ack as u8) << 6;
            buf.extend_from_slice(&[TYPE_RREP, flags, m.prefix_size, m.hop_count as u8]);
            put_u32(&mut buf, m.destination.0);
            put_u32(&mut buf, m.dest_seq);
            put_u32(&mut buf, m.originator.0);
            put_u32(&mut buf, m.lifetime_ms);
            put_ts(&mut buf, m.timestamp);
        }
        Message::Rerr(m) => {
            if m.unreachable.is_empty() {
                return Err(EncodeError::EmptyRerr);
            }
            check_width("unreachable_count", m.unreachable.len() as u64, 8)?;
            buf.extend_from_slice(&[TYPE_RERR, 0, 0, m.unreachable.len() as u8]);
            for u in &m.unreachable {
                put_u32(&mut buf, u.destination.0);
                put_u32(&mut buf, u.dest_seq);
            }
        }
        Message::RreqAck(m) => {
            buf.extend_from_slice(&[TYPE_RREQ_ACK, 0, 0, 0]);
            put_u32(&mut buf, m.own_address.0);
            put_u32(&mut buf, m.destination.0);
            put_ts(&mut buf, m.timestamp);
        }
        Message::Data(p) => {
            buf.extend_from_slice(&[TYPE_DATA, 0, 0, p.ttl]);
            put_u32(&mut buf, p.flow_id);
            put_u32(&mut buf, p.seq);
            put_u32(&mut buf, p.src.0);
            put_u32(&mut buf, p.dst.0);
            put_u32(&mut buf, p.payload_len);
            put_ts(&mut buf, p.sent_at);
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_be_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn node(&mut self) -> NodeId {
        NodeId(self.u32())
    }

    fn ts(&mut self) -> Timestamp {
        let v = u64::from_be_bytes(self.buf[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        Timestamp::from_raw(v)
    }
}

fn expect_len(buf: &[u8], len: usize) -> Result<(), DecodeError> {
    if buf.len() < len {
        return Err(DecodeError::Truncated {
            needed: len,
            available: buf.len(),
        });
    }
    if buf.len() > len {
        return Err(DecodeError::TrailingBytes(buf.len() - len));
    }
    Ok(())
}

fn expect_zero(buf: &[u8], offset: usize, mask: u8) -> Result<(), DecodeError> {
    if buf[offset] & mask != 0 {
        return Err(DecodeError::ReservedBits { offset });
    }
    Ok(())
}

/// Parses exactly one message occupying the whole buffer.
pub fn decode(buf: &[u8]) -> Result<Message, DecodeError> {
    let Some(&tag) = buf.first() else {
        return Err(DecodeError::Truncated {
            needed: 1,
            available: 0,
        });
    };
    match tag {
        TYPE_RREQ => {
            expect_len(buf, RREQ_LEN)?;
            expect_zero(buf, 1, 0b11)?;
            expect_zero(buf, 2, 0xff)?;
            let f = buf[1];
            let mut r = Reader { buf, pos: 4 };
            Ok(Message::Rreq(RreqMessage {
                join: f & 0x80 != 0,
                repair: f & 0x40 != 0,
                gratuitous: f & 0x20 != 0,
                dest_only: f & 0x10 != 0,
                unknown_seq: f & 0x08 != 0,
                ack: f & 0x04 != 0,
                hop_count: buf[3] as u32,
                broadcast_id: r.u32(),
                destination: r.node(),
                dest_seq: r.u32(),
                originator: r.node(),
                orig_seq: r.u32(),
                timestamp: r.ts(),
                previous_node: r.node(),
            }))
        }
        TYPE_RREP => {
            expect_len(buf, RREP_LEN)?;
            expect_zero(buf, 1, 0x3f)?;
            expect_zero(buf, 2, 0xe0)?;
            let f = buf[1];
            let mut r = Reader { buf, pos: 4 };
            Ok(Message::Rrep(RrepMessage {
                repair: f & 0x80 != 0,
                ack: f & 0x40 != 0,
                prefix_size: buf[2] & 0x1f,
                hop_count: buf[3] as u32,
                destination: r.node(),
                dest_seq: r.u32(),
                originator: r.node(),
                lifetime_ms: r.u32(),
                timestamp: r.ts(),
            }))
        }
        TYPE_RERR => {
            if buf.len() < RERR_HEADER_LEN {
                return Err(DecodeError::Truncated {
                    needed: RERR_HEADER_LEN,
                    available: buf.len(),
                });
            }
            expect_zero(buf, 1, 0xff)?;
            expect_zero(buf, 2, 0xff)?;
            let count = buf[3] as usize;
            if count == 0 {
                return Err(DecodeError::EmptyRerr);
            }
            expect_len(buf, RERR_HEADER_LEN + count * RERR_ENTRY_LEN)?;
            let mut r = Reader { buf, pos: 4 };
            let unreachable = (0..count)
                .map(|_| Unreachable {
                    destination: r.node(),
                    dest_seq: r.u32(),
                })
                .collect();
            Ok(Message::Rerr(RerrMessage { unreachable }))
        }
        TYPE_RREQ_ACK => {
            expect_len(buf, RREQ_ACK_LEN)?;
            for offset in 1..4 {
                expect_zero(buf, offset, 0xff)?;
            }
            let mut r = Reader { buf, pos: 4 };
            Ok(Message::RreqAck(RreqAckMessage {
                own_address: r.node(),
                destination: r.node(),
                timestamp: r.ts(),
            }))
        }
        TYPE_DATA => {
            expect_len(buf, DATA_LEN)?;
            expect_zero(buf, 1, 0xff)?;
            expect_zero(buf, 2, 0xff)?;
            let mut r = Reader { buf, pos: 4 };
            Ok(Message::Data(DataPacket {
                ttl: buf[3],
                flow_id: r.u32(),
                seq: r.u32(),
                src: r.node(),
                dst: r.node(),
                payload_len: r.u32(),
                sent_at: r.ts(),
            }))
        }
        other => Err(DecodeError::UnknownType(other)),
    }
}

/// Renders bytes as a classic offset / hex / ascii dump for traces.
pub fn hex_dump(bytes: &[u8]) -> String {
    let mut out = String::new();
    for (row, chunk) in bytes.chunks(16).enumerate() {
        let hex: Vec<String> = chunk.iter().map(|b| hex::encode([*b])).collect();
        let ascii: String = chunk
            .iter()
            .map(|&b| if b.is_ascii_graphic() { b as char } else { '.' })
            .collect();
        out.push_str(&format!(
            "{:08x}  {:<47}  |{}|\n",
            row * 16,
            hex.join(" "),
            ascii
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rreq() -> RreqMessage {
        RreqMessage {
            ack: true,
            unknown_seq: true,
            hop_count: 3,
            broadcast_id: 7,
            destination: NodeId(5),
            dest_seq: 0,
            originator: NodeId(1),
            orig_seq: 2,
            timestamp: Timestamp::from_secs_f64(10.0),
            previous_node: NodeId(2),
            ..Default::default()
        }
    }

    #[test]
    fn rreq_ack_layout() {
        let msg = Message::RreqAck(RreqAckMessage {
            own_address: NodeId(4),
            destination: NodeId(5),
            timestamp: Timestamp::from_secs_f64(12.0),
        });
        let bytes = encode(&msg).unwrap();
        assert_eq!(bytes.len(), RREQ_ACK_LEN);
        assert_eq!(&bytes[..4], &[TYPE_RREQ_ACK, 0, 0, 0]);
        assert_eq!(&bytes[4..8], &[0, 0, 0, 4]);
        assert_eq!(&bytes[8..12], &[0, 0, 0, 5]);
        // 12.0 s: integer part 12, fraction 0
        assert_eq!(&bytes[12..20], &[0, 0, 0, 12, 0, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn rreq_field_order() {
        let bytes = encode(&Message::Rreq(sample_rreq())).unwrap();
        assert_eq!(bytes.len(), RREQ_LEN);
        assert_eq!(bytes[0], TYPE_RREQ);
        assert_eq!(bytes[1], 0x08 | 0x04);
        assert_eq!(bytes[3], 3);
        assert_eq!(&bytes[4..8], &7u32.to_be_bytes());
        assert_eq!(&bytes[8..12], &5u32.to_be_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_be_bytes());
        assert_eq!(&bytes[24..32], &[0, 0, 0, 10, 0, 0, 0, 0]);
        assert_eq!(&bytes[32..36], &2u32.to_be_bytes());
    }

    #[test]
    fn hop_count_overflow() {
        let mut m = sample_rreq();
        m.hop_count = 256;
        assert_eq!(
            encode(&Message::Rreq(m)),
            Err(EncodeError::Overflow {
                field: "hop_count",
                value: 256,
                bits: 8
            })
        );
    }

    #[test]
    fn prefix_overflow() {
        let m = RrepMessage {
            prefix_size: 32,
            ..Default::default()
        };
        assert!(matches!(
            encode(&Message::Rrep(m)),
            Err(EncodeError::Overflow {
                field: "prefix_size",
                ..
            })
        ));
    }

    #[test]
    fn empty_rerr_rejected_both_ways() {
        assert_eq!(
            encode(&Message::Rerr(RerrMessage::default())),
            Err(EncodeError::EmptyRerr)
        );
        assert_eq!(decode(&[TYPE_RERR, 0, 0, 0]), Err(DecodeError::EmptyRerr));
    }

    #[test]
    fn empty_buffer_is_truncated() {
        assert_eq!(
            decode(&[]),
            Err(DecodeError::Truncated {
                needed: 1,
                available: 0
            })
        );
    }

    #[test]
    fn reserved_bit_mutation_rejected() {
        let good = encode(&Message::Rreq(sample_rreq())).unwrap();
        for bit in 0..2 {
            let mut bad = good.clone();
            bad[1] |= 1 << bit;
            assert_eq!(decode(&bad), Err(DecodeError::ReservedBits { offset: 1 }));
        }
        for bit in 0..8 {
            let mut bad = good.clone();
            bad[2] |= 1 << bit;
            assert_eq!(decode(&bad), Err(DecodeError::ReservedBits { offset: 2 }));
        }
    }

    #[test]
    fn unknown_type_and_trailing() {
        assert_eq!(decode(&[4, 0, 0, 0]), Err(DecodeError::UnknownType(4)));
        let mut bytes = encode(&Message::Rreq(sample_rreq())).unwrap();
        bytes.push(0);
        assert_eq!(decode(&bytes), Err(DecodeError::TrailingBytes(1)));
        bytes.truncate(20);
        assert!(matches!(decode(&bytes), Err(DecodeError::Truncated { .. })));
    }

    #[test]
    fn timestamp_conversions() {
        let t = Timestamp::from_secs_f64(10.3);
        let ex = t + Duration::from_millis(5600);
        assert!((ex.as_secs_f64() - 15.9).abs() < 1e-9);
        assert_eq!(Timestamp::from_secs_f64(-1.0), Timestamp::ZERO);
        assert_eq!(
            Timestamp::from_duration(Duration::from_secs(3)).raw(),
            3 << 32
        );
        assert_eq!(
            Timestamp::from_raw(3 << 32).to_duration(),
            Duration::from_secs(3)
        );
    }

    #[test]
    fn hex_dump_shape() {
        let dump = hex_dump(&[0x41; 20]);
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("00000000  41 41"));
        assert!(lines[1].starts_with("00000010"));
        assert!(lines[0].ends_with("|AAAAAAAAAAAAAAAA|"));
    }
}
