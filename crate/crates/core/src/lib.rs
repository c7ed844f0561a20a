//! Deterministic discrete-event simulator for on-demand MANET routing: plain
//! AODV, AODV with an RREQ-ACK cache that validates every RREP, and four
//! insider attacks that forge RREPs.

pub mod adversary;
pub mod aodv;
pub mod aodvsec;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod suite;
pub mod trace;
pub mod wire;
