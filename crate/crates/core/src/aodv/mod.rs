//! Baseline AODV node state machine, optionally running the RREQ-ACK cache
//! extension.

mod node;
mod route;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use node::{Action, AodvNode, Outbox, Timer, Transmission};
pub use route::{should_replace, RouteCandidate, RouteEntry, RouteState, RouteTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "AODV")]
    Aodv,
    #[serde(rename = "AODVSEC")]
    AodvSec,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::Aodv, Protocol::AodvSec];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Aodv => "AODV",
            Protocol::AodvSec => "AODVSEC",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "AODV" => Ok(Protocol::Aodv),
            "AODVSEC" => Ok(Protocol::AodvSec),
            other => Err(format!(
                "unknown protocol `{other}` (expected AODV or AODVSEC)"
            )),
        }
    }
}

/// Timing and sizing constants, RFC 3561 defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConstants {
    pub node_traversal_time: Duration,
    pub net_diameter: u32,
    pub active_route_timeout: Duration,
    pub rreq_retries: u32,
    pub ttl_data: u8,
    /// Data packets buffered per destination while a discovery is pending.
    pub queue_limit: usize,
    pub cache_capacity: usize,
}

impl Default for ProtocolConstants {
    fn default() -> Self {
        ProtocolConstants {
            node_traversal_time: Duration::from_millis(40),
            net_diameter: 35,
            active_route_timeout: Duration::from_secs(10),
            rreq_retries: 2,
            ttl_data: 64,
            queue_limit: 64,
            cache_capacity: crate::aodvsec::DEFAULT_CACHE_CAPACITY,
        }
    }
}

impl ProtocolConstants {
    pub fn net_traversal_time(&self) -> Duration {
        2 * self.node_traversal_time * self.net_diameter
    }

    pub fn path_discovery_time(&self) -> Duration {
        2 * self.net_traversal_time()
    }

    pub fn my_route_timeout(&self) -> Duration {
        2 * self.active_route_timeout
    }
}
