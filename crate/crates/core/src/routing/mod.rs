//! Link metrics and AODV-style route establishment.

mod discovery;
mod oracle;
mod protocol;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::info::InformationTable;
use crate::radio::NodeId;

pub use discovery::{discover_route, DiscoveredRoute};
pub use oracle::{bfs_hop_count, oracle_best_route, OracleRoute, EXHAUSTIVE_LIMIT};
pub use protocol::{
    DropReason, RouteAgent, RouteReply, RouteRequest, RoutingTable, RoutingTableEntry, RrepAction, RreqAction,
};

/// Routing protocol under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    /// Interference-aware cooperative routing.
    Iacr,
    /// Minimum hop count.
    Mhc,
    /// Received-interference-only baseline.
    Iaee,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Iacr, Protocol::Mhc, Protocol::Iaee];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Iacr => "IACR",
            Protocol::Mhc => "MHC",
            Protocol::Iaee => "IAEE",
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
            "IACR" => Ok(Protocol::Iacr),
            "MHC" => Ok(Protocol::Mhc),
            "IAEE" => Ok(Protocol::Iaee),
            other => Err(format!("unknown protocol `{other}` (expected IACR, MHC or IAEE)")),
        }
    }
}

/// Which created-interference quantity feeds the IACR metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CreatedTerm {
    /// Interference created at every neighbor except the chosen relay.
    #[default]
    ExcludingRelay,
    /// Interference created at every neighbor, relay included.
    AllNeighbors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum MetricPolicy {
    Iacr { delta: f64, created: CreatedTerm },
    Mhc,
    Iaee,
}

impl MetricPolicy {
    pub fn iacr(delta: f64) -> Self {
        MetricPolicy::Iacr {
            delta,
            created: CreatedTerm::ExcludingRelay,
        }
    }

    pub fn for_protocol(protocol: Protocol, delta: f64, created: CreatedTerm) -> Self {
        match protocol {
            Protocol::Iacr => MetricPolicy::Iacr { delta, created },
            Protocol::Mhc => MetricPolicy::Mhc,
            Protocol::Iaee => MetricPolicy::Iaee,
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            MetricPolicy::Iacr { .. } => Protocol::Iacr,
            MetricPolicy::Mhc => Protocol::Mhc,
            MetricPolicy::Iaee => Protocol::Iaee,
        }
    }

    pub fn delta(&self) -> Option<f64> {
        match *self {
            MetricPolicy::Iacr { delta, .. } => Some(delta),
            _ => None,
        }
    }
}

/// Cost of the link from the table's owner to `candidate`.
///
/// `None` means the candidate cannot be used as a relay: it is not a
/// neighbor (MHC) or its table row is missing or stale (IACR, IAEE).
pub fn link_metric(policy: &MetricPolicy, candidate: NodeId, table: &InformationTable) -> Option<f64> {
    match *policy {
        MetricPolicy::Mhc => table.neighbors().contains(&candidate).then_some(1.0),
        MetricPolicy::Iaee => table.fresh_row(candidate).map(|r| r.received_at_neighbor),
        MetricPolicy::Iacr { delta, created } => table.fresh_row(candidate).map(|r| {
            let created = match created {
                CreatedTerm::ExcludingRelay => r.aggregate_created,
                CreatedTerm::AllNeighbors => table.total_created(),
            };
            delta * created + (1.0 - delta) * r.received_at_neighbor
        }),
    }
}

/// Route cost after one more link.
#[inline]
pub fn accumulate(m_rreq: f64, m_link: f64) -> f64 {
    m_rreq + m_link
}

/// Total order used to pick between candidate routes: cost, then hop count,
/// then the node-id sequence.
pub(crate) fn compare_routes(a: (f64, usize, &[NodeId]), b: (f64, usize, &[NodeId])) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then_with(|| a.2.cmp(b.2))
}
