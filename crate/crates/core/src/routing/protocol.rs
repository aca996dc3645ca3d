//! RREQ/RREP state machine run by every node.
//!
//! Route requests are flooded with per-link metric accumulation. A node
//! re-forwards a request for the same `(source, sequence)` only when the new
//! copy beats the best one it has seen, so the flood settles on the
//! minimum-cost route rather than the first copy to arrive. The destination
//! answers the best request it collected along the stored reverse pointers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{accumulate, compare_routes, link_metric, MetricPolicy};
use crate::info::InformationTable;
use crate::radio::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub source: NodeId,
    pub destination: NodeId,
    pub sequence: u64,
    pub transmitter: NodeId,
    /// Transmitter's cheapest outgoing link, if any.
    pub next_hop_hint: Option<NodeId>,
    /// Route cost from the source up to the transmitter.
    pub accumulated_metric: f64,
    pub hop_count: u32,
    /// Nodes visited so far, source first, transmitter last.
    pub trace: Vec<NodeId>,
    /// Cost of the link from the transmitter to each neighbor it can use.
    pub link_costs: Vec<(NodeId, f64)>,
}

impl RouteRequest {
    pub fn link_cost_to(&self, node: NodeId) -> Option<f64> {
        self.link_costs.iter().find(|(n, _)| *n == node).map(|&(_, c)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteReply {
    pub source: NodeId,
    pub destination: NodeId,
    pub transmitter: NodeId,
    pub next_hop: NodeId,
    pub route_metric: f64,
    pub sequence: u64,
    pub hop_count: u32,
    /// The accepted request's trace, source to destination.
    pub path: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTableEntry {
    pub destination: NodeId,
    pub next_hop: NodeId,
    /// Remaining cost from this node to the destination.
    pub metric: f64,
    pub sequence: u64,
    pub hop_count: u32,
    pub established_at: f64,
    pub last_used: f64,
}

/// One live entry per destination.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    entries: BTreeMap<NodeId, RoutingTableEntry>,
}

impl RoutingTable {
    pub fn install(&mut self, entry: RoutingTableEntry) {
        self.entries.insert(entry.destination, entry);
    }

    pub fn get(&self, destination: NodeId) -> Option<&RoutingTableEntry> {
        self.entries.get(&destination)
    }

    /// Entry for `destination` unless it went unused for longer than `expiry`.
    pub fn lookup(&self, destination: NodeId, now: f64, expiry: f64) -> Option<&RoutingTableEntry> {
        self.entries.get(&destination).filter(|e| now - e.last_used <= expiry)
    }

    pub fn touch(&mut self, destination: NodeId, now: f64) {
        if let Some(e) = self.entries.get_mut(&destination) {
            e.last_used = now;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &RoutingTableEntry> {
        self.entries.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    /// This node already appears in the request trace.
    Loop,
    /// The transmitter advertised no usable link to this node.
    NoLink,
    /// Not better than a copy already handled.
    Duplicate,
    /// Unicast frame meant for another node.
    NotAddressed,
    /// No reverse pointer for the reply's request.
    UnknownRequest,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RreqAction {
    Forward(RouteRequest),
    /// The request reached its destination and improved on earlier copies.
    /// `first` is set for the first copy of this `(source, sequence)`.
    DestinationReached {
        first: bool,
    },
    Drop(DropReason),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RrepAction {
    Forward(RouteReply),
    /// The reply reached the source and installed this entry.
    Established(RoutingTableEntry),
    Drop(DropReason),
}

#[derive(Debug, Clone, PartialEq)]
struct BestRequest {
    prev_hop: Option<NodeId>,
    metric: f64,
    hops: u32,
    trace: Vec<NodeId>,
}

/// Per-node routing state.
#[derive(Debug, Clone)]
pub struct RouteAgent {
    owner: NodeId,
    next_sequence: u64,
    best: BTreeMap<(NodeId, u64), BestRequest>,
    replied: BTreeSet<(NodeId, u64)>,
    forwarded_replies: BTreeSet<(NodeId, u64)>,
    pub table: RoutingTable,
    failures: u64,
}

impl RouteAgent {
    pub fn new(owner: NodeId) -> Self {
        RouteAgent {
            owner,
            next_sequence: 0,
            best: BTreeMap::new(),
            replied: BTreeSet::new(),
            forwarded_replies: BTreeSet::new(),
            table: RoutingTable::default(),
            failures: 0,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    /// Replies dropped for lack of a reverse pointer.
    pub fn failures(&self) -> u64 {
        self.failures
    }

    fn outgoing_links(
        &self,
        info: &InformationTable,
        policy: &MetricPolicy,
        exclude: &[NodeId],
    ) -> (Vec<(NodeId, f64)>, Option<NodeId>) {
        let costs: Vec<(NodeId, f64)> = info
            .neighbors()
            .iter()
            .filter(|n| !exclude.contains(n))
            .filter_map(|&n| link_metric(policy, n, info).map(|c| (n, c)))
            .collect();
        let hint = costs
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|&(n, _)| n);
        (costs, hint)
    }

    /// Starts a discovery towards `destination` with a fresh sequence number.
    pub fn originate(&mut self, destination: NodeId, info: &InformationTable, policy: &MetricPolicy) -> RouteRequest {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        let trace = vec![self.owner];
        self.best.insert(
            (self.owner, sequence),
            BestRequest {
                prev_hop: None,
                metric: 0.0,
                hops: 0,
                trace: trace.clone(),
            },
        );
        let (link_costs, next_hop_hint) = self.outgoing_links(info, policy, &trace);
        RouteRequest {
            source: self.owner,
            destination,
            sequence,
            transmitter: self.owner,
            next_hop_hint,
            accumulated_metric: 0.0,
            hop_count: 0,
            trace,
            link_costs,
        }
    }

    pub fn handle_rreq(&mut self, rreq: &RouteRequest, info: &InformationTable, policy: &MetricPolicy) -> RreqAction {
        if rreq.trace.contains(&self.owner) {
            return RreqAction::Drop(DropReason::Loop);
        }
        let Some(link) = rreq.link_cost_to(self.owner) else {
            return RreqAction::Drop(DropReason::NoLink);
        };
        let metric = accumulate(rreq.accumulated_metric, link);
        let hops = rreq.hop_count + 1;
        let mut trace = rreq.trace.clone();
        trace.push(self.owner);

        let key = (rreq.source, rreq.sequence);
        let first = match self.best.get(&key) {
            Some(best) => {
                let ord = compare_routes(
                    (metric, hops as usize, &trace),
                    (best.metric, best.hops as usize, &best.trace),
                );
                if ord != Ordering::Less {
                    return RreqAction::Drop(DropReason::Duplicate);
                }
                false
            }
            None => true,
        };
        self.best.insert(
            key,
            BestRequest {
                prev_hop: Some(rreq.transmitter),
                metric,
                hops,
                trace: trace.clone(),
            },
        );

        if self.owner == rreq.destination {
            return RreqAction::DestinationReached { first };
        }
        let (link_costs, next_hop_hint) = self.outgoing_links(info, policy, &trace);
        RreqAction::Forward(RouteRequest {
            source: rreq.source,
            destination: rreq.destination,
            sequence: rreq.sequence,
            transmitter: self.owner,
            next_hop_hint,
            accumulated_metric: metric,
            hop_count: hops,
            trace,
            link_costs,
        })
    }

    /// Reply for the best request collected at this destination. Returns
    /// `None` if nothing arrived or the reply was already sent.
    pub fn reply(&mut self, source: NodeId, sequence: u64) -> Option<RouteReply> {
        let best = self.best.get(&(source, sequence))?;
        let prev = best.prev_hop?;
        if !self.replied.insert((source, sequence)) {
            return None;
        }
        Some(RouteReply {
            source,
            destination: self.owner,
            transmitter: self.owner,
            next_hop: prev,
            route_metric: best.metric,
            sequence,
            hop_count: best.hops,
            path: best.trace.clone(),
        })
    }

    pub fn handle_rrep(&mut self, rrep: &RouteReply, now: f64) -> RrepAction {
        if rrep.next_hop != self.owner {
            return RrepAction::Drop(DropReason::NotAddressed);
        }
        let key = (rrep.source, rrep.sequence);
        let Some(best) = self.best.get(&key) else {
            self.failures += 1;
            return RrepAction::Drop(DropReason::UnknownRequest);
        };
        let entry = RoutingTableEntry {
            destination: rrep.destination,
            next_hop: rrep.transmitter,
            metric: rrep.route_metric - best.metric,
            sequence: rrep.sequence,
            hop_count: rrep.hop_count.saturating_sub(best.hops),
            established_at: now,
            last_used: now,
        };
        if self.owner == rrep.source {
            self.table.install(entry.clone());
            return RrepAction::Established(entry);
        }
        let Some(prev) = best.prev_hop else {
            self.failures += 1;
            return RrepAction::Drop(DropReason::UnknownRequest);
        };
        if !self.forwarded_replies.insert(key) {
            return RrepAction::Drop(DropReason::Duplicate);
        }
        self.table.install(entry);
        RrepAction::Forward(RouteReply {
            transmitter: self.owner,
            next_hop: prev,
            ..rrep.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::IcpMessage;

    /// Table for `owner` whose neighbors all report the given received
    /// interference; created interference is the same constant for all.
    fn table(owner: u32, neighbors: &[(u32, f64)]) -> InformationTable {
        let mut t =
            InformationTable::with_neighbors(NodeId(owner), neighbors.iter().map(|&(n, _)| NodeId(n)).collect());
        for &(n, received) in neighbors {
            t.ingest_reply(&IcpMessage::Reply {
                transmitter: NodeId(n),
                destination: NodeId(owner),
                measured_rx_power: 0.0,
                measured_rx_interference: received,
            });
        }
        t
    }

    fn rreq_from(transmitter: u32, trace: &[u32], metric: f64, costs: &[(u32, f64)]) -> RouteRequest {
        RouteRequest {
            source: NodeId(trace[0]),
            destination: NodeId(9),
            sequence: 0,
            transmitter: NodeId(transmitter),
            next_hop_hint: None,
            accumulated_metric: metric,
            hop_count: trace.len() as u32 - 1,
            trace: trace.iter().map(|&n| NodeId(n)).collect(),
            link_costs: costs.iter().map(|&(n, c)| (NodeId(n), c)).collect(),
        }
    }

    #[test]
    fn destination_answers_the_cheaper_of_two_requests() {
        let mut dest = RouteAgent::new(NodeId(9));
        let info = table(9, &[]);
        let policy = MetricPolicy::Iaee;
        let a = rreq_from(1, &[0, 1], 0.7, &[(9, 0.1)]);
        let b = rreq_from(2, &[0, 2], 0.4, &[(9, 0.1)]);
        assert_eq!(
            dest.handle_rreq(&a, &info, &policy),
            RreqAction::DestinationReached { first: true }
        );
        assert_eq!(
            dest.handle_rreq(&b, &info, &policy),
            RreqAction::DestinationReached { first: false }
        );
        let rrep = dest.reply(NodeId(0), 0).unwrap();
        assert_eq!(rrep.next_hop, NodeId(2));
        assert!((rrep.route_metric - 0.5).abs() < 1e-15);
        assert!(dest.reply(NodeId(0), 0).is_none());
    }

    #[test]
    fn worse_duplicate_is_dropped() {
        let mut relay = RouteAgent::new(NodeId(3));
        let info = table(3, &[(9, 0.2)]);
        let policy = MetricPolicy::Iaee;
        let good = rreq_from(1, &[0, 1], 0.1, &[(3, 0.1)]);
        let worse = rreq_from(2, &[0, 2], 0.5, &[(3, 0.1)]);
        assert!(matches!(
            relay.handle_rreq(&good, &info, &policy),
            RreqAction::Forward(_)
        ));
        assert_eq!(
            relay.handle_rreq(&worse, &info, &policy),
            RreqAction::Drop(DropReason::Duplicate)
        );
        // Same copy again is not an improvement either.
        assert_eq!(
            relay.handle_rreq(&good, &info, &policy),
            RreqAction::Drop(DropReason::Duplicate)
        );
    }

    #[test]
    fn better_duplicate_is_forwarded_again() {
        let mut relay = RouteAgent::new(NodeId(3));
        let info = table(3, &[(9, 0.2)]);
        let policy = MetricPolicy::Iaee;
        let first = rreq_from(1, &[0, 1], 0.5, &[(3, 0.1)]);
        let better = rreq_from(2, &[0, 2], 0.1, &[(3, 0.1)]);
        assert!(matches!(
            relay.handle_rreq(&first, &info, &policy),
            RreqAction::Forward(_)
        ));
        match relay.handle_rreq(&better, &info, &policy) {
            RreqAction::Forward(f) => {
                assert!((f.accumulated_metric - 0.2).abs() < 1e-15);
                assert_eq!(f.transmitter, NodeId(3));
                assert_eq!(f.trace, vec![NodeId(0), NodeId(2), NodeId(3)]);
                assert_eq!(f.link_costs, vec![(NodeId(9), 0.2)]);
                assert_eq!(f.next_hop_hint, Some(NodeId(9)));
            }
            other => panic!("expected forward, got {other:?}"),
        }
    }

    #[test]
    fn loop_and_missing_link_are_dropped() {
        let mut relay = RouteAgent::new(NodeId(1));
        let info = table(1, &[]);
        let looped = rreq_from(2, &[0, 1, 2], 0.3, &[(1, 0.1)]);
        assert_eq!(
            relay.handle_rreq(&looped, &info, &MetricPolicy::Iaee),
            RreqAction::Drop(DropReason::Loop)
        );
        let unlinked = rreq_from(2, &[0, 2], 0.3, &[(5, 0.1)]);
        assert_eq!(
            relay.handle_rreq(&unlinked, &info, &MetricPolicy::Iaee),
            RreqAction::Drop(DropReason::NoLink)
        );
    }

    #[test]
    fn line_accumulates_per_link_metrics() {
        // A(0) - B(1) - C(2) - D(3); each transmitter's table reports the
        // next node's received interference.
        let tables = [
            table(0, &[(1, 0.11)]),
            table(1, &[(0, 0.5), (2, 0.07)]),
            table(2, &[(1, 0.5), (3, 0.31)]),
            table(3, &[(2, 0.5)]),
        ];
        let policy = MetricPolicy::Iaee;
        let mut agents: Vec<RouteAgent> = (0..4).map(|i| RouteAgent::new(NodeId(i))).collect();
        let mut rreq = agents[0].originate(NodeId(3), &tables[0], &policy);
        let mut expected = 0.0;
        for (hop, link) in [(1usize, 0.11), (2, 0.07), (3, 0.31)] {
            expected += link;
            match agents[hop].handle_rreq(&rreq, &tables[hop], &policy) {
                RreqAction::Forward(next) => {
                    assert_eq!(next.accumulated_metric, expected);
                    rreq = next;
                }
                RreqAction::DestinationReached { first } => {
                    assert!(first);
                    assert_eq!(hop, 3);
                }
                RreqAction::Drop(r) => panic!("dropped at {hop}: {r:?}"),
            }
        }
        let rrep = agents[3].reply(NodeId(0), 0).unwrap();
        assert_eq!(rrep.route_metric, 0.11 + 0.07 + 0.31);
        assert_eq!(rrep.path, vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3)]);
    }

    #[test]
    fn rrep_at_intermediate_is_forwarded_once() {
        let mut relay = RouteAgent::new(NodeId(1));
        let info = table(1, &[(9, 0.2)]);
        let req = rreq_from(0, &[0], 0.0, &[(1, 0.1)]);
        relay.handle_rreq(&req, &info, &MetricPolicy::Iaee);
        let rrep = RouteReply {
            source: NodeId(0),
            destination: NodeId(9),
            transmitter: NodeId(9),
            next_hop: NodeId(1),
            route_metric: 0.3,
            sequence: 0,
            hop_count: 2,
            path: vec![NodeId(0), NodeId(1), NodeId(9)],
        };
        match relay.handle_rrep(&rrep, 4.0) {
            RrepAction::Forward(f) => {
                assert_eq!(f.next_hop, NodeId(0));
                assert_eq!(f.transmitter, NodeId(1));
            }
            other => panic!("expected forward, got {other:?}"),
        }
        let entry = relay.table.get(NodeId(9)).unwrap();
        assert_eq!(entry.next_hop, NodeId(9));
        assert_eq!(entry.hop_count, 1);
        assert_eq!(relay.handle_rrep(&rrep, 4.1), RrepAction::Drop(DropReason::Duplicate));
    }

    #[test]
    fn rrep_at_source_installs_route() {
        let mut src = RouteAgent::new(NodeId(0));
        let info = table(0, &[(1, 0.1)]);
        let req = src.originate(NodeId(9), &info, &MetricPolicy::Iaee);
        let rrep = RouteReply {
            source: NodeId(0),
            destination: NodeId(9),
            transmitter: NodeId(1),
            next_hop: NodeId(0),
            route_metric: 0.3,
            sequence: req.sequence,
            hop_count: 2,
            path: vec![NodeId(0), NodeId(1), NodeId(9)],
        };
        match src.handle_rrep(&rrep, 3.5) {
            RrepAction::Established(e) => {
                assert_eq!(e.destination, NodeId(9));
                assert_eq!(e.next_hop, NodeId(1));
                assert_eq!(e.metric, 0.3);
                assert_eq!(e.hop_count, 2);
            }
            other => panic!("expected established, got {other:?}"),
        }
        assert!(src.table.lookup(NodeId(9), 5.0, 2.0).is_some());
        assert!(src.table.lookup(NodeId(9), 5.6, 2.0).is_none());
    }

    #[test]
    fn rrep_for_unknown_sequence_counts_a_failure() {
        let mut relay = RouteAgent::new(NodeId(1));
        let rrep = RouteReply {
            source: NodeId(0),
            destination: NodeId(9),
            transmitter: NodeId(9),
            next_hop: NodeId(1),
            route_metric: 0.3,
            sequence: 42,
            hop_count: 2,
            path: vec![],
        };
        assert_eq!(
            relay.handle_rrep(&rrep, 1.0),
            RrepAction::Drop(DropReason::UnknownRequest)
        );
        assert_eq!(relay.failures(), 1);
        assert!(relay.table.is_empty());
    }
}
