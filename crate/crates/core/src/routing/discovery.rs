//! Route discovery with every control frame delivered.
//!
//! Runs the per-node state machines over a FIFO message queue until the
//! flood settles, then walks the reply back to the source. Used by the
//! oracle comparison; the simulator drives the same state machines with
//! real timing and reception.

use std::collections::VecDeque;

use super::{MetricPolicy, RouteAgent, RouteReply, RrepAction, RreqAction};
use crate::info::InformationTable;
use crate::radio::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveredRoute {
    /// Source to destination, following the installed routing entries.
    pub path: Vec<NodeId>,
    /// Metric carried by the reply.
    pub cost: f64,
    pub reply: RouteReply,
}

impl DiscoveredRoute {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

/// Floods a request from `source` and returns the route installed by the
/// resulting reply. `tables[i]` must belong to node `i`.
pub fn discover_route(
    tables: &[InformationTable],
    policy: &MetricPolicy,
    source: NodeId,
    destination: NodeId,
) -> Option<DiscoveredRoute> {
    if source == destination {
        return None;
    }
    let mut agents: Vec<RouteAgent> = tables.iter().map(|t| RouteAgent::new(t.owner())).collect();
    let origin = agents[source.index()].originate(destination, &tables[source.index()], policy);
    let sequence = origin.sequence;

    let mut queue = VecDeque::new();
    for &n in tables[source.index()].neighbors() {
        queue.push_back((n, origin.clone()));
    }
    while let Some((node, rreq)) = queue.pop_front() {
        let i = node.index();
        if let RreqAction::Forward(next) = agents[i].handle_rreq(&rreq, &tables[i], policy) {
            for &n in tables[i].neighbors() {
                queue.push_back((n, next.clone()));
            }
        }
    }

    let first_reply = agents[destination.index()].reply(source, sequence)?;
    let mut rrep = first_reply.clone();
    loop {
        let hop = rrep.next_hop;
        match agents[hop.index()].handle_rrep(&rrep, 0.0) {
            RrepAction::Forward(next) => rrep = next,
            RrepAction::Established(_) => break,
            RrepAction::Drop(_) => return None,
        }
    }

    let mut path = vec![source];
    let mut at = source;
    while at != destination {
        let entry = agents[at.index()].table.get(destination)?;
        at = entry.next_hop;
        if path.contains(&at) {
            return None;
        }
        path.push(at);
    }
    Some(DiscoveredRoute {
        path,
        cost: first_reply.route_metric,
        reply: first_reply,
    })
}
