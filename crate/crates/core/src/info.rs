//! Information collection: the ICP request/reply handshake and the per-node
//! information table of created and received interference.
//!
//! Node `i` sends a request at `P_max` to each neighbor `j`. The neighbor
//! answers with the power it received (the interference `i` creates at `j`)
//! and the interference it hears from everyone else. From those replies `i`
//! keeps, for every neighbor `j`:
//!
//! | column               | meaning                                            |
//! |----------------------|----------------------------------------------------|
//! | `created_at_neighbor`  | `P_i / d(i,j)^alpha`                               |
//! | `received_at_neighbor` | interference at `j` from nodes other than `i`      |
//! | `aggregate_created`    | sum of `created_at_neighbor` over all rows but `j` |

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::radio::{aggregate_interference, received_power, ActiveTransmitter, NodeId, Placement, RadioError};

/// Rows not refreshed for this many HELLO epochs stop counting as fresh.
pub const STALE_AFTER_EPOCHS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoRow {
    pub neighbor: NodeId,
    pub created_at_neighbor: f64,
    pub received_at_neighbor: f64,
    pub aggregate_created: f64,
    /// Owner's HELLO epoch at which the row was last written.
    pub refreshed_epoch: u64,
    pub stale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IcpMessage {
    Request {
        transmitter: NodeId,
        destination: NodeId,
        tx_power: f64,
    },
    Reply {
        /// The neighbor answering.
        transmitter: NodeId,
        /// The node that sent the request.
        destination: NodeId,
        measured_rx_power: f64,
        measured_rx_interference: f64,
    },
}

impl IcpMessage {
    pub fn transmitter(&self) -> NodeId {
        match *self {
            IcpMessage::Request { transmitter, .. } | IcpMessage::Reply { transmitter, .. } => transmitter,
        }
    }

    pub fn destination(&self) -> NodeId {
        match *self {
            IcpMessage::Request { destination, .. } | IcpMessage::Reply { destination, .. } => destination,
        }
    }
}

/// Per-node table built from ICP replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationTable {
    owner: NodeId,
    neighbors: BTreeSet<NodeId>,
    rows: BTreeMap<NodeId, InfoRow>,
    epoch: u64,
    last_emitted_epoch: Option<u64>,
}

impl InformationTable {
    pub fn new(owner: NodeId) -> Self {
        InformationTable {
            owner,
            neighbors: BTreeSet::new(),
            rows: BTreeMap::new(),
            epoch: 0,
            last_emitted_epoch: None,
        }
    }

    pub fn with_neighbors(owner: NodeId, neighbors: BTreeSet<NodeId>) -> Self {
        InformationTable {
            neighbors,
            ..InformationTable::new(owner)
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn neighbors(&self) -> &BTreeSet<NodeId> {
        &self.neighbors
    }

    /// Records a neighbor learned from a HELLO.
    pub fn add_neighbor(&mut self, neighbor: NodeId) -> bool {
        neighbor != self.owner && self.neighbors.insert(neighbor)
    }

    pub fn rows(&self) -> impl Iterator<Item = &InfoRow> {
        self.rows.values()
    }

    pub fn row(&self, neighbor: NodeId) -> Option<&InfoRow> {
        self.rows.get(&neighbor)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The row for `neighbor` if it may be used for metric computation.
    pub fn fresh_row(&self, neighbor: NodeId) -> Option<&InfoRow> {
        self.rows
            .get(&neighbor)
            .filter(|r| !r.stale && self.epoch.saturating_sub(r.refreshed_epoch) < STALE_AFTER_EPOCHS)
    }

    /// Sum of `created_at_neighbor` over every row, in neighbor-id order.
    pub fn total_created(&self) -> f64 {
        self.rows.values().map(|r| r.created_at_neighbor).sum()
    }

    /// Applies an ICP reply. Replies addressed to another node are discarded
    /// and `false` is returned.
    pub fn ingest_reply(&mut self, reply: &IcpMessage) -> bool {
        let IcpMessage::Reply {
            transmitter,
            destination,
            measured_rx_power,
            measured_rx_interference,
        } = *reply
        else {
            return false;
        };
        if destination != self.owner || transmitter == self.owner {
            return false;
        }
        self.rows.insert(
            transmitter,
            InfoRow {
                neighbor: transmitter,
                created_at_neighbor: measured_rx_power,
                received_at_neighbor: measured_rx_interference,
                aggregate_created: 0.0,
                refreshed_epoch: self.epoch,
                stale: false,
            },
        );
        self.recompute_aggregates();
        true
    }

    fn recompute_aggregates(&mut self) {
        let total = self.total_created();
        for row in self.rows.values_mut() {
            row.aggregate_created = total - row.created_at_neighbor;
        }
    }

    /// Advances the table to the HELLO epoch containing `clock` and, when a
    /// new epoch has started, returns the requests to piggyback on the HELLO.
    ///
    /// Rows from nodes outside the neighbor set, and rows that missed
    /// [`STALE_AFTER_EPOCHS`] epochs, are flagged stale.
    pub fn refresh(&mut self, clock: f64, hello_interval: f64, p_max: f64) -> Vec<IcpMessage> {
        let epoch = epoch_index(clock, hello_interval);
        if self.last_emitted_epoch.is_some_and(|e| epoch <= e) {
            return Vec::new();
        }
        self.epoch = epoch;
        self.last_emitted_epoch = Some(epoch);
        for row in self.rows.values_mut() {
            let aged = epoch.saturating_sub(row.refreshed_epoch) >= STALE_AFTER_EPOCHS;
            row.stale = aged || !self.neighbors.contains(&row.neighbor);
        }
        emit_icp_requests(self.owner, &self.neighbors, p_max)
    }
}

/// HELLO epoch containing `clock`. A small tolerance keeps `k * interval`
/// from landing in epoch `k - 1` through rounding.
pub fn epoch_index(clock: f64, hello_interval: f64) -> u64 {
    let e = (clock / hello_interval + 1e-9).floor();
    if e <= 0.0 {
        0
    } else {
        e as u64
    }
}

/// One request per neighbor, each sent at `p_max`.
pub fn emit_icp_requests(node: NodeId, neighbors: &BTreeSet<NodeId>, p_max: f64) -> Vec<IcpMessage> {
    neighbors
        .iter()
        .map(|&n| IcpMessage::Request {
            transmitter: node,
            destination: n,
            tx_power: p_max,
        })
        .collect()
}

/// Builds the reply `receiver` sends for a request addressed to it.
///
/// Returns `Ok(None)` for anything that is not a request for `receiver`.
/// `active` is the set of transmitters the receiver hears while the request
/// arrives; the requester itself is excluded from the interference sum.
pub fn handle_icp_request(
    receiver: NodeId,
    msg: &IcpMessage,
    placement: &Placement,
    alpha: f64,
    active: &[ActiveTransmitter],
) -> Result<Option<IcpMessage>, RadioError> {
    let IcpMessage::Request {
        transmitter,
        destination,
        tx_power,
    } = *msg
    else {
        return Ok(None);
    };
    if destination != receiver || transmitter == receiver {
        return Ok(None);
    }
    let d = placement.distance(transmitter, receiver);
    let measured_rx_power = received_power(tx_power, d, alpha)?;
    let measured_rx_interference = aggregate_interference(receiver, transmitter, active, placement, alpha)?;
    Ok(Some(IcpMessage::Reply {
        transmitter: receiver,
        destination: transmitter,
        measured_rx_power,
        measured_rx_interference,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::Position;

    fn reply(from: u32, to: u32, p: f64, i: f64) -> IcpMessage {
        IcpMessage::Reply {
            transmitter: NodeId(from),
            destination: NodeId(to),
            measured_rx_power: p,
            measured_rx_interference: i,
        }
    }

    fn ids(v: &[u32]) -> BTreeSet<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn requests_one_per_neighbor() {
        let reqs = emit_icp_requests(NodeId(0), &ids(&[1, 2, 3]), 1.0);
        assert_eq!(reqs.len(), 3);
        let dests: BTreeSet<_> = reqs.iter().map(|m| m.destination()).collect();
        assert_eq!(dests, ids(&[1, 2, 3]));
        assert!(emit_icp_requests(NodeId(0), &BTreeSet::new(), 1.0).is_empty());
    }

    #[test]
    fn request_uses_max_power() {
        let reqs = emit_icp_requests(NodeId(4), &ids(&[9]), 0.75);
        assert_eq!(
            reqs,
            vec![IcpMessage::Request {
                transmitter: NodeId(4),
                destination: NodeId(9),
                tx_power: 0.75
            }]
        );
    }

    fn pair_placement(extra: Option<Position>) -> Placement {
        let mut v = vec![Position::new(0.0, 0.0), Position::new(1.0, 0.0)];
        v.extend(extra);
        Placement::from_positions(v).unwrap()
    }

    #[test]
    fn reply_without_interferers() {
        let placement = pair_placement(None);
        let req = emit_icp_requests(NodeId(0), &ids(&[1]), 1.0)[0];
        let r = handle_icp_request(NodeId(1), &req, &placement, 3.0, &[]).unwrap();
        assert_eq!(r, Some(reply(1, 0, 1.0, 0.0)));
    }

    #[test]
    fn reply_with_one_interferer() {
        // Interferer 2 m from the receiver.
        let placement = pair_placement(Some(Position::new(3.0, 0.0)));
        let req = emit_icp_requests(NodeId(0), &ids(&[1]), 1.0)[0];
        let active = [ActiveTransmitter {
            node: NodeId(2),
            power: 1.0,
        }];
        let r = handle_icp_request(NodeId(1), &req, &placement, 2.0, &active).unwrap();
        assert_eq!(r, Some(reply(1, 0, 1.0, 0.25)));
    }

    #[test]
    fn request_for_someone_else_is_discarded() {
        let placement = pair_placement(Some(Position::new(3.0, 0.0)));
        let req = emit_icp_requests(NodeId(0), &ids(&[1]), 1.0)[0];
        assert_eq!(handle_icp_request(NodeId(2), &req, &placement, 3.0, &[]).unwrap(), None);
        let not_a_request = reply(1, 0, 1.0, 0.0);
        assert_eq!(
            handle_icp_request(NodeId(0), &not_a_request, &placement, 3.0, &[]).unwrap(),
            None
        );
    }

    #[test]
    fn single_reply_has_empty_aggregate() {
        let mut t = InformationTable::with_neighbors(NodeId(0), ids(&[1]));
        assert!(t.ingest_reply(&reply(1, 0, 0.4, 0.1)));
        let row = t.row(NodeId(1)).unwrap();
        assert_eq!(row.created_at_neighbor, 0.4);
        assert_eq!(row.received_at_neighbor, 0.1);
        assert_eq!(row.aggregate_created, 0.0);
    }

    #[test]
    fn two_replies_complement_each_other() {
        let mut t = InformationTable::with_neighbors(NodeId(0), ids(&[1, 2]));
        t.ingest_reply(&reply(1, 0, 0.3, 0.0));
        t.ingest_reply(&reply(2, 0, 0.7, 0.0));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b;
        assert!(close(t.row(NodeId(1)).unwrap().aggregate_created, 0.7));
        assert!(close(t.row(NodeId(2)).unwrap().aggregate_created, 0.3));
    }

    #[test]
    fn aggregate_matches_external_sum_over_other_rows() {
        let values = [0.013, 0.2, 1.7e-5, 0.09, 0.5];
        let mut t = InformationTable::with_neighbors(NodeId(0), ids(&[1, 2, 3, 4, 5]));
        for (k, &v) in values.iter().enumerate() {
            t.ingest_reply(&reply(k as u32 + 1, 0, v, 0.0));
        }
        let total: f64 = values.iter().sum();
        for (k, &own) in values.iter().enumerate() {
            let others: f64 = values.iter().enumerate().filter(|&(m, _)| m != k).map(|(_, v)| v).sum();
            let row = t.row(NodeId(k as u32 + 1)).unwrap();
            assert!((row.aggregate_created - others).abs() <= 1e-12 * total);
            assert!((row.aggregate_created + own - total).abs() <= 1e-12 * total);
        }
    }

    #[test]
    fn reply_for_another_owner_is_discarded() {
        let mut t = InformationTable::with_neighbors(NodeId(0), ids(&[1]));
        assert!(!t.ingest_reply(&reply(1, 7, 0.4, 0.1)));
        assert!(t.is_empty());
    }

    #[test]
    fn ingest_is_idempotent() {
        let mut once = InformationTable::with_neighbors(NodeId(0), ids(&[1, 2]));
        once.ingest_reply(&reply(1, 0, 0.3, 0.01));
        once.ingest_reply(&reply(2, 0, 0.6, 0.02));
        let mut twice = once.clone();
        twice.ingest_reply(&reply(2, 0, 0.6, 0.02));
        assert_eq!(once, twice);
    }

    #[test]
    fn reply_from_non_neighbor_goes_stale_next_epoch() {
        let mut t = InformationTable::with_neighbors(NodeId(0), ids(&[1]));
        t.refresh(0.0, 0.2, 1.0);
        t.ingest_reply(&reply(5, 0, 0.2, 0.0));
        assert!(t.fresh_row(NodeId(5)).is_some());
        t.refresh(0.2, 0.2, 1.0);
        assert!(t.row(NodeId(5)).unwrap().stale);
        assert!(t.fresh_row(NodeId(5)).is_none());
    }

    #[test]
    fn refresh_emits_once_per_epoch() {
        let mut t = InformationTable::with_neighbors(NodeId(0), ids(&[1, 2]));
        assert_eq!(t.refresh(0.0, 0.2, 1.0).len(), 2);
        assert!(t.refresh(0.05, 0.2, 1.0).is_empty());
        assert!(t.refresh(0.19, 0.2, 1.0).is_empty());
        let reqs = t.refresh(0.2, 0.2, 1.0);
        assert_eq!(reqs.len(), 2);
        assert_eq!(t.epoch(), 1);
    }

    #[test]
    fn epoch_boundaries_survive_rounding() {
        for k in 0..200u64 {
            let clock = k as f64 * 0.2;
            assert_eq!(epoch_index(clock, 0.2), k);
        }
        assert_eq!(epoch_index(3.0, 0.2), 15);
    }

    #[test]
    fn silent_neighbor_is_excluded_after_three_epochs() {
        // Neighbors 1 and 2 answer at epoch 0; afterwards only 1 keeps answering.
        let mut t = InformationTable::with_neighbors(NodeId(0), ids(&[1, 2]));
        t.refresh(0.0, 0.2, 1.0);
        t.ingest_reply(&reply(1, 0, 0.3, 0.01));
        t.ingest_reply(&reply(2, 0, 0.6, 0.02));
        for epoch in 1..=3u64 {
            t.refresh(epoch as f64 * 0.2, 0.2, 1.0);
            if epoch < 3 {
                assert!(t.fresh_row(NodeId(2)).is_some(), "epoch {epoch}");
            }
            t.ingest_reply(&reply(1, 0, 0.3, 0.01));
        }
        assert!(t.fresh_row(NodeId(1)).is_some());
        assert!(t.fresh_row(NodeId(2)).is_none());
    }
}
