//! Centralized minimum-cost route search used to check the distributed
//! protocol.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use super::{accumulate, compare_routes, link_metric, MetricPolicy};
use crate::info::InformationTable;
use crate::radio::NodeId;

/// Graphs up to this size are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRoute {
    pub path: Vec<NodeId>,
    pub cost: f64,
}

impl OracleRoute {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

fn adjacency(tables: &[InformationTable], policy: &MetricPolicy) -> Vec<Vec<(NodeId, f64)>> {
    tables
        .iter()
        .map(|t| {
            t.neighbors()
                .iter()
                .filter_map(|&n| link_metric(policy, n, t).map(|c| (n, c)))
                .collect()
        })
        .collect()
}

/// Minimum-cost simple path from `source` to `destination`.
///
/// Ties are broken by fewer hops, then by the lexicographically smallest
/// node sequence. Costs accumulate from the source outwards, in the same
/// order the route request does.
pub fn oracle_best_route(
    tables: &[InformationTable],
    policy: &MetricPolicy,
    source: NodeId,
    destination: NodeId,
) -> Option<OracleRoute> {
    if source == destination {
        return None;
    }
    let adj = adjacency(tables, policy);
    if tables.len() <= EXHAUSTIVE_LIMIT {
        exhaustive(&adj, source, destination)
    } else {
        dijkstra(&adj, source, destination)
    }
}

fn exhaustive(adj: &[Vec<(NodeId, f64)>], source: NodeId, destination: NodeId) -> Option<OracleRoute> {
    struct Search<'a> {
        adj: &'a [Vec<(NodeId, f64)>],
        destination: NodeId,
        path: Vec<NodeId>,
        visited: Vec<bool>,
        best: Option<OracleRoute>,
    }

    impl Search<'_> {
        fn visit(&mut self, cost: f64) {
            let at = *self.path.last().expect("path starts at the source");
            let hops = self.path.len() - 1;
            if let Some(best) = &self.best {
                // Costs are non-negative, so extending never helps once the
                // prefix is already no better than the incumbent.
                let worse = cost > best.cost || (cost == best.cost && hops >= best.hops());
                if worse && at != self.destination {
                    return;
                }
            }
            if at == self.destination {
                let better = match &self.best {
                    None => true,
                    Some(b) => compare_routes((cost, hops, &self.path), (b.cost, b.hops(), &b.path)) == Ordering::Less,
                };
                if better {
                    self.best = Some(OracleRoute {
                        path: self.path.clone(),
                        cost,
                    });
                }
                return;
            }
            for k in 0..self.adj[at.index()].len() {
                let (next, link) = self.adj[at.index()][k];
                if self.visited[next.index()] {
                    continue;
                }
                self.visited[next.index()] = true;
                self.path.push(next);
                self.visit(accumulate(cost, link));
                self.path.pop();
                self.visited[next.index()] = false;
            }
        }
    }

    let mut search = Search {
        adj,
        destination,
        path: vec![source],
        visited: vec![false; adj.len()],
        best: None,
    };
    search.visited[source.index()] = true;
    search.visit(0.0);
    search.best
}

#[derive(Debug, Clone, PartialEq)]
struct Label {
    cost: f64,
    path: Vec<NodeId>,
}

impl Label {
    fn cmp_key(&self, other: &Label) -> Ordering {
        compare_routes(
            (self.cost, self.path.len(), &self.path),
            (other.cost, other.path.len(), &other.path),
        )
    }
}

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    // Reversed so the max-heap pops the smallest label first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cmp_key(self)
    }
}

fn dijkstra(adj: &[Vec<(NodeId, f64)>], source: NodeId, destination: NodeId) -> Option<OracleRoute> {
    let mut best: Vec<Option<Label>> = vec![None; adj.len()];
    let start = Label {
        cost: 0.0,
        path: vec![source],
    };
    best[source.index()] = Some(start.clone());
    let mut heap = BinaryHeap::from([start]);
    while let Some(label) = heap.pop() {
        let at = *label.path.last().expect("non-empty path");
        if best[at.index()].as_ref() != Some(&label) {
            continue;
        }
        if at == destination {
            return Some(OracleRoute {
                path: label.path,
                cost: label.cost,
            });
        }
        for &(next, link) in &adj[at.index()] {
            if label.path.contains(&next) {
                continue;
            }
            let mut path = label.path.clone();
            path.push(next);
            let candidate = Label {
                cost: accumulate(label.cost, link),
                path,
            };
            let improves = match &best[next.index()] {
                None => true,
                Some(current) => candidate.cmp_key(current) == Ordering::Less,
            };
            if improves {
                best[next.index()] = Some(candidate.clone());
                heap.push(candidate);
            }
        }
    }
    None
}

/// Hop count of the shortest path over the neighbor relation.
pub fn bfs_hop_count(tables: &[InformationTable], source: NodeId, destination: NodeId) -> Option<usize> {
    let mut dist = vec![usize::MAX; tables.len()];
    dist[source.index()] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(at) = queue.pop_front() {
        if at == destination {
            return Some(dist[at.index()]);
        }
        for &n in tables[at.index()].neighbors() {
            if dist[n.index()] == usize::MAX {
                dist[n.index()] = dist[at.index()] + 1;
                queue.push_back(n);
            }
        }
    }
    None
}
