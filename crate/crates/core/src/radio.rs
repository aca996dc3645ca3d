//! Propagation, interference aggregation and SINR over a static node placement.
//!
//! Everything here is a pure function of its inputs. Powers are in watts,
//! distances in meters.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum pairwise separation enforced by [`Placement::sample`].
pub const MIN_SEPARATION: f64 = 1.0;

/// Index of a node inside a placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadioError {
    #[error("degenerate geometry: distance {0} m is not positive")]
    NonPositiveDistance(f64),
    #[error("nodes {0} and {1} are co-located")]
    CoLocated(NodeId, NodeId),
    #[error("invalid channel model: {0}")]
    InvalidChannel(String),
    #[error("invalid position for node {0}: coordinates must be finite")]
    NonFinitePosition(NodeId),
    #[error("could not place {n} nodes {min_sep} m apart inside a {side} m square")]
    PlacementFailed { n: usize, side: f64, min_sep: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// How the receiver treats thermal noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReceptionMode {
    /// `signal / (interference + noise)`.
    #[default]
    Sinr,
    /// Noise neglected: `signal / interference`.
    Sir,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Path-loss exponent, at least 2.
    pub alpha: f64,
    /// Noise variance in watts.
    pub noise_variance: f64,
    /// Minimum received power (watts) for two nodes to hear each other.
    pub detection_threshold: f64,
    pub mode: ReceptionMode,
}

impl ChannelModel {
    pub fn new(
        alpha: f64,
        noise_variance: f64,
        detection_threshold: f64,
        mode: ReceptionMode,
    ) -> Result<Self, RadioError> {
        if !(alpha.is_finite() && alpha >= 2.0) {
            return Err(RadioError::InvalidChannel(format!(
                "path-loss exponent {alpha} must be finite and >= 2"
            )));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(RadioError::InvalidChannel(format!(
                "noise variance {noise_variance} must be finite and >= 0"
            )));
        }
        if !(detection_threshold.is_finite() && detection_threshold > 0.0) {
            return Err(RadioError::InvalidChannel(format!(
                "detection threshold {detection_threshold} must be finite and > 0"
            )));
        }
        Ok(ChannelModel {
            alpha,
            noise_variance,
            detection_threshold,
            mode,
        })
    }

    /// Distance at which a `p_t` transmission falls to the detection threshold.
    pub fn range(&self, p_t: f64) -> f64 {
        (p_t / self.detection_threshold).powf(1.0 / self.alpha)
    }
}

/// Signal, interference and the resulting ratio for one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub signal_power: f64,
    pub interference_power: f64,
    pub sinr: f64,
}

impl LinkBudget {
    pub fn evaluate(signal_power: f64, interference_power: f64, channel: &ChannelModel) -> Self {
        LinkBudget {
            signal_power,
            interference_power,
            sinr: sinr(signal_power, interference_power, channel),
        }
    }
}

/// Power seen at distance `d` from a `p_t` transmitter: `p_t / d^alpha`.
pub fn received_power(p_t: f64, d: f64, alpha: f64) -> Result<f64, RadioError> {
    if d.is_nan() || d <= 0.0 {
        return Err(RadioError::NonPositiveDistance(d));
    }
    Ok(p_t / d.powf(alpha))
}

/// A node currently on the air, and the power it is using.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveTransmitter {
    pub node: NodeId,
    pub power: f64,
}

/// Interference at `receiver` while it listens to `intended_tx`.
///
/// Both the receiver and the intended transmitter are left out of the sum.
pub fn aggregate_interference(
    receiver: NodeId,
    intended_tx: NodeId,
    active: &[ActiveTransmitter],
    placement: &Placement,
    alpha: f64,
) -> Result<f64, RadioError> {
    let rx = placement.position(receiver);
    let mut total = 0.0;
    for tx in active {
        if tx.node == receiver || tx.node == intended_tx {
            continue;
        }
        let d = rx.distance(&placement.position(tx.node));
        if d <= 0.0 {
            return Err(RadioError::CoLocated(receiver, tx.node));
        }
        total += received_power(tx.power, d, alpha)?;
    }
    Ok(total)
}

/// Signal-to-interference(-plus-noise) ratio.
///
/// A zero denominator means nothing competes with the signal; the result is
/// `f64::INFINITY`, which clears any finite threshold. A zero signal always
/// yields zero.
pub fn sinr(signal: f64, interference: f64, channel: &ChannelModel) -> f64 {
    let denom = match channel.mode {
        ReceptionMode::Sinr => interference + channel.noise_variance,
        ReceptionMode::Sir => interference,
    };
    if signal <= 0.0 {
        0.0
    } else if denom <= 0.0 {
        f64::INFINITY
    } else {
        signal / denom
    }
}

pub fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn ratio_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Node positions, indexed by [`NodeId`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    positions: Vec<Position>,
}

impl Placement {
    /// Wraps explicit positions, rejecting non-finite or coincident nodes.
    pub fn from_positions(positions: Vec<Position>) -> Result<Self, RadioError> {
        for (i, p) in positions.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(RadioError::NonFinitePosition(i.into()));
            }
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if positions[i].distance(&positions[j]) <= 0.0 {
                    return Err(RadioError::CoLocated(i.into(), j.into()));
                }
            }
        }
        Ok(Placement { positions })
    }

    /// Uniform placement in `[0, side]^2` with pairwise separation at least
    /// `min_sep`, by rejection sampling.
    pub fn sample<R: Rng + ?Sized>(n: usize, side: f64, min_sep: f64, rng: &mut R) -> Result<Self, RadioError> {
        const MAX_ATTEMPTS_PER_NODE: usize = 10_000;
        let mut positions: Vec<Position> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS_PER_NODE {
                let candidate = Position::new(rng.gen_range(0.0..=side), rng.gen_range(0.0..=side));
                if positions.iter().all(|p| p.distance(&candidate) >= min_sep) {
                    positions.push(candidate);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(RadioError::PlacementFailed { n, side, min_sep });
            }
        }
        Ok(Placement { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn position(&self, node: NodeId) -> Position {
        self.positions[node.index()]
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.position(a).distance(&self.position(b))
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.positions.len()).map(NodeId::from)
    }
}

/// Nodes that hear a `p_max` transmission from `node` at or above the
/// detection threshold.
pub fn neighbors_of(node: NodeId, placement: &Placement, channel: &ChannelModel, p_max: f64) -> BTreeSet<NodeId> {
    let here = placement.position(node);
    placement
        .ids()
        .filter(|&other| other != node)
        .filter(|&other| {
            let d = here.distance(&placement.position(other));
            received_power(p_max, d, channel.alpha)
                .map(|p| p >= channel.detection_threshold)
                .unwrap_or(false)
        })
        .collect()
}

/// Neighbor sets for every node.
pub fn neighbor_graph(placement: &Placement, channel: &ChannelModel, p_max: f64) -> Vec<BTreeSet<NodeId>> {
    placement
        .ids()
        .map(|id| neighbors_of(id, placement, channel, p_max))
        .collect()
}
