//! Per-frame physical-layer rules: reception, transmit power, energy and the
//! interference-triggered reroute test.

use serde::{Deserialize, Serialize};

use crate::radio::{
    aggregate_interference, received_power, sinr, ActiveTransmitter, ChannelModel, NodeId, Placement, RadioError,
};

/// A frame on the air from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub transmitter: NodeId,
    pub power: f64,
    pub start: f64,
    pub end: f64,
}

impl Transmission {
    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub signal: f64,
    pub interference: f64,
    pub sinr: f64,
    pub delivered: bool,
}

/// Decides whether `receiver` decodes `frame`.
///
/// Every transmission in `concurrent` that overlaps the frame in time counts
/// as interference for its whole duration. Delivery needs `sinr >= threshold`.
pub fn adjudicate_reception(
    frame: &Transmission,
    receiver: NodeId,
    placement: &Placement,
    channel: &ChannelModel,
    concurrent: &[Transmission],
    threshold: f64,
) -> Result<Reception, RadioError> {
    let signal = received_power(
        frame.power,
        placement.distance(frame.transmitter, receiver),
        channel.alpha,
    )?;
    let active: Vec<ActiveTransmitter> = concurrent
        .iter()
        .filter(|t| t.overlaps(frame))
        .map(|t| ActiveTransmitter {
            node: t.transmitter,
            power: t.power,
        })
        .collect();
    let interference = aggregate_interference(receiver, frame.transmitter, &active, placement, channel.alpha)?;
    let sinr = sinr(signal, interference, channel);
    Ok(Reception {
        signal,
        interference,
        sinr,
        delivered: sinr >= threshold,
    })
}

/// Transmit power picked for a data hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerChoice {
    pub power: f64,
    /// The link needs more than `p_max` to reach the target SINR.
    pub marginal: bool,
}

/// Inputs to [`adapt_power`]. `margin` and `threshold` are ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTarget {
    pub p_max: f64,
    pub threshold: f64,
    pub margin: f64,
    pub noise_variance: f64,
    pub alpha: f64,
}

pub const POWER_FLOOR_FRACTION: f64 = 0.01;

/// Smallest power that meets `threshold * margin` at a next hop `distance`
/// away which last reported `interference`, kept within
/// `[p_max / 100, p_max]`.
pub fn adapt_power(target: &PowerTarget, interference: f64, distance: f64) -> PowerChoice {
    let required =
        target.threshold * target.margin * (interference + target.noise_variance) * distance.powf(target.alpha);
    let floor = target.p_max * POWER_FLOOR_FRACTION;
    if required > target.p_max {
        PowerChoice {
            power: target.p_max,
            marginal: true,
        }
    } else {
        PowerChoice {
            power: required.max(floor),
            marginal: false,
        }
    }
}

/// Joules spent sending `bits` at `power` watts.
pub fn account_energy(power: f64, bits: u32, data_rate: f64) -> f64 {
    power * (f64::from(bits) / data_rate)
}

pub const REROUTE_WINDOW: usize = 5;
pub const REROUTE_MIN_FAILURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerouteDecision {
    Keep,
    Rediscover,
}

/// Looks at the most recent [`REROUTE_WINDOW`] samples and asks for a new
/// route when at least [`REROUTE_MIN_FAILURES`] fell below `threshold`.
pub fn reroute_check(samples: &[f64], threshold: f64) -> RerouteDecision {
    let recent = &samples[samples.len().saturating_sub(REROUTE_WINDOW)..];
    let failures = recent.iter().filter(|&&s| s < threshold).count();
    if failures >= REROUTE_MIN_FAILURES {
        RerouteDecision::Rediscover
    } else {
        RerouteDecision::Keep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{Position, ReceptionMode};

    fn line(xs: &[f64]) -> Placement {
        Placement::from_positions(xs.iter().map(|&x| Position::new(x, 0.0)).collect()).unwrap()
    }

    fn tx(node: u32, power: f64, start: f64, end: f64) -> Transmission {
        Transmission {
            transmitter: NodeId(node),
            power,
            start,
            end,
        }
    }

    #[test]
    fn lone_frame_in_sir_mode_is_delivered() {
        let channel = ChannelModel::new(3.0, 0.0, 1e-12, ReceptionMode::Sir).unwrap();
        let p = line(&[0.0, 50.0]);
        let r = adjudicate_reception(&tx(0, 1.0, 0.0, 1.0), NodeId(1), &p, &channel, &[], 1e6).unwrap();
        assert_eq!(r.sinr, f64::INFINITY);
        assert!(r.delivered);
    }

    #[test]
    fn sinr_at_threshold_is_delivered() {
        // Signal 1/8, interferer 1/8 at the receiver, no noise: SIR exactly 1.
        let channel = ChannelModel::new(3.0, 0.0, 1e-12, ReceptionMode::Sir).unwrap();
        let p = line(&[0.0, 2.0, 4.0]);
        let frame = tx(0, 1.0, 0.0, 1.0);
        let others = [tx(2, 1.0, 0.5, 1.5)];
        let r = adjudicate_reception(&frame, NodeId(1), &p, &channel, &others, 1.0).unwrap();
        assert_eq!(r.sinr, 1.0);
        assert!(r.delivered);
        let r = adjudicate_reception(&frame, NodeId(1), &p, &channel, &others, 1.0 + 1e-12).unwrap();
        assert!(!r.delivered);
    }

    #[test]
    fn frames_that_do_not_overlap_are_ignored() {
        let channel = ChannelModel::new(3.0, 0.0, 1e-12, ReceptionMode::Sir).unwrap();
        let p = line(&[0.0, 2.0, 4.0]);
        let frame = tx(0, 1.0, 1.0, 2.0);
        // Touching at the edges is not overlap.
        let others = [tx(2, 1.0, 0.0, 1.0), tx(2, 1.0, 2.0, 3.0)];
        let r = adjudicate_reception(&frame, NodeId(1), &p, &channel, &others, 1.0).unwrap();
        assert_eq!(r.interference, 0.0);
    }

    fn target(threshold: f64, margin: f64) -> PowerTarget {
        PowerTarget {
            p_max: 1.0,
            threshold,
            margin,
            noise_variance: 1e-10,
            alpha: 3.0,
        }
    }

    #[test]
    fn tiny_requirement_is_clamped_to_floor() {
        let c = adapt_power(&target(2.0, 2.0), 0.0, 1.0);
        assert_eq!(c.power, 0.01);
        assert!(!c.marginal);
    }

    #[test]
    fn exact_p_max_requirement_is_not_marginal() {
        // 1 * 1 * (0.5 + 0.5) * 1^3 = 1 exactly.
        let t = PowerTarget {
            noise_variance: 0.5,
            ..target(1.0, 1.0)
        };
        let c = adapt_power(&t, 0.5, 1.0);
        assert_eq!(c.power, 1.0);
        assert!(!c.marginal);
        let c = adapt_power(&t, 0.75, 1.0);
        assert_eq!(c.power, 1.0);
        assert!(c.marginal);
    }

    #[test]
    fn chosen_power_meets_target_under_reported_interference() {
        let t = target(2.5, 2.0);
        for (interference, d) in [(1e-9, 120.0), (3e-8, 200.0), (0.0, 280.0), (5e-9, 90.0)] {
            let c = adapt_power(&t, interference, d);
            let predicted = c.power / d.powi(3) / (interference + t.noise_variance);
            if !c.marginal {
                assert!(predicted >= t.threshold * t.margin * (1.0 - 1e-12), "{predicted}");
            }
        }
    }

    #[test]
    fn energy_examples() {
        assert!((account_energy(1.0, 4096, 1e6) - 4.096e-3).abs() < 1e-18);
        assert_eq!(account_energy(1.0, 0, 1e6), 0.0);
    }

    #[test]
    fn reroute_rule() {
        assert_eq!(reroute_check(&[5.0; 5], 2.0), RerouteDecision::Keep);
        assert_eq!(
            reroute_check(&[5.0, 1.0, 1.0, 1.0, 5.0], 2.0),
            RerouteDecision::Rediscover
        );
        assert_eq!(reroute_check(&[5.0, 1.0, 1.0, 5.0, 5.0], 2.0), RerouteDecision::Keep);
        // Only the last five samples count.
        assert_eq!(
            reroute_check(&[1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0], 2.0),
            RerouteDecision::Keep
        );
    }
}
