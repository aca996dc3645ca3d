//! Throughput, outage and energy figures computed from traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::db_to_ratio;
use crate::routing::Protocol;
use crate::sim::{SimulationTrace, TraceEvent};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("delivered count {delivered} exceeds sent count {sent}; the trace is inconsistent")]
    DeliveredExceedsSent { delivered: u64, sent: u64 },
    #[error("outage is undefined without SINR samples")]
    NoSamples,
}

/// Fraction of packets that arrived; zero when nothing was sent.
pub fn throughput(delivered: u64, sent: u64) -> Result<f64, MetricsError> {
    if delivered > sent {
        return Err(MetricsError::DeliveredExceedsSent { delivered, sent });
    }
    if sent == 0 {
        return Ok(0.0);
    }
    Ok(delivered as f64 / sent as f64)
}

/// Fraction of `samples` at or below `threshold`.
pub fn outage(samples: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let hits = samples.iter().filter(|&&s| s <= threshold).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Figures for a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub in_flight: u64,
    /// Delivered over finished packets (delivered + lost).
    pub throughput: f64,
    /// `None` when no packet finished.
    pub outage: Option<f64>,
    pub total_energy: f64,
    pub mean_energy: f64,
    pub reroutes: u64,
    pub failed_flows: u64,
}

impl RunMetrics {
    pub fn from_trace(trace: &SimulationTrace) -> Result<Self, MetricsError> {
        let threshold = db_to_ratio(trace.header.config.sinr_threshold_db);
        let n_nodes = trace.header.positions.len();
        let mut sent = 0;
        let mut delivered = 0;
        let mut lost = 0;
        let mut samples = Vec::new();
        let mut energy = vec![0.0; n_nodes];
        let mut reroutes = 0;
        let mut failed_flows = 0;
        for (_, subject, event) in trace.events() {
            match *event {
                TraceEvent::PacketSent { .. } => sent += 1,
                TraceEvent::PacketDelivered { route_sinr, .. } => {
                    delivered += 1;
                    samples.push(route_sinr);
                }
                TraceEvent::PacketLost { route_sinr, .. } => {
                    lost += 1;
                    samples.push(route_sinr);
                }
                TraceEvent::FrameTx { energy: e, .. } => energy[subject.index()] += e,
                TraceEvent::Reroute { .. } => reroutes += 1,
                TraceEvent::DiscoveryFailed { .. } => failed_flows += 1,
                _ => {}
            }
        }
        let finished = delivered + lost;
        let total_energy: f64 = energy.iter().sum();
        Ok(RunMetrics {
            sent,
            delivered,
            lost,
            in_flight: sent - finished.min(sent),
            throughput: throughput(delivered, finished)?,
            outage: match outage(&samples, threshold) {
                Ok(v) => Some(v),
                Err(MetricsError::NoSamples) => None,
                Err(e) => return Err(e),
            },
            total_energy,
            mean_energy: if n_nodes == 0 {
                0.0
            } else {
                total_energy / n_nodes as f64
            },
            reroutes,
            failed_flows,
        })
    }
}

/// Per-node energy recomputed from the frame records.
pub fn replay_energy(trace: &SimulationTrace) -> Vec<f64> {
    let mut energy = vec![0.0; trace.header.positions.len()];
    for (_, subject, event) in trace.events() {
        if let TraceEvent::FrameTx { energy: e, .. } = event {
            energy[subject.index()] += e;
        }
    }
    energy
}

/// Per-node energy as reported at the end of the run.
pub fn reported_energy(trace: &SimulationTrace) -> Vec<f64> {
    let mut energy = vec![0.0; trace.header.positions.len()];
    for (_, subject, event) in trace.events() {
        if let TraceEvent::NodeEnergy { energy: e } = event {
            energy[subject.index()] = *e;
        }
    }
    energy
}

/// Seed-aggregated figures for one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub protocol: Protocol,
    pub n_nodes: usize,
    pub sinr_threshold_db: f64,
    pub delta: f64,
    pub seed_count: usize,
    pub throughput_mean: f64,
    pub throughput_stderr: f64,
    pub outage_mean: f64,
    pub outage_stderr: f64,
    pub energy_mean_j: f64,
    pub energy_stderr_j: f64,
}

/// Mean and standard error of the mean; the error is zero for one sample.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
