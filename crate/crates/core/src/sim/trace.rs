//! Line-delimited JSON trace of a run.
//!
//! The first line is a header holding the effective config, the node
//! positions and the resolved flow list. Every following line is one
//! [`TraceRecord`]: `{"time": .., "subject": <node>, "kind": .., ...}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{FlowSpec, ScenarioConfig};
use crate::radio::{NodeId, Position};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace is empty")]
    Empty,
    #[error("unsupported trace format {0}")]
    Version(u32),
}

/// SINR values may be infinite; JSON has no infinity, so it is written as
/// the string `"inf"`.
mod sinr_value {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad SINR value `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub kind: String,
    pub format: u32,
    pub config: ScenarioConfig,
    pub positions: Vec<Position>,
    /// Configured flows followed by the randomly drawn ones; indices used in
    /// records refer to this list.
    pub flows: Vec<FlowSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Hello,
    IcpReply,
    Rreq,
    Rrep,
    Data,
}

impl FrameKind {
    pub fn bits(self, data_bits: u32) -> u32 {
        match self {
            FrameKind::Hello => 128,
            FrameKind::IcpReply => 256,
            FrameKind::Rreq | FrameKind::Rrep => 512,
            FrameKind::Data => data_bits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    /// A link on the route fell below the SINR threshold.
    Sinr,
    /// The source never found a route, or a relay had none.
    NoRoute,
    /// The packet exceeded the hop limit.
    HopLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    /// A frame left `subject`. `energy` is what it cost the transmitter.
    FrameTx {
        frame: u64,
        frame_kind: FrameKind,
        bits: u32,
        power: f64,
        energy: f64,
        receiver: Option<NodeId>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        marginal: bool,
    },
    /// One hop of a data packet, adjudicated at `receiver`.
    DataHop {
        flow: usize,
        packet: u64,
        frame: u64,
        receiver: NodeId,
        signal: f64,
        interference: f64,
        #[serde(with = "sinr_value")]
        sinr: f64,
        delivered: bool,
    },
    PacketSent {
        flow: usize,
        packet: u64,
    },
    PacketDelivered {
        flow: usize,
        packet: u64,
        hops: u32,
        #[serde(with = "sinr_value")]
        route_sinr: f64,
    },
    PacketLost {
        flow: usize,
        packet: u64,
        reason: LossReason,
        #[serde(with = "sinr_value")]
        route_sinr: f64,
    },
    DiscoveryStarted {
        flow: usize,
        sequence: u64,
        attempt: u32,
    },
    RouteEstablished {
        flow: usize,
        sequence: u64,
        path: Vec<NodeId>,
        metric: f64,
    },
    DiscoveryFailed {
        flow: usize,
    },
    Reroute {
        flow: usize,
        failures: usize,
    },
    FlowSummary {
        flow: usize,
        sent: u64,
        delivered: u64,
        lost: u64,
        in_flight: u64,
    },
    NodeEnergy {
        energy: f64,
    },
    SimEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub subject: NodeId,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl SimulationTrace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        serde_json::to_writer(&mut out, &self.header).map_err(|source| TraceError::Json { line: 1, source })?;
        out.write_all(b"\n")?;
        for (k, record) in self.records.iter().enumerate() {
            serde_json::to_writer(&mut out, record).map_err(|source| TraceError::Json { line: k + 2, source })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| match l {
            Ok(text) => !text.trim().is_empty(),
            Err(_) => true,
        });
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: TraceHeader =
            serde_json::from_str(&first?).map_err(|source| TraceError::Json { line: 1, source })?;
        if header.format != TRACE_FORMAT_VERSION {
            return Err(TraceError::Version(header.format));
        }
        let mut records = Vec::new();
        for (k, line) in lines {
            let record = serde_json::from_str(&line?).map_err(|source| TraceError::Json { line: k + 1, source })?;
            records.push(record);
        }
        Ok(SimulationTrace { header, records })
    }

    pub fn events(&self) -> impl Iterator<Item = (f64, NodeId, &TraceEvent)> {
        self.records.iter().map(|r| (r.time, r.subject, &r.event))
    }
}
