//! Scenario configuration.
//!
//! Configs are TOML files of flat `key = value` pairs plus an optional
//! `[[flows]]` list. Every key has a default, so an empty file is a valid
//! scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::{db_to_ratio, ChannelModel, NodeId, RadioError, ReceptionMode};
use crate::routing::{CreatedTerm, MetricPolicy, Protocol};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Radio(#[from] RadioError),
}

impl ConfigError {
    /// Converts a TOML error, resolving its byte span to a 1-based line.
    pub fn from_toml(err: toml::de::Error, text: &str) -> Self {
        let line = err
            .span()
            .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
        ConfigError::Parse {
            line,
            message: err.message().to_string(),
        }
    }
}

/// A unicast data flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub source: NodeId,
    pub destination: NodeId,
    /// Time the source starts route discovery, seconds.
    pub start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_nodes: usize,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    pub p_max: f64,
    pub alpha: f64,
    pub noise_variance: f64,
    pub detection_threshold: f64,
    pub sinr_threshold_db: f64,
    /// Cooperation parameter of the IACR metric.
    pub delta: f64,
    pub protocol: Protocol,
    pub created_term: CreatedTerm,
    pub sir_mode: bool,
    pub power_adaptation: bool,
    pub power_margin_db: f64,
    pub rerouting: bool,
    /// Bits per second.
    pub data_rate: f64,
    /// Bits.
    pub packet_size: u32,
    pub send_interval: f64,
    pub hello_interval: f64,
    pub establishment_time: f64,
    pub sim_duration: f64,
    /// Upper bound of the uniform forwarding delay for route requests.
    pub forward_jitter: f64,
    /// How long a destination collects requests before replying.
    pub reply_window: f64,
    /// How long a source waits for a reply before retrying.
    pub discovery_timeout: f64,
    /// Extra flows between randomly chosen connected pairs.
    pub random_flows: usize,
    /// Random flows start uniformly in `[establishment_time, establishment_time + spread)`.
    pub flow_start_spread: f64,
    pub seed: u64,
    pub flows: Vec<FlowSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_nodes: 30,
            area_side: 1000.0,
            p_max: 1.0,
            alpha: 3.0,
            noise_variance: 1e-10,
            // 1 W reaches 300 m at alpha = 3.
            detection_threshold: 1.0 / 2.7e7,
            sinr_threshold_db: 4.0,
            delta: 0.5,
            protocol: Protocol::Iacr,
            created_term: CreatedTerm::ExcludingRelay,
            sir_mode: false,
            power_adaptation: false,
            power_margin_db: 3.0,
            rerouting: true,
            data_rate: 1e6,
            packet_size: 4096,
            send_interval: 0.1,
            hello_interval: 0.2,
            establishment_time: 3.0,
            sim_duration: 20.0,
            forward_jitter: 0.01,
            reply_window: 0.2,
            discovery_timeout: 0.6,
            random_flows: 0,
            flow_start_spread: 1.0,
            seed: 1,
            flows: Vec::new(),
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError::Invalid(msg()))
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    ensure(v.is_finite() && v > 0.0, || format!("{name} must be positive, got {v}"))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::from_toml(e, text))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The effective config, defaults included.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.n_nodes >= 1, || "n_nodes must be at least 1".into())?;
        positive("area_side", self.area_side)?;
        positive("p_max", self.p_max)?;
        positive("data_rate", self.data_rate)?;
        positive("send_interval", self.send_interval)?;
        positive("hello_interval", self.hello_interval)?;
        positive("sim_duration", self.sim_duration)?;
        positive("reply_window", self.reply_window)?;
        positive("discovery_timeout", self.discovery_timeout)?;
        ensure(self.packet_size > 0, || "packet_size must be positive".into())?;
        ensure(self.sinr_threshold_db.is_finite(), || {
            "sinr_threshold_db must be finite".into()
        })?;
        ensure(self.power_margin_db.is_finite() && self.power_margin_db >= 0.0, || {
            format!("power_margin_db must be >= 0, got {}", self.power_margin_db)
        })?;
        ensure((0.0..=1.0).contains(&self.delta), || {
            format!("delta must lie in [0, 1], got {}", self.delta)
        })?;
        ensure(self.forward_jitter.is_finite() && self.forward_jitter >= 0.0, || {
            "forward_jitter must be >= 0".into()
        })?;
        ensure(
            self.flow_start_spread.is_finite() && self.flow_start_spread >= 0.0,
            || "flow_start_spread must be >= 0".into(),
        )?;
        ensure(
            self.establishment_time.is_finite() && self.establishment_time >= 0.0,
            || "establishment_time must be >= 0".into(),
        )?;
        ensure(self.establishment_time < self.sim_duration, || {
            format!(
                "establishment_time ({}) must be smaller than sim_duration ({})",
                self.establishment_time, self.sim_duration
            )
        })?;
        ensure(self.send_interval > self.airtime(self.packet_size), || {
            format!(
                "send_interval ({} s) must exceed the packet airtime ({} s)",
                self.send_interval,
                self.airtime(self.packet_size)
            )
        })?;
        for (k, f) in self.flows.iter().enumerate() {
            ensure(
                f.source.index() < self.n_nodes && f.destination.index() < self.n_nodes,
                || format!("flow {k}: node ids must be below n_nodes ({})", self.n_nodes),
            )?;
            ensure(f.source != f.destination, || {
                format!("flow {k}: source and destination must differ")
            })?;
            ensure(f.start.is_finite() && f.start >= self.establishment_time, || {
                format!(
                    "flow {k}: start ({}) must not precede establishment_time ({})",
                    f.start, self.establishment_time
                )
            })?;
        }
        self.channel()?;
        Ok(())
    }

    pub fn channel(&self) -> Result<ChannelModel, RadioError> {
        let mode = if self.sir_mode {
            ReceptionMode::Sir
        } else {
            ReceptionMode::Sinr
        };
        ChannelModel::new(self.alpha, self.noise_variance, self.detection_threshold, mode)
    }

    pub fn policy(&self) -> MetricPolicy {
        MetricPolicy::for_protocol(self.protocol, self.delta, self.created_term)
    }

    pub fn sinr_threshold(&self) -> f64 {
        db_to_ratio(self.sinr_threshold_db)
    }

    pub fn power_margin(&self) -> f64 {
        db_to_ratio(self.power_margin_db)
    }

    /// Seconds on air for a frame of `bits`.
    pub fn airtime(&self, bits: u32) -> f64 {
        f64::from(bits) / self.data_rate
    }
}
