//! Parameter sweeps over protocols and seeds, with CSV and manifest output.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::metrics::{mean_and_stderr, MetricsRecord, RunMetrics};
use crate::routing::Protocol;
use crate::sim::run;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Significant digits kept in every reported figure.
pub const SIGNIFICANT_DIGITS: usize = 12;

pub const CSV_COLUMNS: [&str; 11] = [
    "protocol",
    "n_nodes",
    "sinr_threshold_db",
    "delta",
    "seed_count",
    "throughput_mean",
    "throughput_stderr",
    "outage_mean",
    "outage_stderr",
    "energy_mean_j",
    "energy_stderr_j",
];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep has no values")]
    NoValues,
    #[error("sweep values must be strictly increasing; {next} follows {prev}")]
    NotIncreasing { prev: f64, next: f64 },
    #[error("sweep has no seeds")]
    NoSeeds,
    #[error("sweep has no protocols")]
    NoProtocols,
    #[error("node count {0} is not a positive integer")]
    BadNodeCount(f64),
    #[error("nodes_per_flow must be at least 1")]
    BadFlowRatio,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv column `{column}`: cannot parse `{value}`")]
    CsvValue { column: &'static str, value: String },
    #[error("csv header does not match the expected columns")]
    CsvHeader,
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    NodeCount,
    SinrThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub scenario: String,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub protocols: Vec<Protocol>,
    /// When set, each run draws `max(1, n_nodes / nodes_per_flow)` random
    /// flows; otherwise the base config's flow settings are used as is.
    #[serde(default)]
    pub nodes_per_flow: Option<usize>,
    #[serde(default)]
    pub base: ScenarioConfig,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SweepError> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| ConfigError::from_toml(e, text))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// True for errors caused by the spec itself rather than by running it.
    pub fn is_spec_error(err: &SweepError) -> bool {
        matches!(
            err,
            SweepError::NoValues
                | SweepError::NotIncreasing { .. }
                | SweepError::NoSeeds
                | SweepError::NoProtocols
                | SweepError::BadNodeCount(_)
                | SweepError::BadFlowRatio
                | SweepError::Config(_)
        )
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::NoValues);
        }
        for pair in self.values.windows(2) {
            if pair[1].partial_cmp(&pair[0]) != Some(std::cmp::Ordering::Greater) {
                return Err(SweepError::NotIncreasing {
                    prev: pair[0],
                    next: pair[1],
                });
            }
        }
        if self.seeds.is_empty() {
            return Err(SweepError::NoSeeds);
        }
        if self.protocols.is_empty() {
            return Err(SweepError::NoProtocols);
        }
        if self.nodes_per_flow == Some(0) {
            return Err(SweepError::BadFlowRatio);
        }
        for &v in &self.values {
            self.cell_config(Protocol::Iacr, v, self.seeds[0])?;
        }
        Ok(())
    }

    /// The config of a single run.
    pub fn cell_config(&self, protocol: Protocol, value: f64, seed: u64) -> Result<ScenarioConfig, SweepError> {
        let mut cfg = self.base.clone();
        cfg.protocol = protocol;
        cfg.seed = seed;
        match self.parameter {
            SweepParameter::NodeCount => {
                if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                    return Err(SweepError::BadNodeCount(value));
                }
                cfg.n_nodes = value as usize;
            }
            SweepParameter::SinrThreshold => cfg.sinr_threshold_db = value,
        }
        if let Some(ratio) = self.nodes_per_flow {
            cfg.random_flows = (cfg.n_nodes / ratio).max(1);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One simulation inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub protocol: Protocol,
    pub value: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// One record per (protocol, value) cell that had at least one usable run,
    /// ordered by protocol then value.
    pub records: Vec<MetricsRecord>,
    /// Every run, ordered by (protocol, value, seed).
    pub runs: Vec<RunRecord>,
}

impl SweepOutcome {
    pub fn failed_runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.error.is_some())
    }

    pub fn record(&self, protocol: Protocol, value: f64, parameter: SweepParameter) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| {
            r.protocol == protocol
                && match parameter {
                    SweepParameter::NodeCount => r.n_nodes as f64 == value,
                    SweepParameter::SinrThreshold => r.sinr_threshold_db == value,
                }
        })
    }
}

/// Runs every (protocol, value, seed) combination on up to `jobs` threads
/// (all cores when `None`) and aggregates per cell.
///
/// A run that fails is kept in [`SweepOutcome::runs`] with its error and left
/// out of the aggregate. So is a run in which no packet finished, since its
/// throughput and outage are undefined.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<SweepOutcome, SweepError> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &protocol in &spec.protocols {
        for &value in &spec.values {
            for &seed in &spec.seeds {
                cells.push((protocol, value, seed));
            }
        }
    }
    let execute = || -> Vec<RunRecord> {
        cells
            .par_iter()
            .map(|&(protocol, value, seed)| {
                let result = spec
                    .cell_config(protocol, value, seed)
                    .map_err(|e| e.to_string())
                    .and_then(|cfg| run(&cfg).map_err(|e| e.to_string()))
                    .and_then(|trace| RunMetrics::from_trace(&trace).map_err(|e| e.to_string()));
                let (metrics, error) = match result {
                    Ok(m) => (Some(m), None),
                    Err(e) => (None, Some(e)),
                };
                RunRecord {
                    protocol,
                    value,
                    seed,
                    metrics,
                    error,
                }
            })
            .collect()
    };
    let runs = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(execute),
        None => execute(),
    };

    let mut records = Vec::new();
    for (cell, chunk) in runs.chunks(spec.seeds.len()).enumerate() {
        let usable: Vec<&RunMetrics> = chunk
            .iter()
            .filter_map(|r| r.metrics.as_ref())
            .filter(|m| m.outage.is_some())
            .collect();
        if usable.is_empty() {
            continue;
        }
        let (protocol, value, seed) = cells[cell * spec.seeds.len()];
        let cfg = spec.cell_config(protocol, value, seed)?;
        let column = |f: fn(&RunMetrics) -> f64| mean_and_stderr(&usable.iter().map(|m| f(m)).collect::<Vec<_>>());
        let (throughput_mean, throughput_stderr) = column(|m| m.throughput);
        let (outage_mean, outage_stderr) = column(|m| m.outage.unwrap_or_default());
        let (energy_mean_j, energy_stderr_j) = column(|m| m.mean_energy);
        records.push(MetricsRecord {
            protocol,
            n_nodes: cfg.n_nodes,
            sinr_threshold_db: round_significant(cfg.sinr_threshold_db),
            delta: round_significant(cfg.delta),
            seed_count: usable.len(),
            throughput_mean: round_significant(throughput_mean),
            throughput_stderr: round_significant(throughput_stderr),
            outage_mean: round_significant(outage_mean),
            outage_stderr: round_significant(outage_stderr),
            energy_mean_j: round_significant(energy_mean_j),
            energy_stderr_j: round_significant(energy_stderr_j),
        });
    }
    Ok(SweepOutcome { records, runs })
}

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_significant(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)
        .parse()
        .expect("formatted float parses")
}

/// Plain decimal text of an already rounded value; parses back exactly.
fn decimal(v: f64) -> String {
    format!("{}", round_significant(v))
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.protocol.as_str().to_string(),
            r.n_nodes.to_string(),
            decimal(r.sinr_threshold_db),
            decimal(r.delta),
            r.seed_count.to_string(),
            decimal(r.throughput_mean),
            decimal(r.throughput_stderr),
            decimal(r.outage_mean),
            decimal(r.outage_stderr),
            decimal(r.energy_mean_j),
            decimal(r.energy_stderr_j),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>, SweepError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(CSV_COLUMNS) {
        return Err(SweepError::CsvHeader);
    }
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |k: usize| row.get(k).unwrap_or_default();
        fn parse<T: std::str::FromStr>(column: &'static str, text: &str) -> Result<T, SweepError> {
            text.parse().map_err(|_| SweepError::CsvValue {
                column,
                value: text.to_string(),
            })
        }
        let num = |k: usize| parse::<f64>(CSV_COLUMNS[k], field(k));
        records.push(MetricsRecord {
            protocol: parse(CSV_COLUMNS[0], field(0))?,
            n_nodes: parse(CSV_COLUMNS[1], field(1))?,
            sinr_threshold_db: num(2)?,
            delta: num(3)?,
            seed_count: parse(CSV_COLUMNS[4], field(4))?,
            throughput_mean: num(5)?,
            throughput_stderr: num(6)?,
            outage_mean: num(7)?,
            outage_stderr: num(8)?,
            energy_mean_j: num(9)?,
            energy_stderr_j: num(10)?,
        });
    }
    Ok(records)
}

/// Everything needed to rerun a sweep, plus each run's figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub format: u32,
    pub spec: SweepSpec,
    pub runs: Vec<RunRecord>,
}

impl SweepManifest {
    pub fn new(spec: &SweepSpec, outcome: &SweepOutcome) -> Self {
        SweepManifest {
            format: MANIFEST_FORMAT_VERSION,
            spec: spec.clone(),
            runs: outcome.runs.clone(),
        }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }
}
