//! `iacr-sim`: run scenarios and sweeps, check routing against the oracle,
//! and replay traces.
//!
//! Exit status: 0 on success, 1 when a run fails or a check finds a
//! discrepancy, 2 when the configuration or the command line is invalid.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use iacr_core::config::{ConfigError, ScenarioConfig};
use iacr_core::metrics::{replay_energy, reported_energy, RunMetrics};
use iacr_core::radio::NodeId;
use iacr_core::routing::{bfs_hop_count, discover_route, oracle_best_route, MetricPolicy, Protocol};
use iacr_core::sim::{run, sample_placement, SimulationTrace, Simulator};
use iacr_core::sweep::{run_sweep, write_csv, SweepManifest, SweepSpec};

/// Output directory used when neither `--out` nor this variable is set.
const DEFAULT_OUT_DIR: &str = "out";
const OUT_DIR_ENV: &str = "IACR_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "iacr-sim",
    version,
    about = "Interference-aware routing simulator for wireless ad hoc networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace and metrics.
    Run(RunArgs),
    /// Run a parameter sweep and write a CSV plus a run manifest.
    Sweep(SweepArgs),
    /// Compare flooded routes with the centralized optimum on random placements.
    OracleCheck(OracleArgs),
    /// Recompute metrics from a trace and compare them with the stored ones.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Output {
    /// Output directory [env: IACR_OUT_DIR, default: ./out]
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Output {
    fn dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

/// Flags that override values from the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "threshold-db", allow_hyphen_values = true)]
    threshold_db: Option<f64>,
    #[arg(long)]
    flows: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long = "power-adaptation")]
    power_adaptation: Option<bool>,
    #[arg(long)]
    rerouting: Option<bool>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(seed => seed, nodes => n_nodes, protocol => protocol, delta => delta,
             threshold_db => sinr_threshold_db, flows => random_flows, duration => sim_duration,
             power_adaptation => power_adaptation, rerouting => rerouting);
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML; defaults apply to every key it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep TOML.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    /// Replace the seed list with 1..=N.
    #[arg(long)]
    seeds: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct OracleArgs {
    /// Scenario TOML used as the template for every placement.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    #[arg(long, default_value_t = 200)]
    trials: u64,
    /// Side of the deployment area, meters.
    #[arg(long, default_value_t = 500.0)]
    area: f64,
    /// Seed of the first placement; trial k uses seed + k.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace written by `run`.
    #[arg(long)]
    trace: PathBuf,
    /// Stored metrics; defaults to `metrics.json` next to the trace.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| failure(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(failure)?;
    tmp.write_all(bytes).map_err(failure)?;
    tmp.persist(path)
        .map_err(|e| failure(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    Ok(match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    })
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = load_scenario(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let trace = run(&cfg).map_err(failure)?;
    let metrics = RunMetrics::from_trace(&trace).map_err(failure)?;
    let dir = args.output.dir();
    write_atomic(&dir.join("trace.jsonl"), &trace.to_jsonl_bytes())?;
    let mut json = serde_json::to_vec_pretty(&metrics).map_err(failure)?;
    json.push(b'\n');
    write_atomic(&dir.join("metrics.json"), &json)?;
    println!(
        "{} nodes, {} flows, {}: sent {} delivered {} lost {}",
        cfg.n_nodes,
        trace.header.flows.len(),
        cfg.protocol,
        metrics.sent,
        metrics.delivered,
        metrics.lost
    );
    println!(
        "throughput {:.4}  outage {}  mean energy {:.6} J",
        metrics.throughput,
        metrics.outage.map_or("n/a".into(), |o| format!("{o:.4}")),
        metrics.mean_energy
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let spec_error = |e| {
        if SweepSpec::is_spec_error(&e) {
            CliError::Config(e.to_string())
        } else {
            failure(e)
        }
    };
    let mut spec = SweepSpec::load(&args.config).map_err(spec_error)?;
    if let Some(n) = args.seeds {
        spec.seeds = (1..=n).collect();
        spec.validate().map_err(spec_error)?;
    }
    if args.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let outcome = run_sweep(&spec, args.jobs).map_err(spec_error)?;
    let dir = args.output.dir();
    let mut csv = Vec::new();
    write_csv(&outcome.records, &mut csv).map_err(failure)?;
    let csv_path = dir.join(format!("{}.csv", spec.scenario));
    write_atomic(&csv_path, &csv)?;
    let manifest_path = dir.join(format!("{}.manifest.json", spec.scenario));
    write_atomic(&manifest_path, &SweepManifest::new(&spec, &outcome).to_json_bytes())?;
    println!("{} rows -> {}", outcome.records.len(), csv_path.display());
    println!("manifest -> {}", manifest_path.display());
    let failed: Vec<_> = outcome.failed_runs().collect();
    if failed.is_empty() {
        return Ok(());
    }
    for r in &failed {
        eprintln!(
            "run failed: {} value {} seed {}: {}",
            r.protocol,
            r.value,
            r.seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Err(failure(format!(
        "{} of {} runs failed",
        failed.len(),
        outcome.runs.len()
    )))
}

fn cmd_oracle_check(args: &OracleArgs) -> Result<(), CliError> {
    let mut template = load_scenario(args.config.as_deref())?;
    template.n_nodes = args.nodes;
    template.area_side = args.area;
    template.random_flows = 0;
    template.flows.clear();
    template.validate()?;
    let mut checked = 0u64;
    let mut mismatches = 0u64;
    for trial in 0..args.trials {
        let cfg = ScenarioConfig {
            seed: args.seed + trial,
            ..template.clone()
        };
        let placement = sample_placement(&cfg).map_err(failure)?;
        let mut sim = Simulator::new(&cfg, placement).map_err(failure)?;
        sim.run_until(cfg.establishment_time).map_err(failure)?;
        let tables = sim.info_tables();
        for protocol in Protocol::ALL {
            let policy = MetricPolicy::for_protocol(protocol, cfg.delta, cfg.created_term);
            for s in 0..cfg.n_nodes {
                for d in 0..cfg.n_nodes {
                    let (s, d) = (NodeId::from(s), NodeId::from(d));
                    if s == d || bfs_hop_count(tables, s, d).is_none() {
                        continue;
                    }
                    checked += 1;
                    let found = discover_route(tables, &policy, s, d);
                    let best = oracle_best_route(tables, &policy, s, d);
                    let agree = match (&found, &best) {
                        (Some(f), Some(b)) => f.path == b.path && (f.cost - b.cost).abs() <= 1e-9 * b.cost.abs(),
                        (None, None) => true,
                        _ => false,
                    };
                    if !agree {
                        mismatches += 1;
                        eprintln!(
                            "mismatch: seed {} {protocol} {s:?}->{d:?}: flooded {:?} oracle {:?}",
                            cfg.seed,
                            found.map(|f| (f.path, f.cost)),
                            best.map(|b| (b.path, b.cost))
                        );
                    }
                }
            }
        }
    }
    println!(
        "{} placements of {} nodes, {checked} routes checked: {mismatches} mismatches",
        args.trials, args.nodes
    );
    if mismatches == 0 {
        Ok(())
    } else {
        Err(failure(format!("{mismatches} routes differ from the oracle")))
    }
}

fn cmd_replay(args: &ReplayArgs) -> Result<(), CliError> {
    let file =
        fs::File::open(&args.trace).map_err(|e| failure(format!("cannot open {}: {e}", args.trace.display())))?;
    let trace = SimulationTrace::read_jsonl(std::io::BufReader::new(file)).map_err(failure)?;
    let metrics = RunMetrics::from_trace(&trace).map_err(failure)?;
    let stored_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| args.trace.with_file_name("metrics.json"));
    let mut problems = Vec::new();
    if replay_energy(&trace) != reported_energy(&trace) {
        problems.push("per-node energy totals differ from the frame records".to_string());
    }
    match fs::read(&stored_path) {
        Ok(bytes) => {
            let stored: RunMetrics =
                serde_json::from_slice(&bytes).map_err(|e| failure(format!("{}: {e}", stored_path.display())))?;
            let recomputed = serde_json::to_value(&metrics).map_err(failure)?;
            let before = serde_json::to_value(&stored).map_err(failure)?;
            if let (Some(a), Some(b)) = (before.as_object(), recomputed.as_object()) {
                for (key, old) in a {
                    if b.get(key) != Some(old) {
                        problems.push(format!(
                            "{key}: stored {old}, replayed {}",
                            b.get(key).unwrap_or(&serde_json::Value::Null)
                        ));
                    }
                }
            }
        }
        Err(_) if args.metrics.is_none() => {}
        Err(e) => return Err(failure(format!("cannot read {}: {e}", stored_path.display()))),
    }
    println!(
        "replayed {} records: sent {} delivered {} lost {} throughput {:.4}",
        trace.records.len(),
        metrics.sent,
        metrics.delivered,
        metrics.lost,
        metrics.throughput
    );
    if problems.is_empty() {
        println!("metrics match");
        Ok(())
    } else {
        for p in &problems {
            eprintln!("difference: {p}");
        }
        Err(failure(format!("{} differences", problems.len())))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
