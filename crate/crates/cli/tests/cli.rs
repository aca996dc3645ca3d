use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iacr-sim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("IACR_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const SMALL_SCENARIO: &str = "n_nodes = 12\nrandom_flows = 2\nsim_duration = 6.0\nseed = 3\n";

const SMALL_SWEEP: &str = r#"
scenario = "small"
parameter = "node-count"
values = [20, 30, 40]
seeds = [1, 2]
protocols = ["IACR", "MHC", "IAEE"]
nodes_per_flow = 10

[base]
sim_duration = 5.0
"#;

#[test]
fn run_then_replay_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL_SCENARIO).unwrap();
    let out = sim(&["run", "--config", "s.toml", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("res/trace.jsonl").is_file());
    assert!(dir.path().join("res/metrics.json").is_file());

    let out = sim(&["replay", "--trace", "res/trace.jsonl"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("metrics match"));

    // Tampered metrics are reported.
    let path = dir.path().join("res/metrics.json");
    let mut stored: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    stored["delivered"] = serde_json::json!(999_999);
    fs::write(&path, serde_json::to_vec(&stored).unwrap()).unwrap();
    let out = sim(&["replay", "--trace", "res/trace.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("delivered"), "{}", text(&out.stderr));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL_SCENARIO).unwrap();
    let out = sim(
        &[
            "run",
            "--config",
            "s.toml",
            "--seed",
            "11",
            "--protocol",
            "mhc",
            "--out",
            "res",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("res/trace.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["seed"], 11);
    assert_eq!(header["config"]["protocol"], "MHC");
    // Untouched keys still come from the file.
    assert_eq!(header["config"]["n_nodes"], 12);
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL_SCENARIO).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_iacr-sim"))
        .args(["run", "--config", "s.toml"])
        .current_dir(dir.path())
        .env("IACR_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("from-env/trace.jsonl").is_file());
}

#[test]
fn malformed_config_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "n_nodes = 10\nseed = \"x\n").unwrap();
    let out = sim(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line 2"), "{}", text(&out.stderr));

    fs::write(dir.path().join("bad.toml"), "n_nodes = 10\n\nwarp_speed = 9\n").unwrap();
    let out = sim(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line 3"), "{}", text(&out.stderr));

    let out = sim(&["run", "--delta", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sim(&["fly"], dir.path()).status.code(), Some(2));
}

#[test]
fn oracle_check_finds_no_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let out = sim(&["oracle-check", "--nodes", "8", "--trials", "200"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains(" 0 mismatches"), "{}", text(&out.stdout));
}

#[test]
fn sweep_writes_one_row_per_cell_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sweep.toml"), SMALL_SWEEP).unwrap();
    let a = sim(
        &["sweep", "--config", "sweep.toml", "--jobs", "1", "--out", "a"],
        dir.path(),
    );
    assert!(a.status.success(), "{}", text(&a.stderr));
    let b = sim(
        &["sweep", "--config", "sweep.toml", "--jobs", "3", "--out", "b"],
        dir.path(),
    );
    assert!(b.status.success(), "{}", text(&b.stderr));
    let csv_a = fs::read_to_string(dir.path().join("a/small.csv")).unwrap();
    let csv_b = fs::read_to_string(dir.path().join("b/small.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    assert_eq!(csv_a.lines().count(), 1 + 9);
    assert_eq!(
        fs::read(dir.path().join("a/small.manifest.json")).unwrap(),
        fs::read(dir.path().join("b/small.manifest.json")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/small.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 18);
    assert_eq!(manifest["spec"]["seeds"], serde_json::json!([1, 2]));
}

#[test]
fn sweep_rejects_unsorted_values() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.toml"),
        SMALL_SWEEP.replace("[20, 30, 40]", "[30, 20]"),
    )
    .unwrap();
    let out = sim(&["sweep", "--config", "sweep.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("increasing"), "{}", text(&out.stderr));
}

#[test]
fn bundled_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        let body = fs::read_to_string(&path).unwrap();
        let parsed = if body.contains("parameter =") {
            iacr_core::sweep::SweepSpec::from_toml_str(&body)
                .map(|_| ())
                .map_err(|e| e.to_string())
        } else {
            iacr_core::config::ScenarioConfig::from_toml_str(&body)
                .map(|_| ())
                .map_err(|e| e.to_string())
        };
        assert!(parsed.is_ok(), "{}: {:?}", path.display(), parsed);
    }
}
