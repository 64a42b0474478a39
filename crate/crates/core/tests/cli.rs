use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;

use fleetlab::service::http::spawn;
use fleetlab::service::{CloudService, ServiceConfig};
use fleetlab::sim::{default_experiment, default_function, Scenario, DEFAULT_EXPERIMENT};

const BIN: &str = env!("CARGO_BIN_EXE_fleetlab");

fn fleetlab(url: &str, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("FLEETLAB_URL", url)
        .env_remove("FLEETLAB_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok_json(url: &str, args: &[&str]) -> Value {
    let out = fleetlab(url, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{args:?}: {e}"))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn error_code(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let body: Value =
        serde_json::from_str(line.lines().last().unwrap_or_default()).expect("JSON error line");
    body["error"].as_str().unwrap_or_default().to_string()
}

#[test]
fn operator_workflow_end_to_end() {
    let service = Arc::new(CloudService::new(ServiceConfig::default()));
    let handle = spawn(Arc::clone(&service), "127.0.0.1:0").unwrap();
    let url = handle.url();
    let dir = tempfile::tempdir().unwrap();

    let function = write_json(dir.path(), "function.json", &default_function());
    let experiment = write_json(
        dir.path(),
        "experiment.json",
        &default_experiment(&default_function()),
    );
    let scenario = write_json(
        dir.path(),
        "scenario.json",
        &Scenario {
            fleet_size: 8,
            sim_days: 2,
            experiment: None,
            ..Scenario::default()
        },
    );

    ok_json(&url, &["release", &function]);
    let created = ok_json(
        &url,
        &["exp", "create", DEFAULT_EXPERIMENT, "--file", &experiment],
    );
    assert_eq!(created["state"], "Draft");

    // A report with no data is a valid, empty report.
    let empty = fleetlab(&url, &["exp", "report", DEFAULT_EXPERIMENT]);
    assert!(empty.status.success());
    assert!(String::from_utf8_lossy(&empty.stdout).contains("records 0"));

    assert_eq!(
        ok_json(&url, &["exp", "activate", DEFAULT_EXPERIMENT])["state"],
        "Active"
    );
    let run = ok_json(&url, &["sim", "run", "--scenario", &scenario]);
    let generated = run["stats"]["generated"].as_u64().unwrap();
    assert!(generated > 0);
    assert_eq!(service.store().len() as u64, generated);

    let report = ok_json(&url, &["exp", "report", DEFAULT_EXPERIMENT, "--json"]);
    assert!(report["health"]["total_records"].as_u64().unwrap() > 0);

    let rejected = fleetlab(
        &url,
        &[
            "exp",
            "adjust",
            DEFAULT_EXPERIMENT,
            "treatment",
            "--set",
            "soc_target=0.95",
        ],
    );
    assert!(!rejected.status.success());
    assert_eq!(error_code(&rejected), "OutOfBounds");
    let adjusted = ok_json(
        &url,
        &[
            "exp",
            "adjust",
            DEFAULT_EXPERIMENT,
            "treatment",
            "--set",
            "soc_target=0.75",
            "--set",
            "eco_mode=true",
        ],
    );
    assert_eq!(
        adjusted["variants"][1]["cloud_overrides"]["soc_target"],
        0.75
    );
    assert_eq!(adjusted["variants"][1]["cloud_overrides"]["eco_mode"], true);

    assert_eq!(
        ok_json(&url, &["exp", "repartition", DEFAULT_EXPERIMENT])["epoch"],
        1
    );
    assert_eq!(
        ok_json(&url, &["exp", "pause", DEFAULT_EXPERIMENT])["state"],
        "Paused"
    );
    assert_eq!(
        ok_json(&url, &["exp", "resume", DEFAULT_EXPERIMENT])["state"],
        "Active"
    );
    assert_eq!(
        ok_json(&url, &["exp", "conclude", DEFAULT_EXPERIMENT])["state"],
        "Concluded"
    );
    let live = ok_json(&url, &["exp", "live", DEFAULT_EXPERIMENT, "--json"]);
    assert_eq!(live["state"], "Concluded");
    assert_eq!(ok_json(&url, &["exp", "list"]).as_array().unwrap().len(), 1);
    assert_eq!(
        ok_json(&url, &["exp", "audit", DEFAULT_EXPERIMENT])
            .as_array()
            .unwrap()
            .len(),
        7
    );

    let csv = dir.path().join("export.csv");
    let out = fleetlab(
        &url,
        &[
            "data",
            "export",
            DEFAULT_EXPERIMENT,
            "--epoch",
            "0",
            "--out",
            &csv.to_string_lossy(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = fleetlab::store::parse_csv(&std::fs::read(&csv).unwrap()).unwrap();
    assert_eq!(
        rows.len() as u64,
        report["health"]["total_records"].as_u64().unwrap()
    );

    let missing = fleetlab(&url, &["exp", "show", "nope"]);
    assert!(!missing.status.success());
    assert_eq!(error_code(&missing), "UnknownExperiment");
}

#[test]
fn offline_simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_json(
        dir.path(),
        "scenario.json",
        &Scenario {
            fleet_size: 5,
            sim_days: 2,
            ..Scenario::default()
        },
    );
    let logs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let log = dir.path().join(format!("events-{i}.ndjson"));
            let out = Command::new(BIN)
                .args([
                    "sim",
                    "run",
                    "--scenario",
                    &scenario,
                    "--seed",
                    "9",
                    "--event-log",
                ])
                .arg(&log)
                .env_remove("FLEETLAB_URL")
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{}",
                String::from_utf8_lossy(&out.stderr)
            );
            let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
            assert!(summary["report"].is_object());
            std::fs::read(log).unwrap()
        })
        .collect();
    assert!(!logs[0].is_empty());
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn unreachable_service_is_a_transport_error() {
    let out = fleetlab("http://127.0.0.1:9", &["exp", "list"]);
    assert!(!out.status.success());
    assert_eq!(error_code(&out), "Transport");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_reads_its_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    write_json(dir.path(), "energy.json", &default_function());
    let config = dir.path().join("fleetlab.toml");
    std::fs::write(
        &config,
        format!("bind = \"127.0.0.1:{port}\"\nfunction_specs = [\"energy.json\"]\nstore_dir = \"data\"\n"),
    )
    .unwrap();
    let _server = Server(
        Command::new(BIN)
            .args(["serve", "--config"])
            .arg(&config)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let url = format!("http://127.0.0.1:{port}");
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let out = fleetlab(&url, &["exp", "list"]);
        if out.status.success() {
            break;
        }
        assert!(Instant::now() < deadline, "service did not come up");
        std::thread::sleep(Duration::from_millis(100));
    }
    let functions: Value = serde_json::from_slice(
        &ureq::get(&format!("{url}/functions"))
            .call()
            .unwrap()
            .body_mut()
            .read_to_vec()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(functions[0]["function_id"], "energy_management");
    assert!(dir.path().join("data").exists());
}
