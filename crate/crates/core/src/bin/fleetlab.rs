use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fleetlab::analysis::Report;
use fleetlab::client::{ClientError, HttpClient};
use fleetlab::model::{Experiment, FunctionSpec, LifecycleEvent, ParamValue, ParameterSet};
use fleetlab::service::http::{serve, ErrorBody};
use fleetlab::service::{CloudService, LiveSnapshot, ServiceConfig};
use fleetlab::sim::{self, Backend, RunStats, Scenario};

const DEFAULT_URL: &str = "http://127.0.0.1:8080";

#[derive(Parser)]
#[command(
    name = "fleetlab",
    version,
    about = "Vehicle fleet A/B experimentation"
)]
struct Cli {
    /// Service base URL.
    #[arg(long, global = true, env = "FLEETLAB_URL")]
    url: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment service and telemetry store.
    Serve {
        #[arg(long, env = "FLEETLAB_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Fleet simulation.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Experiment definition and steering.
    #[command(subcommand)]
    Exp(ExpCommand),
    /// Telemetry data access.
    #[command(subcommand)]
    Data(DataCommand),
    /// Register a function specification, as shipped in a software release.
    Release { file: PathBuf },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Simulate a fleet. Runs against an in-process service unless --url is given.
    Run {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the NDJSON event log here.
        #[arg(long)]
        event_log: Option<PathBuf>,
    },
    /// Print the default scenario as JSON.
    Defaults,
}

#[derive(Args)]
struct JsonFlag {
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum ExpCommand {
    /// Create an experiment in Draft from a JSON definition.
    Create {
        id: String,
        #[arg(long)]
        file: PathBuf,
    },
    List,
    Show {
        id: String,
    },
    Activate {
        id: String,
    },
    Pause {
        id: String,
    },
    Resume {
        id: String,
    },
    Conclude {
        id: String,
    },
    /// Start a new assignment epoch.
    Repartition {
        id: String,
    },
    /// Replace a treatment's cloud overrides.
    Adjust {
        id: String,
        variant: String,
        /// name=value; repeatable.
        #[arg(long = "set", value_name = "NAME=VALUE", required = true)]
        set: Vec<String>,
    },
    Live {
        id: String,
        #[command(flatten)]
        format: JsonFlag,
    },
    Report {
        id: String,
        #[arg(long)]
        epoch: Option<u32>,
        #[command(flatten)]
        format: JsonFlag,
    },
    Audit {
        id: String,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Export an experiment's records as CSV.
    Export {
        id: String,
        #[arg(long)]
        epoch: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure reported as one JSON line on stderr.
struct Failure(ErrorBody);

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let message = match &e {
            ClientError::Rejected { message, .. } => message.clone(),
            other => other.to_string(),
        };
        Failure(ErrorBody {
            error: e.code().to_string(),
            message,
        })
    }
}

impl From<sim::SimError> for Failure {
    fn from(e: sim::SimError) -> Self {
        Failure(ErrorBody {
            error: e.code().to_string(),
            message: e.to_string(),
        })
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure(ErrorBody {
            error: "Error".into(),
            message: format!("{e:#}"),
        })
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    emit(&format!("{text}\n"))
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(anyhow::Error::from(e).context("writing output").into())
        }
        _ => Ok(()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `true`/`false`, integers and reals map to their kinds; anything else is
/// an enumeration value.
fn parse_assignment(raw: &str) -> anyhow::Result<(String, ParamValue)> {
    let (name, value) = raw
        .split_once('=')
        .with_context(|| format!("expected NAME=VALUE, got {raw:?}"))?;
    let value = match value {
        "true" => ParamValue::Boolean(true),
        "false" => ParamValue::Boolean(false),
        v => v
            .parse::<i64>()
            .map(ParamValue::Integer)
            .or_else(|_| v.parse::<f64>().map(ParamValue::Real))
            .unwrap_or_else(|_| ParamValue::Enumeration(v.to_string())),
    };
    Ok((name.to_string(), value))
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.digits$}"))
}

fn report_table(r: &Report) -> String {
    let mut out = String::new();
    let h = &r.health;
    let _ = writeln!(
        out,
        "experiment {}  epoch {}  state {:?}",
        r.experiment_id, r.epoch, h.state
    );
    let _ = writeln!(
        out,
        "records {}  out-of-range {}  clock-skew {}",
        h.total_records, h.out_of_range_records, h.clock_skew_records
    );
    for ((id, records), (_, vehicles)) in h.records_per_variant.iter().zip(&h.vehicles_per_variant)
    {
        let _ = writeln!(
            out,
            "  {id:<16} vehicles {vehicles:>6}  records {records:>10}"
        );
    }
    let _ = writeln!(
        out,
        "SRM p={:.3e}{}",
        h.srm.p_value,
        if h.srm.flagged {
            "  ** SAMPLE RATIO MISMATCH **"
        } else {
            ""
        }
    );
    for m in &r.metrics {
        let _ = writeln!(out, "\nmetric {} ({})", m.metric, m.observable);
        let _ = writeln!(
            out,
            "  {:<16} {:>6} {:>14} {:>14}",
            "variant", "n", "mean", "variance"
        );
        for v in &m.variants {
            let _ = writeln!(
                out,
                "  {:<16} {:>6} {:>14} {:>14}",
                v.variant_id,
                v.n,
                fmt_opt(v.mean, 6),
                fmt_opt(v.variance, 8)
            );
        }
        for c in &m.comparisons {
            match &c.error {
                Some(e) => {
                    let _ = writeln!(out, "  {} vs control: {e}", c.variant_id);
                }
                None => {
                    let _ = writeln!(
                        out,
                        "  {} vs control: delta {} ({}%)  95% CI [{}, {}]  p {}",
                        c.variant_id,
                        fmt_opt(c.delta, 6),
                        fmt_opt(c.relative_delta_pct, 2),
                        fmt_opt(c.ci_low, 6),
                        fmt_opt(c.ci_high, 6),
                        c.p_value.map_or_else(|| "-".into(), |p| format!("{p:.3e}")),
                    );
                }
            }
        }
    }
    out
}

fn live_table(s: &LiveSnapshot) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "experiment {}  state {:?}  epoch {}  open sessions {}",
        s.experiment_id, s.state, s.epoch, s.open_sessions
    );
    for (variant, n) in &s.records_per_variant {
        let _ = writeln!(out, "  {variant:<16} records {n:>10}");
    }
    for m in &s.running_means {
        let _ = writeln!(
            out,
            "  {:<16} {:<28} n {:>8}  mean {:.6}",
            m.variant_id, m.observable, m.count, m.mean
        );
    }
    for e in &s.audit_tail {
        let _ = writeln!(
            out,
            "  audit #{} {} {}",
            e.seq,
            e.at.to_rfc3339(),
            serde_json::to_string(&e.action).unwrap_or_default()
        );
    }
    out
}

#[derive(Serialize)]
struct SimSummary {
    stats: RunStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<Report>,
}

fn run_sim(
    url: Option<&str>,
    scenario: Option<PathBuf>,
    seed: Option<u64>,
    event_log: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut scenario = match scenario {
        Some(p) => Scenario::load(&p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let backend = match url {
        Some(u) => Backend::Remote(HttpClient::new(u)),
        None => Backend::Local(Arc::new(CloudService::new(ServiceConfig::default()))),
    };
    let outcome = sim::run_with(&scenario, backend)?;
    if let Some(path) = event_log {
        std::fs::write(&path, outcome.log.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let report = match (&outcome.service, &scenario.experiment) {
        (Some(s), Some(e)) => s.report(&e.experiment_id, None).ok(),
        _ => None,
    };
    print_json(&SimSummary {
        stats: outcome.stats,
        report,
    })
}

fn run_exp(client: &HttpClient, cmd: ExpCommand) -> Result<(), Failure> {
    let transition = |id: &str, e: LifecycleEvent| -> Result<(), Failure> {
        print_json(&client.transition(id, e)?)
    };
    match cmd {
        ExpCommand::Create { id, file } => {
            let mut experiment: Experiment = read_json(&file)?;
            experiment.experiment_id = id;
            print_json(&client.create_experiment(&experiment)?)
        }
        ExpCommand::List => print_json(&client.experiments()?),
        ExpCommand::Show { id } => print_json(&client.experiment(&id)?),
        ExpCommand::Activate { id } => transition(&id, LifecycleEvent::Activate),
        ExpCommand::Pause { id } => transition(&id, LifecycleEvent::Pause),
        ExpCommand::Resume { id } => transition(&id, LifecycleEvent::Resume),
        ExpCommand::Conclude { id } => transition(&id, LifecycleEvent::Conclude),
        ExpCommand::Repartition { id } => print_json(&client.repartition(&id)?),
        ExpCommand::Adjust { id, variant, set } => {
            let values = set
                .iter()
                .map(|s| parse_assignment(s))
                .collect::<anyhow::Result<Vec<_>>>()?;
            // The service validates names, types and bounds.
            let overrides: ParameterSet = serde_json::from_value(
                serde_json::to_value(
                    values
                        .into_iter()
                        .collect::<std::collections::BTreeMap<_, _>>(),
                )
                .context("encoding overrides")?,
            )
            .context("encoding overrides")?;
            print_json(&client.adjust(&id, &variant, &overrides)?)
        }
        ExpCommand::Live { id, format } => {
            let snapshot = client.live(&id)?;
            if format.json {
                print_json(&snapshot)
            } else {
                emit(&live_table(&snapshot))
            }
        }
        ExpCommand::Report { id, epoch, format } => {
            let report = client.report(&id, epoch)?;
            if format.json {
                print_json(&report)
            } else {
                emit(&report_table(&report))
            }
        }
        ExpCommand::Audit { id } => print_json(&client.audit(&id)?),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let url = cli.url.clone();
    let client = || HttpClient::new(url.as_deref().unwrap_or(DEFAULT_URL));
    match cli.command {
        Command::Serve { config } => {
            let config = match config {
                Some(p) => ServiceConfig::load(&p)?,
                None => ServiceConfig::default(),
            };
            let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
            runtime.block_on(serve(config))?;
            Ok(())
        }
        Command::Sim(SimCommand::Run {
            scenario,
            seed,
            event_log,
        }) => run_sim(url.as_deref(), scenario, seed, event_log),
        Command::Sim(SimCommand::Defaults) => print_json(&Scenario::default()),
        Command::Exp(cmd) => run_exp(&client(), cmd),
        Command::Data(DataCommand::Export { id, epoch, out }) => {
            let bytes = client().export_csv(&id, epoch)?;
            std::fs::write(&out, bytes).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
        Command::Release { file } => {
            let spec: FunctionSpec = read_json(&file)?;
            client().register_function(&spec)?;
            print_json(&serde_json::json!({ "registered": spec.function_id }))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FLEETLAB_LOG")
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(body)) => {
            let line = serde_json::to_string(&body)
                .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", body.error));
            let _ = writeln!(std::io::stderr(), "{line}");
            ExitCode::FAILURE
        }
    }
}
