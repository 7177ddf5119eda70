//! `fieldlab` command-line tool.
//!
//! Exit codes: 0 success, 1 validation findings or a failed check, 2 usage
//! or runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use fieldlab::aggregation::{oracle_aggregate, parse_event_log, AggEvent, AggregateFn, AggregateState};
use fieldlab::asset::{parse_asset, validate_asset, Finding, ValidationReport};
use fieldlab::service::{fold, read_event_log, Service, ServiceConfig, ServiceState};
use fieldlab::simulator::{replay, run_cohort, Scenario, SimulationLog};
use fieldlab::time::SystemClock;

#[derive(Parser)]
#[command(name = "fieldlab", version, about = "Geolocated crowd-sensing experiments")]
struct Cli {
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate an asset document.
    Validate { asset: PathBuf },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "FIELDLAB_CONFIG")]
        config: PathBuf,
    },
    /// Run a scenario and write its simulation log.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the task export here.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Write the export of one task from a simulation log or a service data directory.
    Export {
        #[arg(long)]
        task: String,
        #[arg(long, conflicts_with = "data_dir", required_unless_present = "data_dir")]
        log: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute an aggregate with both the engine and the oracle.
    Aggregate {
        /// Simulation log or aggregation event log.
        #[arg(long)]
        log: PathBuf,
        #[arg(long = "fn", default_value = "avg")]
        function: String,
        /// Task to aggregate when the log is a simulation log (default: every task).
        #[arg(long)]
        task: Option<String>,
    },
    /// Replay a simulation log and check that it reproduces itself.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

enum Failure {
    /// Exit 1: the input was understood and a check failed.
    Check(Value, String),
    /// Exit 2.
    Runtime(String),
}

type Outcome = Result<(Value, String), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let format = cli.format;
    let emit = |v: &Value, text: &str| match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(v).expect("json")),
        Format::Text => print!("{text}"),
    };
    match run(cli.command) {
        Ok((v, text)) => {
            emit(&v, &text);
            ExitCode::SUCCESS
        }
        Err(Failure::Check(v, text)) => {
            emit(&v, &text);
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            match format {
                Format::Json => println!("{}", json!({ "error": msg })),
                Format::Text => eprintln!("error: {msg}"),
            }
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Validate { asset } => validate(&asset),
        Command::Serve { config } => serve(&config),
        Command::Simulate { scenario, out, export } => simulate(&scenario, &out, export.as_deref()),
        Command::Export { task, log, data_dir, out } => {
            let state = match (log, data_dir) {
                (Some(log), _) => state_from_log(&log)?,
                (None, Some(dir)) => {
                    let events = read_event_log(&dir.join(fieldlab::service::EVENTS_FILE)).map_err(runtime)?;
                    fold(&events).map_err(runtime)?
                }
                (None, None) => return Err(Failure::Runtime("--log or --data-dir is required".into())),
            };
            let text = state.export_task(&task).ok_or_else(|| Failure::Runtime(format!("unknown task {task}")))?;
            let lines = text.lines().count();
            match out {
                Some(p) => {
                    write(&p, &text)?;
                    Ok((json!({ "task": task, "lines": lines, "out": p }), format!("wrote {lines} lines to {}\n", p.display())))
                }
                None => Ok((json!({ "task": task, "export": text }), text)),
            }
        }
        Command::Aggregate { log, function, task } => aggregate(&log, &function, task.as_deref()),
        Command::Replay { log } => {
            let sim = SimulationLog::from_ndjson(&read(&log)?).map_err(runtime)?;
            let recorded = fold(sim.events()).map_err(runtime)?;
            match replay(&sim) {
                Ok(out) => {
                    let equal = recorded.tasks.keys().all(|t| recorded.export_task(t).as_ref() == out.exports.get(t));
                    let v = json!({ "entries": sim.entries.len(), "tasks": out.exports.len(), "exports_equal": equal });
                    if equal {
                        Ok((v, format!("replay ok: {} entries, exports byte-equal\n", sim.entries.len())))
                    } else {
                        Err(Failure::Check(v, "replay diverged: exports differ\n".into()))
                    }
                }
                Err(e) => Err(Failure::Check(json!({ "error": e.to_string() }), format!("{e}\n"))),
            }
        }
    }
}

fn validate(path: &Path) -> Outcome {
    let text = read(path)?;
    let report = match parse_asset(&text) {
        Ok(asset) => validate_asset(&asset),
        Err(e) => ValidationReport {
            findings: vec![Finding { path: e.path().unwrap_or("").to_string(), message: e.to_string() }],
            notes: vec![],
        },
    };
    let mut text = format!("{} findings\n", report.findings.len());
    for f in &report.findings {
        text.push_str(&format!("  {}: {}\n", if f.path.is_empty() { "<document>" } else { &f.path }, f.message));
    }
    for n in &report.notes {
        text.push_str(&format!("  note: {}: {}\n", n.path, n.message));
    }
    let v = serde_json::to_value(&report).expect("report serializes");
    if report.is_clean() {
        Ok((v, text))
    } else {
        Err(Failure::Check(v, text))
    }
}

fn serve(config: &Path) -> Outcome {
    let config = ServiceConfig::load(config).map_err(runtime)?;
    let listen = config.listen.clone();
    let svc = Service::new(config, Arc::new(SystemClock)).map_err(runtime)?;
    eprintln!("listening on {listen}");
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(fieldlab::service::http::serve(Arc::new(svc))).map_err(runtime)?;
    Ok((json!({ "stopped": true }), String::new()))
}

fn simulate(scenario: &Path, out: &Path, export: Option<&Path>) -> Outcome {
    let (s, doc) = Scenario::load(scenario).map_err(runtime)?;
    let run = run_cohort(&s.cohort(&doc).map_err(runtime)?).map_err(runtime)?;
    write(out, &run.log.to_ndjson())?;
    let text_export = run.export();
    if let Some(p) = export {
        write(p, &text_export)?;
    }
    let answers = text_export.lines().filter(|l| l.contains("\"record\":\"answer\"")).count();
    let v = json!({
        "scenario": s.name,
        "task": run.task_id,
        "entries": run.log.entries.len(),
        "events": run.service.state().seq,
        "answers": answers,
        "log": out,
    });
    let text = format!(
        "{}: {} requests, {} events, {} answers; log written to {}\n",
        s.name,
        run.log.entries.len(),
        run.service.state().seq,
        answers,
        out.display()
    );
    Ok((v, text))
}

fn state_from_log(path: &Path) -> Result<ServiceState, Failure> {
    let sim = SimulationLog::from_ndjson(&read(path)?).map_err(runtime)?;
    fold(sim.events()).map_err(runtime)
}

fn aggregate(path: &Path, function: &str, task: Option<&str>) -> Outcome {
    let f: AggregateFn = function.parse().map_err(runtime)?;
    let text = read(path)?;
    let logs: Vec<(String, Vec<AggEvent>)> = match parse_event_log(&text) {
        Ok(events) => vec![("log".into(), events)],
        Err(_) => {
            let state = state_from_log(path)?;
            state
                .aggregate_log
                .into_iter()
                .filter(|(t, _)| task.is_none_or(|x| x == t))
                .collect()
        }
    };
    if logs.is_empty() {
        return Err(Failure::Runtime("no aggregation events found".into()));
    }
    let mut rows = Vec::new();
    let mut out = String::new();
    let mut all_equal = true;
    for (t, events) in &logs {
        let mut state = AggregateState::new(t.clone());
        let mut mismatches = 0usize;
        let (mut engine, mut oracle) = (None, None);
        for i in 0..events.len() {
            state.apply(&events[i]).map_err(runtime)?;
            engine = state.read(f);
            oracle = oracle_aggregate(&events[..=i], f).map_err(runtime)?;
            if !close(engine, oracle) {
                mismatches += 1;
            }
        }
        let equal = mismatches == 0;
        all_equal &= equal;
        let show = |v: Option<f64>| v.map_or("empty".to_string(), |x| x.to_string());
        out.push_str(&format!(
            "{t}: {f} over {} events: engine {} oracle {} ({} mismatching prefixes)\n",
            events.len(),
            show(engine),
            show(oracle),
            mismatches
        ));
        rows.push(json!({
            "task": t, "fn": f, "events": events.len(), "engine": engine, "oracle": oracle,
            "mismatches": mismatches, "equal": equal,
        }));
    }
    let v = Value::Array(rows);
    if all_equal {
        Ok((v, out))
    } else {
        Err(Failure::Check(v, out))
    }
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(1.0),
        (x, y) => x == y,
    }
}
