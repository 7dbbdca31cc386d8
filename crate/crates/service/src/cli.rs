use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use flowcq::cql::row_to_json;
use flowcq::event::{
    decode_event, from_csv_line, to_csv_line, CaseId, LifecycleState, ModelId, Payload, RawExecutionEvent, Scalar,
};
use flowcq::log::{export_csv, export_ndjson, read_control, read_events, ControlOp, ControlRecord, CONTROL_FILE, EVENTS_FILE};
use flowcq::runtime::{
    CaseStatus, Config, DeployedModel, ErrorClass, MigrationPolicy, ModelSpec, Runtime, RuntimeError,
};
use thiserror::Error;

pub const DEFAULT_DATA_DIR: &str = "flowcq-data";

#[derive(Parser, Debug)]
#[command(name = "flowcq", version, about = "Run BPMN and DCR models on a continuous-query engine")]
struct Cli {
    /// Directory holding the event log; reopened (and replayed) on every run.
    #[arg(long, global = true, env = "FLOWCQ_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// TOML runtime configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Deploy a model file (.bpmn, .dcr.xml, .dcr.json or a hybrid .toml manifest).
    Deploy { file: PathBuf },
    /// Deploy a new version of a BPMN model.
    Migrate {
        file: PathBuf,
        #[arg(long)]
        policy: Option<MigrationPolicy>,
    },
    /// Start a case; prints its id.
    Start {
        model: u64,
        /// Case variables as key=value.
        vars: Vec<String>,
    },
    /// Submit a completed event for a case.
    Send {
        case: u64,
        node: String,
        /// Payload entries as key=value.
        vars: Vec<String>,
        #[arg(long)]
        ts: Option<u64>,
    },
    /// List the work a case offers.
    Enabled { case: u64 },
    /// Print the state-table rows of a case.
    State { case: u64 },
    /// List cases and their status.
    Cases,
    /// Export the event log.
    Log {
        #[arg(long)]
        case: Option<u64>,
        #[arg(long)]
        model: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Rebuild state from a log directory or an exported event file and
    /// print the final status of every case.
    Replay {
        path: PathBuf,
        /// Models to deploy first when replaying a bare event file.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
    },
    /// Drive one case from the terminal until it completes.
    RunInteractive {
        /// Model file, or the id of a deployed model.
        model: String,
        /// Start payload as key=value.
        vars: Vec<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Ndjson,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Fault(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Fault(_) => 2,
        }
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        let prefix = match e.class() {
            ErrorClass::Malformed => "bad request",
            ErrorClass::NotFound => "not found",
            ErrorClass::Conflict => "conflict",
            ErrorClass::Fault => return CliError::Fault(format!("engine fault: {e}")),
        };
        CliError::User(format!("{prefix}: {e}"))
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::User(e.to_string())
}

/// Terminal streams handed to a command.
pub struct Stdio<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I, io: Stdio<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = write!(io.err, "{e}");
            return code;
        }
    };
    match execute(cli, io.input, io.out, io.err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}

fn config(cli: &Cli) -> Result<Config, CliError> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| CliError::User(e.to_string()))?,
        None => Config::default(),
    };
    if let Some(d) = &cli.data_dir {
        c.data_dir = Some(d.clone());
    }
    if c.data_dir.is_none() {
        c.data_dir = Some(DEFAULT_DATA_DIR.into());
    }
    Ok(c)
}

/// Parses `key=value` words with the loose scalar syntax.
pub fn parse_vars(words: &[String]) -> Result<Payload, CliError> {
    words
        .iter()
        .map(|w| {
            let (k, v) = w
                .split_once('=')
                .filter(|(k, _)| !k.trim().is_empty())
                .ok_or_else(|| CliError::User(format!("expected key=value, got {w:?}")))?;
            Ok((k.trim().to_string(), Scalar::parse_loose(v)))
        })
        .collect()
}

fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = config(&cli)?;
    if let Command::Replay { path, models } = &cli.command {
        return replay(config, path, models, out);
    }
    let rt = Runtime::open(config)?;
    match cli.command {
        Command::Deploy { file } => {
            let d = rt.deploy(&ModelSpec::from_path(&file)?)?;
            print_deployed(out, &d)?;
        }
        Command::Migrate { file, policy } => {
            let d = rt.migrate(&ModelSpec::from_path(&file)?, policy)?;
            print_deployed(out, &d)?;
        }
        Command::Start { model, vars } => {
            let o = rt.start_case(ModelId(model), parse_vars(&vars)?, None)?;
            writeln!(out, "{}", o.case).map_err(io_err)?;
        }
        Command::Send { case, node, vars, ts } => {
            let rec = rt.case(CaseId(case)).ok_or(RuntimeError::UnknownCase(CaseId(case)))?;
            let ts = ts.map_or_else(|| rt.next_ts(Some(CaseId(case))), flowcq::event::Timestamp);
            let e = RawExecutionEvent::new(rec.model, rec.case, node, LifecycleState::Completed, parse_vars(&vars)?, ts);
            let o = rt.submit(e)?;
            for e in &o.events {
                writeln!(out, "{}", to_csv_line(e)).map_err(io_err)?;
            }
        }
        Command::Enabled { case } => {
            for w in rt.enabled_work(CaseId(case))? {
                writeln!(out, "{}", w.node).map_err(io_err)?;
            }
        }
        Command::State { case } => {
            for r in rt.state(CaseId(case))? {
                writeln!(out, "{}", row_to_json(&r)).map_err(io_err)?;
            }
        }
        Command::Cases => {
            for c in rt.cases() {
                writeln!(out, "{} model={} version={} {}", c.case, c.model, c.version, c.status.as_str())
                    .map_err(io_err)?;
            }
        }
        Command::Log { case, model, format } => {
            let events = rt.log();
            let (m, c) = (model.map(ModelId), case.map(CaseId));
            let text = match format {
                Format::Csv => export_csv(&events, m, c),
                Format::Ndjson => export_ndjson(&events, m, c),
            };
            out.write_all(text.as_bytes()).map_err(io_err)?;
        }
        Command::RunInteractive { model, vars } => {
            let model = resolve_model(&rt, &model)?;
            let status = interactive(&rt, model, parse_vars(&vars)?, input, out, err)?;
            if status == CaseStatus::Faulted {
                return Err(CliError::Fault("case faulted".into()));
            }
        }
        Command::Serve { addr } => {
            let tokio = tokio::runtime::Runtime::new().map_err(io_err)?;
            tokio.block_on(crate::api::serve(Arc::new(rt), &addr)).map_err(io_err)?;
        }
        Command::Replay { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn print_deployed(out: &mut dyn Write, d: &DeployedModel) -> Result<(), CliError> {
    writeln!(out, "model {} version {} ({}, {} rules)", d.model, d.version, d.kind.as_str(), d.rule_ids.len())
        .map_err(io_err)
}

/// A deployed model id, or a model file deployed now unless an identical
/// source is already live.
fn resolve_model(rt: &Runtime, arg: &str) -> Result<ModelId, CliError> {
    if let Ok(id) = arg.parse::<u64>() {
        return rt
            .loaded(ModelId(id))
            .map(|_| ModelId(id))
            .ok_or_else(|| RuntimeError::UnknownModel(ModelId(id)).into());
    }
    let spec = ModelSpec::from_path(Path::new(arg))?;
    let digest = spec.digest();
    if let Some(d) = rt.models().into_iter().find(|d| d.digest == digest) {
        return Ok(d.model);
    }
    Ok(rt.deploy(&spec)?.model)
}

fn print_completed(out: &mut dyn Write, events: &[RawExecutionEvent]) -> Result<(), CliError> {
    for e in events.iter().filter(|e| e.state == LifecycleState::Completed) {
        writeln!(out, "{}", to_csv_line(e)).map_err(io_err)?;
    }
    Ok(())
}

/// Starts a case and loops: list the offered work, read a choice (a name
/// or its 1-based position) and a line of key=value pairs, submit. Ends
/// when the case leaves the running state or input runs out.
pub fn interactive(
    rt: &Runtime,
    model: ModelId,
    start: Payload,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    prompt: &mut dyn Write,
) -> Result<CaseStatus, CliError> {
    let started = rt.start_case(model, start, None)?;
    let case = started.case;
    print_completed(out, &started.events)?;
    let mut line = String::new();
    loop {
        let running = rt.case(case).is_some_and(|c| c.status == CaseStatus::Running);
        let work: Vec<String> = if running {
            rt.enabled_work(case)?.into_iter().map(|w| w.node).collect()
        } else {
            Vec::new()
        };
        let listed = if work.is_empty() { "None".to_string() } else { work.join(", ") };
        writeln!(out, "\tAvailable tasks are: {listed}").map_err(io_err)?;
        out.flush().map_err(io_err)?;
        if work.is_empty() {
            break;
        }
        let choice = loop {
            write!(prompt, "task> ").map_err(io_err)?;
            prompt.flush().map_err(io_err)?;
            line.clear();
            if input.read_line(&mut line).map_err(io_err)? == 0 {
                return Ok(rt.case(case).map_or(CaseStatus::Running, |c| c.status));
            }
            let t = line.trim();
            let picked = t
                .parse::<usize>()
                .ok()
                .and_then(|i| i.checked_sub(1))
                .and_then(|i| work.get(i))
                .or_else(|| work.iter().find(|w| w.as_str() == t));
            match picked {
                Some(w) => break w.clone(),
                None => writeln!(prompt, "not offered: {t:?}").map_err(io_err)?,
            }
        };
        write!(prompt, "payload> ").map_err(io_err)?;
        prompt.flush().map_err(io_err)?;
        line.clear();
        input.read_line(&mut line).map_err(io_err)?;
        let words: Vec<String> = line.split_whitespace().map(String::from).collect();
        let payload = match parse_vars(&words) {
            Ok(p) => p,
            Err(e) => {
                writeln!(prompt, "{e}").map_err(io_err)?;
                continue;
            }
        };
        let e = RawExecutionEvent::new(model, case, choice, LifecycleState::Completed, payload, rt.next_ts(Some(case)));
        match rt.submit(e) {
            Ok(o) => print_completed(out, &o.events)?,
            Err(e) if e.class() == ErrorClass::Fault => {
                writeln!(prompt, "engine fault: {e}").map_err(io_err)?;
                return Ok(CaseStatus::Faulted);
            }
            Err(e) => writeln!(prompt, "{}", CliError::from(e)).map_err(io_err)?,
        }
    }
    Ok(rt.case(case).map_or(CaseStatus::Running, |c| c.status))
}

fn replay(config: Config, path: &Path, models: &[PathBuf], out: &mut dyn Write) -> Result<(), CliError> {
    let log_err = |e: flowcq::log::LogError| CliError::User(e.to_string());
    let (control, events) = if path.is_dir() {
        (
            read_control(&path.join(CONTROL_FILE)).map_err(log_err)?,
            read_events(&path.join(EVENTS_FILE)).map_err(log_err)?,
        )
    } else {
        let mut control = Vec::new();
        for m in models {
            control.push(ControlRecord { at: 0, op: ControlOp::Deploy { spec: ModelSpec::from_path(m)? } });
        }
        (control, read_event_file(path)?)
    };
    let (_, report) = Runtime::replay(config, &control, &events)?;
    for (case, status) in &report.statuses {
        writeln!(out, "case {case}: {}", status.as_str()).map_err(io_err)?;
    }
    writeln!(
        out,
        "{} events resubmitted, {} faults, log {}",
        report.submitted,
        report.faults,
        if report.log_matches { "reproduced" } else { "differs" }
    )
    .map_err(io_err)?;
    Ok(())
}

/// Newline-delimited wire events, or CSV lines when the file ends in `.csv`.
fn read_event_file(path: &Path) -> Result<Vec<RawExecutionEvent>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    let csv = path.extension().is_some_and(|x| x == "csv");
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r = if csv { from_csv_line(l) } else { decode_event(l.as_bytes()) };
            r.map_err(|e| CliError::User(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}
