use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::bpmn::CompileOptions;
use crate::cql::Row;
use crate::event::{encode_event_string, CaseId, ModelId, Payload, RawExecutionEvent, Timestamp};
use crate::log::{read_control, read_events, ControlOp, ControlRecord, EventLog, CONTROL_FILE, EVENTS_FILE};
use crate::schema::PROCESS_EVENT;

use super::model::{LoadedModel, ModelSpec};
use super::orchestrator::Orchestrator;
use super::{
    CaseRecord, CaseStatus, Config, DeployedModel, MigrationPolicy, Notification, Outcome,
    RuntimeError, WorkItem,
};

pub const CASE_STATUS_STREAM: &str = "Case_Status";

#[derive(Default)]
struct Journal {
    events: Vec<RawExecutionEvent>,
    control: Vec<ControlRecord>,
    file: Option<EventLog>,
}

impl Journal {
    fn event(&mut self, e: &RawExecutionEvent) -> Result<(), RuntimeError> {
        self.events.push(e.clone());
        if let Some(f) = &mut self.file {
            f.append(e).map_err(|e| RuntimeError::Io(e.to_string()))?;
        }
        Ok(())
    }

    fn control(&mut self, op: ControlOp) -> Result<(), RuntimeError> {
        self.control.push(ControlRecord {
            at: self.events.len() as u64,
            op: op.clone(),
        });
        if let Some(f) = &mut self.file {
            f.append_control(op).map_err(|e| RuntimeError::Io(e.to_string()))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), RuntimeError> {
        match &mut self.file {
            Some(f) => f.flush().map_err(|e| RuntimeError::Io(e.to_string())),
            None => Ok(()),
        }
    }
}

/// Thread-safe runtime. Cases are spread over `workers` engines by case id;
/// deployment and migration lock every engine.
pub struct Runtime {
    shards: Vec<Mutex<Orchestrator>>,
    last_case: AtomicU64,
    journal: Mutex<Journal>,
    subscribers: Mutex<Vec<mpsc::Sender<Notification>>>,
    config: Config,
}

fn wall_clock() -> Timestamp {
    Timestamp(
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    )
}

/// Summary of a replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub submitted: usize,
    pub faults: usize,
    /// The regenerated log equals the input event for event.
    pub log_matches: bool,
    pub statuses: Vec<(CaseId, CaseStatus)>,
}

impl Runtime {
    pub fn new(config: Config) -> Self {
        Self::with_options(config, CompileOptions::default())
    }

    pub fn with_options(config: Config, opts: CompileOptions) -> Self {
        let shards = (0..config.workers.max(1))
            .map(|_| {
                let mut o = Orchestrator::new(opts);
                o.set_max_steps(config.max_cascade_steps);
                Mutex::new(o)
            })
            .collect();
        Runtime {
            shards,
            last_case: AtomicU64::new(0),
            journal: Mutex::new(Journal::default()),
            subscribers: Mutex::new(Vec::new()),
            config,
        }
    }

    /// A runtime persisting to `config.data_dir`; an existing log there is
    /// replayed first.
    pub fn open(config: Config) -> Result<Self, RuntimeError> {
        let rt = Runtime::new(config.clone());
        if let Some(dir) = &config.data_dir {
            let ev = dir.join(EVENTS_FILE);
            if ev.exists() {
                let control = read_control(&dir.join(CONTROL_FILE))
                    .map_err(|e| RuntimeError::Io(e.to_string()))?;
                let events = read_events(&ev).map_err(|e| RuntimeError::Io(e.to_string()))?;
                rt.replay_into(&control, &events)?;
            }
            let log = EventLog::open(dir).map_err(|e| RuntimeError::Io(e.to_string()))?;
            rt.journal().file = Some(log);
        }
        Ok(rt)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    fn journal(&self) -> MutexGuard<'_, Journal> {
        self.journal.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn shard(&self, case: CaseId) -> MutexGuard<'_, Orchestrator> {
        let i = (case.0 % self.shards.len() as u64) as usize;
        self.shards[i].lock().unwrap_or_else(|p| p.into_inner())
    }

    fn all_shards(&self) -> Vec<MutexGuard<'_, Orchestrator>> {
        self.shards
            .iter()
            .map(|s| s.lock().unwrap_or_else(|p| p.into_inner()))
            .collect()
    }

    pub fn subscribe(&self) -> mpsc::Receiver<Notification> {
        let (tx, rx) = mpsc::channel();
        self.subscribers
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(tx);
        rx
    }

    fn notify(&self, items: Vec<Notification>) {
        if items.is_empty() {
            return;
        }
        let mut subs = self.subscribers.lock().unwrap_or_else(|p| p.into_inner());
        subs.retain(|s| items.iter().all(|n| s.send(n.clone()).is_ok()));
    }

    fn event_note(e: &RawExecutionEvent) -> Notification {
        Notification {
            stream: PROCESS_EVENT.into(),
            record: serde_json::from_str(&encode_event_string(e)).unwrap_or_default(),
        }
    }

    fn status_note(case: CaseId, status: CaseStatus) -> Notification {
        Notification {
            stream: CASE_STATUS_STREAM.into(),
            record: serde_json::json!({"caseID": case.0, "status": status.as_str()}),
        }
    }

    fn fault_note(&self, e: &RawExecutionEvent, message: String) -> Notification {
        Notification {
            stream: self.config.diagnostics_stream.clone(),
            record: serde_json::json!({
                "pmID": e.model.0, "caseID": e.case.0, "nodeID": e.node,
                "kind": "fault", "message": message, "ts": e.ts.0,
            }),
        }
    }

    fn publish(&self, out: &Outcome) {
        let mut notes: Vec<Notification> = out.events.iter().map(Self::event_note).collect();
        notes.extend(out.diagnostics.iter().map(|d| Notification {
            stream: self.config.diagnostics_stream.clone(),
            record: d.clone(),
        }));
        if out.status != CaseStatus::Running {
            notes.push(Self::status_note(out.case, out.status));
        }
        self.notify(notes);
    }

    /// Journals and publishes the result of one ingestion. A fault journals
    /// the submission alone.
    fn settle(
        &self,
        e: &RawExecutionEvent,
        r: Result<Outcome, RuntimeError>,
    ) -> Result<Outcome, RuntimeError> {
        match r {
            Ok(out) => {
                let mut j = self.journal();
                for x in &out.events {
                    j.event(x)?;
                }
                j.flush()?;
                drop(j);
                self.publish(&out);
                Ok(out)
            }
            Err(RuntimeError::Fault(f)) => {
                let mut j = self.journal();
                j.event(e)?;
                j.flush()?;
                drop(j);
                self.notify(vec![
                    self.fault_note(e, f.to_string()),
                    Self::status_note(e.case, CaseStatus::Faulted),
                ]);
                Err(RuntimeError::Fault(f))
            }
            Err(other) => Err(other),
        }
    }

    pub fn deploy(&self, spec: &ModelSpec) -> Result<DeployedModel, RuntimeError> {
        let mut shards = self.all_shards();
        let now = wall_clock();
        let info = shards[0].deploy(spec, now)?;
        for s in shards.iter_mut().skip(1) {
            s.deploy(spec, now)?;
        }
        self.journal()
            .control(ControlOp::Deploy { spec: spec.clone() })?;
        Ok(info)
    }

    pub fn migrate(
        &self,
        spec: &ModelSpec,
        policy: Option<MigrationPolicy>,
    ) -> Result<DeployedModel, RuntimeError> {
        let policy = policy.unwrap_or(self.config.migration_policy);
        let mut shards = self.all_shards();
        let boundary = self.last_case.load(Ordering::SeqCst);
        let now = wall_clock();
        let (info, mut faulted) = shards[0].migrate(spec, policy, boundary, now)?;
        for s in shards.iter_mut().skip(1) {
            faulted.extend(s.migrate(spec, policy, boundary, now)?.1);
        }
        drop(shards);
        self.journal().control(ControlOp::Migrate {
            spec: spec.clone(),
            policy,
        })?;
        let mut notes = Vec::new();
        for c in faulted {
            notes.push(Notification {
                stream: self.config.diagnostics_stream.clone(),
                record: serde_json::json!({
                    "pmID": info.model.0, "caseID": c.0, "nodeID": "",
                    "kind": "fault",
                    "message": format!("open work removed by migration to version {}", info.version),
                    "ts": now.0,
                }),
            });
            notes.push(Self::status_note(c, CaseStatus::Faulted));
        }
        self.notify(notes);
        Ok(info)
    }

    pub fn models(&self) -> Vec<DeployedModel> {
        self.shards[0]
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .models()
    }

    pub fn loaded(&self, model: ModelId) -> Option<LoadedModel> {
        self.shards[0]
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .loaded(model, None)
            .cloned()
    }

    /// Highest case id allocated so far.
    pub fn last_case(&self) -> CaseId {
        CaseId(self.last_case.load(Ordering::SeqCst))
    }

    /// A timestamp after every one the case has seen.
    pub fn next_ts(&self, case: Option<CaseId>) -> Timestamp {
        let now = wall_clock();
        match case.and_then(|c| self.case(c)) {
            Some(r) if r.last_ts >= now => Timestamp(r.last_ts.0 + 1),
            _ => now,
        }
    }

    pub fn start_case(
        &self,
        model: ModelId,
        payload: Payload,
        ts: Option<Timestamp>,
    ) -> Result<Outcome, RuntimeError> {
        if self.loaded(model).is_none() {
            return Err(RuntimeError::UnknownModel(model));
        }
        let case = CaseId(self.last_case.fetch_add(1, Ordering::SeqCst) + 1);
        self.open_case(model, case, payload, ts.unwrap_or_else(wall_clock))
    }

    /// Opens a case under a caller-chosen id, as replay does.
    pub fn start_case_with_id(
        &self,
        model: ModelId,
        case: CaseId,
        payload: Payload,
        ts: Timestamp,
    ) -> Result<Outcome, RuntimeError> {
        self.last_case.fetch_max(case.0, Ordering::SeqCst);
        self.open_case(model, case, payload, ts)
    }

    fn open_case(
        &self,
        model: ModelId,
        case: CaseId,
        payload: Payload,
        ts: Timestamp,
    ) -> Result<Outcome, RuntimeError> {
        let mut shard = self.shard(case);
        let r = shard.start_case(model, case, payload.clone(), ts);
        let entry = shard
            .loaded(model, None)
            .map(|m| m.entry().to_string())
            .unwrap_or_default();
        let e = RawExecutionEvent::new(model, case, entry, crate::event::LifecycleState::Started, payload, ts);
        self.settle(&e, r)
    }

    pub fn submit(&self, e: RawExecutionEvent) -> Result<Outcome, RuntimeError> {
        let mut shard = self.shard(e.case);
        let r = shard.submit(e.clone());
        self.settle(&e, r)
    }

    pub fn case(&self, case: CaseId) -> Option<CaseRecord> {
        self.shard(case).case(case).cloned()
    }

    pub fn cases(&self) -> Vec<CaseRecord> {
        let mut all: Vec<CaseRecord> = self
            .all_shards()
            .iter()
            .flat_map(|s| s.cases().cloned().collect::<Vec<_>>())
            .collect();
        all.sort_by_key(|c| c.case);
        all
    }

    pub fn enabled_work(&self, case: CaseId) -> Result<Vec<WorkItem>, RuntimeError> {
        self.shard(case).enabled_work(case)
    }

    pub fn state(&self, case: CaseId) -> Result<Vec<Row>, RuntimeError> {
        self.shard(case).state(case)
    }

    pub fn work_items(&self, case: CaseId) -> Result<Vec<Row>, RuntimeError> {
        self.shard(case).work_items(case)
    }

    pub fn variables(&self, case: CaseId) -> Result<Option<Payload>, RuntimeError> {
        self.shard(case).variables(case)
    }

    /// Runs `f` against the engine holding `case`.
    pub fn with_shard<T>(&self, case: CaseId, f: impl FnOnce(&Orchestrator) -> T) -> T {
        f(&self.shard(case))
    }

    /// Every event journaled so far, in journal order.
    pub fn log(&self) -> Vec<RawExecutionEvent> {
        self.journal().events.clone()
    }

    pub fn control_records(&self) -> Vec<ControlRecord> {
        self.journal().control.clone()
    }

    /// Row counts of `table` over every engine.
    pub fn table_len(&self, table: &str) -> usize {
        self.all_shards().iter().map(|s| s.engine().table_len(table)).sum()
    }

    /// Tables of every engine, rows sorted, followed by the case records.
    pub fn snapshot(&self) -> String {
        let shards = self.all_shards();
        let mut out = String::new();
        let names: Vec<String> = shards[0].engine().table_names().map(str::to_string).collect();
        for name in names {
            let mut header = String::new();
            let mut lines = Vec::new();
            for s in &shards {
                let dump = s.engine().dump_table(&name).unwrap_or_default();
                let mut it = dump.lines();
                header = it.next().unwrap_or("").to_string();
                lines.extend(it.map(str::to_string));
            }
            lines.sort();
            out.push_str(&format!("# {name}\n{header}\n"));
            for l in lines {
                out.push_str(&l);
                out.push('\n');
            }
        }
        out.push_str("# cases\ncaseID,pmID,version,status,created,closed\n");
        let mut cases: Vec<CaseRecord> = shards
            .iter()
            .flat_map(|s| s.cases().cloned().collect::<Vec<_>>())
            .collect();
        cases.sort_by_key(|c| c.case);
        for c in cases {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.case,
                c.model,
                c.version,
                c.status.as_str(),
                c.created,
                c.closed.map(|t| t.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    /// Rebuilds a runtime from journaled control records and events by
    /// resubmitting the external events.
    pub fn replay(
        config: Config,
        control: &[ControlRecord],
        events: &[RawExecutionEvent],
    ) -> Result<(Runtime, ReplayReport), RuntimeError> {
        let rt = Runtime::new(Config {
            data_dir: None,
            ..config
        });
        let report = rt.replay_into(control, events)?;
        Ok((rt, report))
    }

    fn replay_into(
        &self,
        control: &[ControlRecord],
        events: &[RawExecutionEvent],
    ) -> Result<ReplayReport, RuntimeError> {
        let mut pending = control.iter().peekable();
        let mut submitted = 0;
        let mut faults = 0;
        for (i, e) in events.iter().enumerate() {
            while let Some(c) = pending.next_if(|c| c.at <= i as u64) {
                self.apply_control(&c.op)?;
            }
            let external = self.shard(e.case).is_external(e);
            if !external {
                continue;
            }
            submitted += 1;
            let known = self.case(e.case).is_some();
            let r = if !known {
                self.start_case_with_id(e.model, e.case, e.payload.clone(), e.ts)
            } else {
                self.submit(e.clone())
            };
            match r {
                Ok(_) => {}
                Err(RuntimeError::Fault(_)) => faults += 1,
                Err(other) => return Err(other),
            }
        }
        for c in pending {
            self.apply_control(&c.op)?;
        }
        let log = self.log();
        Ok(ReplayReport {
            submitted,
            faults,
            log_matches: log == events,
            statuses: self.cases().iter().map(|c| (c.case, c.status)).collect(),
        })
    }

    fn apply_control(&self, op: &ControlOp) -> Result<(), RuntimeError> {
        match op {
            ControlOp::Deploy { spec } => self.deploy(spec).map(|_| ()),
            ControlOp::Migrate { spec, policy } => self.migrate(spec, Some(*policy)).map(|_| ()),
        }
    }
}
