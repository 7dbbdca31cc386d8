use std::collections::BTreeMap;

use crate::bpmn::{diff_models, CompileOptions};
use crate::cql::{event_to_row, row_to_event, row_to_json, CaseFilter, Engine, Row, RuleIR, Value};
use crate::dcr::{enabled_events, CLOSED, REJECTED};
use crate::event::{CaseId, LifecycleState, ModelId, Payload, RawExecutionEvent, Timestamp};
use crate::schema::{
    self, CASE_VARIABLES, DIAGNOSTICS, EVENT_STATE, EXECUTION_STATE, PROCESS_EVENT, WORK_ITEMS,
};

use super::migrate::{plan_migration, rules_by_node, MigrationPolicy};
use super::model::{LoadedModel, ModelKind, ModelSpec, NodeRole};
use super::{CaseRecord, CaseStatus, DeployedModel, Outcome, RuntimeError, WorkItem, WorkKind};

#[derive(Debug, Clone)]
struct VersionEntry {
    info: DeployedModel,
    loaded: LoadedModel,
    rules: BTreeMap<String, Vec<RuleIR>>,
    /// Cases with a larger id start on this version.
    after: u64,
}

#[derive(Debug, Clone)]
struct Deployment {
    kind: ModelKind,
    versions: Vec<VersionEntry>,
}

impl Deployment {
    fn latest(&self) -> &VersionEntry {
        self.versions.last().expect("at least one version")
    }

    fn for_new_case(&self, case: CaseId) -> &VersionEntry {
        self.versions
            .iter()
            .rev()
            .find(|v| v.after < case.0)
            .unwrap_or(&self.versions[0])
    }

    fn version(&self, v: u32) -> Option<&VersionEntry> {
        self.versions.iter().find(|e| e.info.version == v)
    }
}

fn key(pm: ModelId, case: CaseId) -> [(&'static str, Value); 2] {
    [("pmID", Value::from(pm.0)), ("caseID", Value::from(case.0))]
}

/// One engine with its deployments and cases; not thread-safe on its own.
#[derive(Debug, Clone)]
pub struct Orchestrator {
    engine: Engine,
    models: BTreeMap<ModelId, Deployment>,
    cases: BTreeMap<CaseId, CaseRecord>,
    opts: CompileOptions,
}

impl Default for Orchestrator {
    fn default() -> Self {
        Self::new(CompileOptions::default())
    }
}

impl Orchestrator {
    pub fn new(opts: CompileOptions) -> Self {
        let mut engine = Engine::new();
        schema::install(&mut engine).expect("fresh engine accepts the shared schemas");
        Orchestrator {
            engine,
            models: BTreeMap::new(),
            cases: BTreeMap::new(),
            opts,
        }
    }

    pub fn set_max_steps(&mut self, n: usize) {
        self.engine.set_max_steps(n);
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn deploy_rules(&mut self, rules: &[RuleIR]) -> Result<(), RuntimeError> {
        for (i, r) in rules.iter().enumerate() {
            if let Err(e) = self.engine.deploy_rule(r.clone()) {
                for done in &rules[..i] {
                    self.engine.undeploy_rule(&done.id);
                }
                return Err(e.into());
            }
        }
        Ok(())
    }

    pub fn deploy(&mut self, spec: &ModelSpec, now: Timestamp) -> Result<DeployedModel, RuntimeError> {
        let loaded = spec.load()?;
        let model = loaded.model_id();
        if let Some(d) = self.models.get(&model) {
            return Err(RuntimeError::VersionConflict {
                model,
                version: d.latest().info.version,
            });
        }
        let compiled = loaded.compile(self.opts)?;
        self.deploy_rules(&compiled.rules)?;
        let info = DeployedModel {
            model,
            version: loaded.version(),
            kind: loaded.kind(),
            rule_ids: compiled.rules.iter().map(|r| r.id.clone()).collect(),
            digest: spec.digest(),
            deployed_at: now,
        };
        self.models.insert(
            model,
            Deployment {
                kind: loaded.kind(),
                versions: vec![VersionEntry {
                    info: info.clone(),
                    rules: rules_by_node(&compiled),
                    loaded,
                    after: 0,
                }],
            },
        );
        Ok(info)
    }

    /// Switches `model` to a new version. `boundary` is the highest case id
    /// allocated so far.
    pub fn migrate(
        &mut self,
        spec: &ModelSpec,
        policy: MigrationPolicy,
        boundary: u64,
        now: Timestamp,
    ) -> Result<(DeployedModel, Vec<CaseId>), RuntimeError> {
        let loaded = spec.load()?;
        let model = loaded.model_id();
        let dep = self.models.get(&model).ok_or(RuntimeError::UnknownModel(model))?;
        if dep.kind != ModelKind::Bpmn || loaded.kind() != ModelKind::Bpmn {
            return Err(RuntimeError::Unsupported(
                "only BPMN models can be migrated".into(),
            ));
        }
        let old = dep.latest();
        if loaded.version() <= old.info.version {
            return Err(RuntimeError::VersionConflict {
                model,
                version: loaded.version(),
            });
        }
        let diff = diff_models(
            old.loaded.bpmn().expect("bpmn"),
            loaded.bpmn().expect("bpmn"),
        )?;
        let compiled = loaded.compile(self.opts)?;
        let plan = plan_migration(&old.rules, &compiled, diff);

        let mut faulted = Vec::new();
        match policy {
            MigrationPolicy::Cutover => {
                let fresh: Vec<RuleIR> = plan
                    .deploy
                    .iter()
                    .cloned()
                    .map(|mut r| {
                        r.case_filter = Some(CaseFilter::after(boundary));
                        r
                    })
                    .collect();
                self.deploy_rules(&fresh)?;
                for id in &plan.retire {
                    let f = self.engine.rule(id).and_then(|r| r.case_filter);
                    let bounded = match f {
                        Some(f) => f.and(CaseFilter::up_to(boundary)),
                        None => CaseFilter::up_to(boundary),
                    };
                    self.engine.set_case_filter(id, Some(bounded));
                }
            }
            MigrationPolicy::Immediate => {
                let keep: Vec<String> = plan
                    .rules
                    .values()
                    .flatten()
                    .map(|r| r.id.clone())
                    .collect();
                let prefix = format!("{}:", model.0);
                let stale: Vec<String> = self
                    .engine
                    .rules()
                    .filter(|r| r.id.starts_with(&prefix) && !keep.contains(&r.id))
                    .map(|r| r.id.clone())
                    .collect();
                for id in &stale {
                    self.engine.undeploy_rule(id);
                }
                self.deploy_rules(&plan.deploy)?;
                for id in &keep {
                    self.engine.set_case_filter(id, None);
                }
                for rec in self.cases.values_mut() {
                    if rec.model != model || rec.status != CaseStatus::Running {
                        continue;
                    }
                    rec.version = loaded.version();
                    let stuck = plan.diff.removed.iter().any(|n| {
                        let mut k = key(model, rec.case).to_vec();
                        k.push(("nodeID", Value::from(n.as_str())));
                        !self
                            .engine
                            .query_table(WORK_ITEMS, &k)
                            .unwrap_or_default()
                            .is_empty()
                    });
                    if stuck {
                        rec.status = CaseStatus::Faulted;
                        faulted.push(rec.case);
                    }
                }
            }
        }
        let info = DeployedModel {
            model,
            version: loaded.version(),
            kind: loaded.kind(),
            rule_ids: plan.rules.values().flatten().map(|r| r.id.clone()).collect(),
            digest: spec.digest(),
            deployed_at: now,
        };
        let after = match policy {
            MigrationPolicy::Cutover => boundary,
            MigrationPolicy::Immediate => 0,
        };
        let dep = self.models.get_mut(&model).expect("checked");
        dep.versions.push(VersionEntry {
            info: info.clone(),
            loaded,
            rules: plan.rules,
            after,
        });
        Ok((info, faulted))
    }

    pub fn models(&self) -> Vec<DeployedModel> {
        self.models
            .values()
            .flat_map(|d| d.versions.iter().map(|v| v.info.clone()))
            .collect()
    }

    pub fn loaded(&self, model: ModelId, version: Option<u32>) -> Option<&LoadedModel> {
        let d = self.models.get(&model)?;
        match version {
            Some(v) => d.version(v).map(|e| &e.loaded),
            None => Some(&d.latest().loaded),
        }
    }

    pub fn case(&self, case: CaseId) -> Option<&CaseRecord> {
        self.cases.get(&case)
    }

    pub fn cases(&self) -> impl Iterator<Item = &CaseRecord> {
        self.cases.values()
    }

    fn case_model(&self, rec: &CaseRecord) -> &LoadedModel {
        &self.models[&rec.model]
            .version(rec.version)
            .expect("case version is deployed")
            .loaded
    }

    /// Opens `case`, whose id the caller allocated.
    pub fn start_case(
        &mut self,
        model: ModelId,
        case: CaseId,
        payload: Payload,
        ts: Timestamp,
    ) -> Result<Outcome, RuntimeError> {
        let dep = self.models.get(&model).ok_or(RuntimeError::UnknownModel(model))?;
        if self.cases.contains_key(&case) {
            return Err(RuntimeError::InvalidSubmission(format!("case {case} already exists")));
        }
        let v = dep.for_new_case(case);
        let entry = v.loaded.entry().to_string();
        let rec = CaseRecord {
            model,
            version: v.info.version,
            case,
            status: CaseStatus::Running,
            created: ts,
            closed: None,
            last_ts: ts,
        };
        self.cases.insert(case, rec);
        let e = RawExecutionEvent::new(model, case, &entry, LifecycleState::Started, payload, ts);
        self.process(e)
    }

    fn validate(&self, e: &RawExecutionEvent) -> Result<(), RuntimeError> {
        let rec = self
            .cases
            .get(&e.case)
            .ok_or(RuntimeError::UnknownCase(e.case))?;
        if rec.model != e.model {
            return Err(RuntimeError::ModelMismatch {
                case: e.case,
                expected: rec.model,
                got: e.model,
            });
        }
        if rec.status != CaseStatus::Running {
            return Err(RuntimeError::CaseNotRunning {
                case: e.case,
                status: rec.status,
            });
        }
        if e.ts <= rec.last_ts {
            return Err(RuntimeError::StaleTimestamp {
                case: e.case,
                last: rec.last_ts,
                got: e.ts,
            });
        }
        if e.state != LifecycleState::Completed {
            return Err(RuntimeError::InvalidSubmission(format!(
                "agents submit completed events only, got {}",
                e.state
            )));
        }
        match self.case_model(rec).role(&e.node) {
            NodeRole::Unknown => Err(RuntimeError::UnknownNode {
                model: e.model,
                node: e.node.clone(),
            }),
            NodeRole::EngineDriven => Err(RuntimeError::EngineDriven { node: e.node.clone() }),
            NodeRole::Task => {
                let mut k = key(e.model, e.case).to_vec();
                k.push(("nodeID", Value::from(e.node.as_str())));
                if self.engine.query_table(WORK_ITEMS, &k)?.is_empty() {
                    return Err(RuntimeError::NotOffered {
                        case: e.case,
                        node: e.node.clone(),
                    });
                }
                Ok(())
            }
            NodeRole::DcrEvent | NodeRole::Inner { .. } => Ok(()),
        }
    }

    /// Accepts an agent's completion of a task or DCR event.
    pub fn submit(&mut self, e: RawExecutionEvent) -> Result<Outcome, RuntimeError> {
        self.validate(&e)?;
        self.process(e)
    }

    fn process(&mut self, e: RawExecutionEvent) -> Result<Outcome, RuntimeError> {
        let case = e.case;
        let cascade = match self.engine.ingest(PROCESS_EVENT, event_to_row(&e)) {
            Ok(c) => c,
            Err(f) => {
                let rec = self.cases.get_mut(&case).expect("validated");
                rec.status = CaseStatus::Faulted;
                rec.last_ts = e.ts;
                return Err(f.into());
            }
        };
        let mut events = Vec::new();
        let mut diagnostics = Vec::new();
        for step in &cascade.steps {
            match step.stream.as_str() {
                PROCESS_EVENT => events.extend(row_to_event(&step.record)),
                DIAGNOSTICS => {
                    let r = &step.record;
                    let text = |f: &str| r.get(f).and_then(Value::as_str).unwrap_or("").to_string();
                    let kind = text("kind");
                    if text("nodeID") == e.node && (kind == REJECTED || kind == CLOSED) {
                        return Err(RuntimeError::Rejected {
                            node: e.node.clone(),
                            kind,
                            message: text("message"),
                        });
                    }
                    diagnostics.push(row_to_json(r));
                }
                _ => {}
            }
        }
        let rec = self.cases.get(&case).expect("validated").clone();
        let model = self.case_model(&rec).clone();
        let ended = events
            .iter()
            .any(|x| x.state == LifecycleState::Completed && model.is_end(&x.node));
        let dcr_done = match &model {
            LoadedModel::Dcr(m) => enabled_events(&self.engine, m, rec.model, case)
                .map(|v| v.is_empty())
                .unwrap_or(false),
            _ => false,
        };
        let mut status = CaseStatus::Running;
        let mut purged = 0;
        {
            let rec = self.cases.get_mut(&case).expect("validated");
            rec.last_ts = e.ts;
            if ended || dcr_done {
                rec.status = CaseStatus::Completed;
                rec.closed = Some(e.ts);
                status = CaseStatus::Completed;
            }
        }
        if status == CaseStatus::Completed {
            purged = self.purge(rec.model, case);
        }
        Ok(Outcome {
            case,
            events,
            diagnostics,
            status,
            purged,
        })
    }

    /// Removes every state row the case still holds.
    pub fn purge(&mut self, model: ModelId, case: CaseId) -> usize {
        [EXECUTION_STATE, CASE_VARIABLES, WORK_ITEMS, EVENT_STATE]
            .iter()
            .map(|t| {
                self.engine
                    .delete_rows(t, &key(model, case))
                    .map(|r| r.len())
                    .unwrap_or(0)
            })
            .sum()
    }

    fn record(&self, case: CaseId) -> Result<&CaseRecord, RuntimeError> {
        self.cases.get(&case).ok_or(RuntimeError::UnknownCase(case))
    }

    pub fn enabled_work(&self, case: CaseId) -> Result<Vec<WorkItem>, RuntimeError> {
        let rec = self.record(case)?;
        if rec.status == CaseStatus::Completed {
            return Ok(Vec::new());
        }
        let model = self.case_model(rec);
        let mut out = Vec::new();
        if let Some(bpmn) = model.bpmn() {
            let open: Vec<String> = self
                .engine
                .query_table(WORK_ITEMS, &key(rec.model, case))?
                .iter()
                .filter_map(|r| r.get("nodeID").and_then(Value::as_str).map(str::to_string))
                .collect();
            for n in &bpmn.nodes {
                if open.contains(&n.id) {
                    out.push(WorkItem {
                        node: n.id.clone(),
                        kind: WorkKind::Task,
                    });
                }
            }
        }
        match model {
            LoadedModel::Dcr(m) => {
                for e in enabled_events(&self.engine, m, rec.model, case)? {
                    out.push(WorkItem {
                        node: e,
                        kind: WorkKind::Event,
                    });
                }
            }
            LoadedModel::Hybrid(h) => {
                for b in &h.bindings {
                    if let Ok(evs) = enabled_events(&self.engine, &b.inner, rec.model, case) {
                        out.extend(evs.into_iter().map(|e| WorkItem {
                            node: e,
                            kind: WorkKind::Event,
                        }));
                    }
                }
            }
            LoadedModel::Bpmn(_) => {}
        }
        Ok(out)
    }

    /// Execution-state and DCR event-state rows of the case.
    pub fn state(&self, case: CaseId) -> Result<Vec<Row>, RuntimeError> {
        let rec = self.record(case)?;
        let mut rows = self.engine.query_table(EXECUTION_STATE, &key(rec.model, case))?;
        rows.extend(self.engine.query_table(EVENT_STATE, &key(rec.model, case))?);
        Ok(rows)
    }

    pub fn work_items(&self, case: CaseId) -> Result<Vec<Row>, RuntimeError> {
        let rec = self.record(case)?;
        Ok(self.engine.query_table(WORK_ITEMS, &key(rec.model, case))?)
    }

    pub fn variables(&self, case: CaseId) -> Result<Option<Payload>, RuntimeError> {
        let rec = self.record(case)?;
        Ok(self
            .engine
            .query_table(CASE_VARIABLES, &key(rec.model, case))?
            .first()
            .and_then(|r| r.get("variables"))
            .map(Value::to_payload))
    }

    /// Whether a logged event came from an agent rather than the rules.
    pub fn is_external(&self, e: &RawExecutionEvent) -> bool {
        let model = match self.cases.get(&e.case) {
            Some(r) => self.case_model(r),
            None => match self.loaded(e.model, None) {
                Some(m) => m,
                None => return false,
            },
        };
        model.is_external(&e.node, e.state)
    }
}
