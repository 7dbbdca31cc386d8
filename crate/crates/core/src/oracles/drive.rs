//! Seeded side-by-side runs of the engine and the reference semantics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use std::collections::BTreeSet;

use crate::bpmn::{parse_bpmn, BpmnModel};
use crate::dcr::{marking_of, parse_dcr};
use crate::event::{CaseId, LifecycleState, ModelId, Payload, RawExecutionEvent, Timestamp};
use crate::runtime::{CaseStatus, Config, ModelSpec, Runtime, RuntimeError};

use super::dcr::{dcr_enabled_set, dcr_step, DcrMarking};
use super::gen::{choose, Choice};
use super::token::{Fired, TokenError, TokenGame};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceDiff<T> {
    Equal,
    Diverged {
        position: usize,
        engine: Option<T>,
        oracle: Option<T>,
    },
}

impl<T> TraceDiff<T> {
    pub fn is_equal(&self) -> bool {
        matches!(self, TraceDiff::Equal)
    }
}

pub fn diff_traces<T: PartialEq + Clone>(engine: &[T], oracle: &[T]) -> TraceDiff<T> {
    let n = engine.len().max(oracle.len());
    for i in 0..n {
        let (a, b) = (engine.get(i), oracle.get(i));
        if a != b {
            return TraceDiff::Diverged {
                position: i,
                engine: a.cloned(),
                oracle: b.cloned(),
            };
        }
    }
    TraceDiff::Equal
}

#[derive(Debug, Error)]
pub enum DriveError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("oracle: {0}")]
    Token(#[from] TokenError),
}

/// What one side produced for one input: the events of the cascade as a
/// sorted multiset, and the tasks offered afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpmnStep {
    pub input: String,
    pub events: Vec<Fired>,
    pub offered: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BpmnRun {
    pub engine: Vec<BpmnStep>,
    pub oracle: Vec<BpmnStep>,
    pub completed: bool,
}

impl BpmnRun {
    pub fn diff(&self) -> TraceDiff<BpmnStep> {
        diff_traces(&self.engine, &self.oracle)
    }
}

/// Submissions after which every loop is told to exit.
pub const LOOP_BUDGET: usize = 30;
const MAX_SUBMISSIONS: usize = 200;

fn sorted(mut v: Vec<Fired>) -> Vec<Fired> {
    v.sort();
    v
}

fn engine_offers(rt: &Runtime, case: CaseId) -> Vec<String> {
    if rt.case(case).map(|c| c.status) != Some(CaseStatus::Running) {
        return Vec::new();
    }
    let mut v: Vec<String> = rt
        .enabled_work(case)
        .map(|w| w.into_iter().map(|x| x.node).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn fired_of(events: &[RawExecutionEvent]) -> Vec<Fired> {
    sorted(
        events
            .iter()
            .map(|e| Fired {
                node: e.node.clone(),
                state: e.state,
            })
            .collect(),
    )
}

/// Splits reached from `node` through gateways alone. Their conditions are
/// evaluated in the cascade that `node` starts, so only a completion of
/// `node` draws new values for them.
fn owned_splits(m: &BpmnModel, node: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut todo = vec![node.to_string()];
    let mut seen = BTreeSet::new();
    while let Some(n) = todo.pop() {
        for e in m.outgoing(&n) {
            let t = &e.target;
            if m.kind(t).is_some_and(|k| k.is_gateway()) && seen.insert(t.clone()) {
                out.insert(t.clone());
                todo.push(t.clone());
            }
        }
    }
    out
}

/// Runs one case of a BPMN model in a fresh engine and in the token game,
/// resolving choices and task order from `seed`. The initial payload sets
/// every split variable; a task completion redraws those of its own splits.
pub fn run_bpmn(source: &str, choices: &[Choice], seed: u64) -> Result<BpmnRun, DriveError> {
    let model = parse_bpmn(source.as_bytes()).map_err(RuntimeError::from)?;
    let rt = Runtime::new(Config::default());
    let dm = rt.deploy(&ModelSpec::Bpmn {
        source: source.to_string(),
    })?;
    let mut game = TokenGame::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = BpmnRun {
        engine: Vec::new(),
        oracle: Vec::new(),
        completed: false,
    };

    let p0 = choose(&mut rng, choices, false);
    let out = rt.start_case(dm.model, p0.clone(), Some(Timestamp(1)))?;
    let case = out.case;
    run.engine.push(BpmnStep {
        input: "start".into(),
        events: fired_of(&out.events),
        offered: engine_offers(&rt, case),
        error: None,
    });
    let fired = game.start(p0)?;
    run.oracle.push(BpmnStep {
        input: "start".into(),
        events: sorted(fired),
        offered: game.active(),
        error: None,
    });

    let mut ts = 1;
    for n in 0..MAX_SUBMISSIONS {
        let active = game.active();
        if game.finished() || active.is_empty() {
            break;
        }
        let task = active.choose(&mut rng).expect("non-empty").clone();
        let owned = owned_splits(&model, &task);
        let mine = choices.iter().filter(|c| owned.contains(c.split()));
        let payload = choose(&mut rng, mine, n >= LOOP_BUDGET);
        ts += 1;
        let e = RawExecutionEvent::new(
            dm.model,
            case,
            task.clone(),
            LifecycleState::Completed,
            payload.clone(),
            Timestamp(ts),
        );
        let step = match rt.submit(e) {
            Ok(out) => BpmnStep {
                input: task.clone(),
                events: fired_of(&out.events),
                offered: engine_offers(&rt, case),
                error: None,
            },
            Err(err) => BpmnStep {
                input: task.clone(),
                events: Vec::new(),
                offered: engine_offers(&rt, case),
                error: Some(err.to_string()),
            },
        };
        run.engine.push(step);
        let fired = game.complete(&task, payload)?;
        run.oracle.push(BpmnStep {
            input: task,
            events: sorted(fired),
            offered: game.active(),
            error: None,
        });
    }
    run.completed = game.finished()
        && rt.case(case).map(|c| c.status) == Some(CaseStatus::Completed);
    Ok(run)
}

/// What one side reports after one submission to a DCR case. The marking
/// is absent once the case has closed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DcrStep {
    pub event: Option<String>,
    pub accepted: bool,
    pub marking: Option<DcrMarking>,
    pub enabled: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DcrRun {
    pub engine: Vec<DcrStep>,
    pub oracle: Vec<DcrStep>,
    pub rejected: usize,
}

impl DcrRun {
    pub fn diff(&self) -> TraceDiff<DcrStep> {
        diff_traces(&self.engine, &self.oracle)
    }
}

fn engine_dcr_step(rt: &Runtime, case: CaseId, event: Option<String>, accepted: bool) -> DcrStep {
    let running = rt.case(case).map(|c| c.status) == Some(CaseStatus::Running);
    let model = rt.case(case).map(|c| c.model).unwrap_or(ModelId(0));
    let marking = running
        .then(|| {
            let m = rt.loaded(model)?;
            let m = m.dcr()?;
            rt.with_shard(case, |o| marking_of(o.engine(), m, model, case).ok())
        })
        .flatten()
        .map(DcrMarking::from);
    let enabled = if running {
        rt.enabled_work(case)
            .map(|w| w.into_iter().map(|x| x.node).collect())
            .unwrap_or_default()
    } else {
        Vec::new()
    };
    DcrStep {
        event,
        accepted,
        marking,
        enabled,
    }
}

/// Runs one case of a DCR graph for up to `max_len` submissions. About a
/// quarter of the submissions pick an arbitrary event, enabled or not.
pub fn run_dcr(source: &str, seed: u64, max_len: usize) -> Result<DcrRun, DriveError> {
    let model = parse_dcr(source.as_bytes()).map_err(RuntimeError::from)?;
    let rt = Runtime::new(Config::default());
    let dm = rt.deploy(&ModelSpec::Dcr {
        source: source.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = rt.start_case(dm.model, Payload::new(), Some(Timestamp(1)))?.case;
    let mut mk = DcrMarking::initial(&model);
    let oracle_step = |mk: &DcrMarking, event: Option<String>, accepted: bool| {
        let enabled = dcr_enabled_set(&model, mk);
        DcrStep {
            event,
            accepted,
            marking: (!enabled.is_empty()).then(|| mk.clone()),
            enabled,
        }
    };
    let mut run = DcrRun {
        engine: vec![engine_dcr_step(&rt, case, None, true)],
        oracle: vec![oracle_step(&mk, None, true)],
        rejected: 0,
    };
    let len = rng.gen_range(0..=max_len);
    for i in 0..len {
        let enabled = dcr_enabled_set(&model, &mk);
        if enabled.is_empty() {
            break;
        }
        let e = if rng.gen_bool(0.25) {
            model.events.choose(&mut rng).expect("non-empty").clone()
        } else {
            enabled.choose(&mut rng).expect("non-empty").clone()
        };
        let sub = RawExecutionEvent::new(
            dm.model,
            case,
            e.clone(),
            LifecycleState::Completed,
            Payload::new(),
            Timestamp(2 + i as u64),
        );
        let accepted = match rt.submit(sub) {
            Ok(_) => true,
            Err(RuntimeError::Rejected { .. }) => false,
            Err(err) => return Err(err.into()),
        };
        run.engine.push(engine_dcr_step(&rt, case, Some(e.clone()), accepted));
        let ok = match dcr_step(&model, &mk, &e) {
            Ok(next) => {
                mk = next;
                true
            }
            Err(_) => false,
        };
        if !ok {
            run.rejected += 1;
        }
        run.oracle.push(oracle_step(&mk, Some(e), ok));
    }
    Ok(run)
}
