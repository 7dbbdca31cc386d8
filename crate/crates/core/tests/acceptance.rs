//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use flowcq::bpmn::{compile_bpmn, parse_bpmn, CompileOptions, OrJoinMode};
use flowcq::cql::window::{eval_window, WindowSpec};
use flowcq::cql::{
    event_to_row, process_stream_schema, row_to_event, Action, Engine, MutationKind, RuleExpr,
    RuleIR, Row, SchemaDef, FieldType, Value, PROCESS_FIELDS,
};
use flowcq::dcr::{event_states, EventFlags};
use flowcq::event::{
    payload, to_csv_line, CaseId, LifecycleState, ModelId, Payload, RawExecutionEvent, Scalar,
    Timestamp,
};
use flowcq::log::{export_ndjson, read_events};
use flowcq::oracles::{random_bpmn, random_dcr, run_bpmn, run_dcr, TraceDiff};
use flowcq::runtime::{
    CaseStatus, Config, MigrationPolicy, ModelSpec, Outcome, Runtime,
};
use flowcq::schema::{self, CASE_VARIABLES, EVENT_STATE, EXECUTION_STATE, PROCESS_EVENT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn spec(name: &str) -> ModelSpec {
    ModelSpec::from_path(&fixture(name)).expect("fixture loads")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn completed(model: ModelId, case: CaseId, node: &str, p: Payload, ts: u64) -> RawExecutionEvent {
    RawExecutionEvent::new(model, case, node, LifecycleState::Completed, p, Timestamp(ts))
}

fn offered(rt: &Runtime, case: CaseId) -> Vec<String> {
    let mut v: Vec<String> = rt
        .enabled_work(case)
        .map(|w| w.into_iter().map(|x| x.node).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn status(rt: &Runtime, case: CaseId) -> Option<CaseStatus> {
    rt.case(case).map(|c| c.status)
}

// ---------------------------------------------------------------------------

fn short(e: &RawExecutionEvent) -> String {
    let verb = match e.state {
        LifecycleState::Started => "start",
        LifecycleState::Completed => "complete",
        LifecycleState::Skipped => "skip",
    };
    format!("{verb}({},{},t{})", e.node, e.case, e.ts)
}

fn and_interleave_trace() -> Check {
    let m = parse_bpmn(&std::fs::read(fixture("and_interleave.bpmn")).map_err(err)?).map_err(err)?;
    let mut eng = Engine::new();
    schema::install(&mut eng).map_err(err)?;
    for r in compile_bpmn(&m).map_err(err)?.rules {
        eng.deploy_rule(r).map_err(err)?;
    }
    let model = m.model_id.0;
    let inputs = [
        RawExecutionEvent::started(model, 1, "SE", 1),
        RawExecutionEvent::started(model, 2, "SE", 2),
        RawExecutionEvent::completed(model, 2, "A", 3),
        RawExecutionEvent::completed(model, 1, "B", 4),
        RawExecutionEvent::completed(model, 1, "A", 5),
        RawExecutionEvent::completed(model, 2, "B", 6),
    ];
    let mut rows = Vec::new();
    for e in &inputs {
        let c = eng.ingest(PROCESS_EVENT, event_to_row(e)).map_err(err)?;
        for step in c.steps.iter().filter(|s| s.stream == PROCESS_EVENT) {
            let arriving = short(&row_to_event(&step.record).ok_or("undecodable record")?);
            let upserts: Vec<String> = step
                .mutations
                .iter()
                .filter(|m| m.table == EXECUTION_STATE)
                .filter_map(|m| match m.kind {
                    MutationKind::Insert => Some("insert"),
                    MutationKind::Update => Some("update"),
                    MutationKind::Delete => None,
                })
                .map(String::from)
                .collect();
            let generated: Vec<String> = step
                .generated
                .iter()
                .filter(|(s, _)| s == PROCESS_EVENT)
                .filter_map(|(_, r)| row_to_event(r).map(|e| short(&e)))
                .collect();
            let upsert = if upserts.is_empty() { "-".to_string() } else { upserts.join(" ") };
            let generated = if generated.is_empty() { "-".to_string() } else { generated.join(" ") };
            rows.push(format!("{arriving} | {upsert} | {generated}"));
        }
    }
    let expected = [
        "start(SE,1,t1) | insert | complete(SE,1,t1)",
        "complete(SE,1,t1) | update | complete(AS,1,t1)",
        "complete(AS,1,t1) | insert | start(A,1,t1) start(B,1,t1)",
        "start(A,1,t1) | - | -",
        "start(B,1,t1) | - | -",
        "start(SE,2,t2) | insert | complete(SE,2,t2)",
        "complete(SE,2,t2) | update | complete(AS,2,t2)",
        "complete(AS,2,t2) | insert | start(A,2,t2) start(B,2,t2)",
        "start(A,2,t2) | - | -",
        "start(B,2,t2) | - | -",
        "complete(A,2,t3) | insert | -",
        "complete(B,1,t4) | insert | -",
        "complete(A,1,t5) | insert | complete(AJ,1,t5)",
        "complete(AJ,1,t5) | insert | complete(EE,1,t5)",
        "complete(EE,1,t5) | insert | -",
        "complete(B,2,t6) | insert | complete(AJ,2,t6)",
        "complete(AJ,2,t6) | insert | complete(EE,2,t6)",
        "complete(EE,2,t6) | insert | -",
    ];
    for (i, (got, want)) in rows.iter().zip(expected.iter()).enumerate() {
        ensure(got == want, || format!("row {}: got `{got}`, want `{want}`", i + 1))?;
    }
    ensure(rows.len() == expected.len(), || format!("{} rows, want {}", rows.len(), expected.len()))
}

// ---------------------------------------------------------------------------

fn branch_task(action: &str) -> &'static str {
    match action {
        "search" => "Search document",
        "download" => "Download document",
        "upload" => "Upload document2",
        "schedule" => "Schedule meeting",
        "hold" => "Hold meeting",
        "lock" => "Lock case",
        _ => "Close case",
    }
}

const DECISIONS: [&str; 10] = [
    "search", "download", "upload", "schedule", "hold", "search", "lock", "schedule", "hold", "close",
];

/// Drives the case-management BPMN case; returns the runtime and case.
fn case_management_bpmn(rt: &Runtime, ts0: u64) -> Result<CaseId, String> {
    let model = ModelId(3);
    let start = payload([
        ("caseLocked", Scalar::Bool(false)),
        ("nextAction", Scalar::Str("close".into())),
    ]);
    let case = rt.start_case(model, start, Some(Timestamp(ts0))).map_err(err)?.case;
    let mut ts = ts0;
    let mut send = |node: &str, set: &[(&str, Scalar)]| -> Check {
        ts += 1;
        let mut p = rt.variables(case).map_err(err)?.unwrap_or_default();
        for (k, v) in set {
            p.insert(k.to_string(), v.clone());
        }
        rt.submit(completed(model, case, node, p, ts))
            .map(|_| ())
            .map_err(|e| format!("{node}: {e}"))
    };
    send("Create Case", &[])?;
    send("Upload document", &[])?;
    for a in DECISIONS {
        send("Decide what to do next", &[("nextAction", Scalar::Str(a.into()))])?;
        let extra: Vec<(&str, Scalar)> = if a == "lock" {
            vec![("caseLocked", Scalar::Bool(true))]
        } else {
            Vec::new()
        };
        send(branch_task(a), &extra)?;
    }
    Ok(case)
}

fn case_management_bpmn_log() -> Check {
    let rt = Runtime::new(Config::default());
    rt.deploy(&spec("case_management.bpmn")).map_err(err)?;
    let case = case_management_bpmn(&rt, 1000)?;
    ensure(status(&rt, case) == Some(CaseStatus::Completed), || "case did not complete".into())?;
    let got: Vec<String> = rt
        .log()
        .iter()
        .filter(|e| e.state == LifecycleState::Completed)
        .map(|e| {
            let l = to_csv_line(e);
            l[..l.rfind(',').expect("ts column")].to_string()
        })
        .collect();
    let want_text = std::fs::read_to_string(fixture("expected/case_management_bpmn.log")).map_err(err)?;
    let want: Vec<&str> = want_text.lines().filter(|l| !l.trim().is_empty()).collect();
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        ensure(g == w, || format!("line {}: got `{g}`, want `{w}`", i + 1))?;
    }
    ensure(got.len() == want.len(), || format!("{} lines, want {}", got.len(), want.len()))
}

// ---------------------------------------------------------------------------

/// (executed event, enabled events afterwards) pairs read from the sample log.
fn dcr_expected() -> Result<Vec<(String, Vec<String>)>, String> {
    let text = std::fs::read_to_string(fixture("expected/case_management_dcr.log")).map_err(err)?;
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for line in text.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("Available tasks are:") {
            let set = rest
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty() && *s != "None")
                .map(String::from)
                .collect();
            out.last_mut().ok_or("enabled set before any event")?.1 = set;
        } else if line.starts_with("3,1,") {
            let node = line.split(',').nth(2).ok_or("bad log line")?.trim().to_string();
            out.push((node, Vec::new()));
        }
    }
    Ok(out)
}

fn case_management_dcr_session() -> Check {
    let rt = Runtime::new(Config::default());
    rt.deploy(&spec("case_management.dcr.xml")).map_err(err)?;
    let model = ModelId(3);
    let case = rt.start_case(model, Payload::new(), Some(Timestamp(1))).map_err(err)?.case;
    let steps = dcr_expected()?;
    ensure(steps.len() == 7, || format!("{} logged steps", steps.len()))?;
    for (i, (node, want)) in steps.iter().enumerate() {
        rt.submit(completed(model, case, node, Payload::new(), 2 + i as u64))
            .map_err(|e| format!("{node}: {e}"))?;
        let got: Vec<String> = if status(&rt, case) == Some(CaseStatus::Running) {
            rt.enabled_work(case).map_err(err)?.into_iter().map(|w| w.node).collect()
        } else {
            Vec::new()
        };
        ensure(&got == want, || format!("after {node}: got {got:?}, want {want:?}"))?;
    }
    ensure(status(&rt, case) == Some(CaseStatus::Completed), || "case did not close".into())
}

// ---------------------------------------------------------------------------

fn dcr_oracle() -> Check {
    let mut rejected = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_dcr(&mut rng, 1);
        let run = run_dcr(&src, seed, 20).map_err(|e| format!("seed {seed}: {e}"))?;
        if let TraceDiff::Diverged { position, engine, oracle } = run.diff() {
            return Err(format!(
                "seed {seed} step {position}: engine {engine:?} oracle {oracle:?}"
            ));
        }
        rejected += run.rejected;
    }
    ensure(rejected > 0, || "no rejected submission was exercised".into())
}

fn bpmn_oracle() -> Check {
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_bpmn(&mut rng, 1);
        let run = run_bpmn(&g.source, &g.choices, seed).map_err(|e| format!("seed {seed}: {e}"))?;
        if let TraceDiff::Diverged { position, engine, oracle } = run.diff() {
            return Err(format!(
                "seed {seed} step {position}: engine {engine:?} oracle {oracle:?}"
            ));
        }
        ensure(run.completed, || format!("seed {seed}: case did not complete"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn count(out: &Outcome, node: &str, state: LifecycleState) -> usize {
    out.events.iter().filter(|e| e.node == node && e.state == state).count()
}

fn loop_and() -> Check {
    let rt = Runtime::new(Config::default());
    let dm = rt.deploy(&spec("loop_and.bpmn")).map_err(err)?;
    let m = dm.model;
    let case = rt
        .start_case(m, payload([("iteration", Scalar::Int(0))]), Some(Timestamp(1)))
        .map_err(err)?
        .case;
    let mut ts = 1;
    let mut next = || {
        ts += 1;
        ts
    };
    rt.submit(completed(m, case, "Prepare", Payload::new(), next())).map_err(err)?;
    for i in 1..=5i64 {
        let (first, second) = if i % 2 == 1 { ("C", "D") } else { ("D", "C") };
        ensure(offered(&rt, case) == ["C", "D"], || format!("iteration {i}: offers {:?}", offered(&rt, case)))?;
        let o = rt.submit(completed(m, case, first, Payload::new(), next())).map_err(err)?;
        ensure(count(&o, "AJ", LifecycleState::Completed) == 0, || {
            format!("iteration {i}: join fired after one branch")
        })?;
        let t2 = next();
        let o = rt.submit(completed(m, case, second, Payload::new(), t2)).map_err(err)?;
        ensure(count(&o, "AJ", LifecycleState::Completed) == 1, || {
            format!("iteration {i}: join fired {} times", count(&o, "AJ", LifecycleState::Completed))
        })?;
        let aj = o.events.iter().find(|e| e.node == "AJ").expect("counted above");
        ensure(aj.ts == Timestamp(t2), || format!("iteration {i}: join ts {}", aj.ts))?;
        rt.submit(completed(m, case, "Review", payload([("iteration", Scalar::Int(i))]), next()))
            .map_err(err)?;
    }
    let joins = rt
        .log()
        .iter()
        .filter(|e| e.case == case && e.node == "AJ" && e.state == LifecycleState::Completed)
        .count();
    ensure(joins == 5, || format!("{joins} join activations"))?;
    ensure(status(&rt, case) == Some(CaseStatus::Completed), || "case did not complete".into())
}

// ---------------------------------------------------------------------------

type Script<'a> = [(&'a str, &'a [(&'a str, &'a str)], &'a [&'a str])];

fn run_script(rt: &Runtime, model: ModelId, case: CaseId, script: &Script) -> Check {
    for (i, (task, set, want)) in script.iter().enumerate() {
        let p = set.iter().map(|(k, v)| (k.to_string(), Scalar::Str(v.to_string()))).collect();
        rt.submit(completed(model, case, task, p, 10 + i as u64))
            .map_err(|e| format!("{task}: {e}"))?;
        let got = offered(rt, case);
        ensure(got == *want, || format!("after {task}: offers {got:?}, want {want:?}"))?;
    }
    Ok(())
}

fn irreducible() -> Check {
    let src = spec("irreducible_loop.bpmn");
    let start = |rt: &Runtime, entry: &str| -> Result<(ModelId, CaseId), String> {
        let dm = rt.deploy(&src).map_err(err)?;
        let p = payload([("entry", Scalar::Str(entry.into()))]);
        let c = rt.start_case(dm.model, p, Some(Timestamp(1))).map_err(err)?.case;
        Ok((dm.model, c))
    };

    let rt = Runtime::new(Config::default());
    let (m, c) = start(&rt, "left")?;
    ensure(offered(&rt, c) == ["A1", "A2"], || format!("left start offers {:?}", offered(&rt, c)))?;
    run_script(&rt, m, c, &[
        ("A1", &[], &["A2"]),
        ("A2", &[], &["C"]),
        ("C", &[("afterC", "d")], &["D"]),
        ("D", &[("afterD", "c")], &["C"]),
        ("C", &[("afterC", "c")], &["C"]),
        ("C", &[("afterC", "d")], &["D"]),
        ("D", &[("afterD", "end")], &[]),
    ])
    .map_err(|e| format!("left entry: {e}"))?;
    ensure(status(&rt, c) == Some(CaseStatus::Completed), || "left entry did not complete".into())?;

    let rt = Runtime::new(Config::default());
    let (m, c) = start(&rt, "right")?;
    ensure(offered(&rt, c) == ["B"], || format!("right start offers {:?}", offered(&rt, c)))?;
    run_script(&rt, m, c, &[
        ("B", &[], &["D"]),
        ("D", &[("afterD", "c")], &["C"]),
        ("C", &[("afterC", "d")], &["D"]),
        ("D", &[("afterD", "end")], &[]),
    ])
    .map_err(|e| format!("right entry: {e}"))?;
    ensure(status(&rt, c) == Some(CaseStatus::Completed), || "right entry did not complete".into())?;

    let naive = CompileOptions { or_join: OrJoinMode::Naive };
    let rt = Runtime::with_options(Config::default(), naive);
    let (m, c) = start(&rt, "left")?;
    run_script(&rt, m, c, &[("A1", &[], &["A2"]), ("A2", &[], &[])])
        .map_err(|e| format!("naive control: {e}"))?;
    ensure(status(&rt, c) == Some(CaseStatus::Running), || "naive control is not stuck".into())
}

// ---------------------------------------------------------------------------

fn nodes_of(rt: &Runtime, case: CaseId) -> BTreeSet<String> {
    rt.log().iter().filter(|e| e.case == case).map(|e| e.node.clone()).collect()
}

/// Deploys v1, starts case 1, migrates to v2, then finishes case 1 and
/// runs case 2 to completion. Case 3 is left running after F.
fn migration_run(rt: &Runtime) -> Result<(CaseId, CaseId, Vec<String>, Vec<String>), String> {
    let v1 = rt.deploy(&spec("running_example.bpmn")).map_err(err)?;
    let m = v1.model;
    let vars = || payload([("needB", Scalar::Bool(false)), ("again", Scalar::Bool(false))]);
    let c1 = rt.start_case(m, vars(), Some(Timestamp(1))).map_err(err)?.case;
    rt.submit(completed(m, c1, "A", Payload::new(), 2)).map_err(err)?;
    ensure(offered(rt, c1) == ["C", "D"], || format!("case 1 offers {:?}", offered(rt, c1)))?;
    let v2 = rt
        .migrate(&spec("running_example_v2.bpmn"), Some(MigrationPolicy::Cutover))
        .map_err(err)?;
    for (n, ts) in [("C", 3), ("D", 4)] {
        rt.submit(completed(m, c1, n, Payload::new(), ts)).map_err(err)?;
    }
    ensure(offered(rt, c1) == ["E"], || format!("in-flight case offers {:?}", offered(rt, c1)))?;
    rt.submit(completed(m, c1, "E", Payload::new(), 5)).map_err(err)?;

    let c2 = rt.start_case(m, vars(), Some(Timestamp(6))).map_err(err)?.case;
    rt.submit(completed(m, c2, "A", Payload::new(), 7)).map_err(err)?;
    ensure(offered(rt, c2) == ["C", "D", "F"], || format!("new case offers {:?}", offered(rt, c2)))?;
    for (n, ts) in [("C", 8), ("F", 9), ("D", 10)] {
        rt.submit(completed(m, c2, n, Payload::new(), ts)).map_err(err)?;
    }
    let c3 = rt.start_case(m, vars(), Some(Timestamp(11))).map_err(err)?.case;
    rt.submit(completed(m, c3, "A", Payload::new(), 12)).map_err(err)?;
    rt.submit(completed(m, c3, "F", Payload::new(), 13)).map_err(err)?;
    Ok((c1, c2, v1.rule_ids, v2.rule_ids))
}

fn migration() -> Check {
    let rt = Runtime::new(Config::default());
    let (c1, c2, old, new) = migration_run(&rt)?;
    ensure(status(&rt, c1) == Some(CaseStatus::Completed), || "in-flight case did not complete".into())?;
    ensure(status(&rt, c2) == Some(CaseStatus::Completed), || "new case did not complete".into())?;
    let n1 = nodes_of(&rt, c1);
    let n2 = nodes_of(&rt, c2);
    ensure(n1.contains("E") && !n1.contains("F"), || format!("in-flight case ran {n1:?}"))?;
    ensure(n2.contains("F") && !n2.contains("E"), || format!("new case ran {n2:?}"))?;

    let retired: Vec<&String> = old.iter().filter(|r| !new.contains(r)).collect();
    let added: Vec<&String> = new.iter().filter(|r| !old.contains(r)).collect();
    ensure(!retired.is_empty() && !added.is_empty(), || "migration changed no rules".into())?;
    let last = rt.last_case().0;
    rt.with_shard(c1, |o| {
        let admits = |id: &String, c: u64| {
            o.engine()
                .rule(id)
                .is_some_and(|r| r.case_filter.is_none_or(|f| f.admits(c)))
        };
        for c in 1..=last + 100 {
            let a = retired.iter().any(|id| admits(id, c));
            let b = added.iter().any(|id| admits(id, c));
            ensure(a != b, || format!("case {c}: old rules {a}, new rules {b}"))?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------

fn purge() -> Check {
    let rt = Runtime::new(Config::default());
    let m = rt.deploy(&spec("minimal.bpmn")).map_err(err)?.model;
    let sizes = |rt: &Runtime| (rt.table_len(EXECUTION_STATE), rt.table_len(CASE_VARIABLES));
    let c = rt.start_case(m, Payload::new(), Some(Timestamp(1))).map_err(err)?.case;
    let mut peak = sizes(&rt);
    rt.submit(completed(m, c, "T", Payload::new(), 2)).map_err(err)?;
    let after = sizes(&rt);
    peak = (peak.0.max(after.0), peak.1.max(after.1));
    for i in 1..10_000u64 {
        let c = rt.start_case(m, Payload::new(), Some(Timestamp(10 * i))).map_err(err)?.case;
        rt.submit(completed(m, c, "T", Payload::new(), 10 * i + 1)).map_err(err)?;
        ensure(status(&rt, c) == Some(CaseStatus::Completed), || format!("case {c} did not complete"))?;
    }
    let end = sizes(&rt);
    ensure(end.0 <= peak.0 && end.1 <= peak.1, || {
        format!("rows after 10000 cases {end:?}, single-case peak {peak:?}")
    })
}

// ---------------------------------------------------------------------------

fn inner(rt: &Runtime, case: CaseId) -> BTreeMap<String, EventFlags> {
    rt.with_shard(case, |o| event_states(o.engine(), ModelId(6), case))
}

fn flags(happened: bool, included: bool, restless: bool) -> EventFlags {
    EventFlags { happened, included, restless }
}

fn hybrid_run(rt: &Runtime) -> Result<(CaseId, CaseId), String> {
    let m = ModelId(6);
    let c1 = rt.start_case(m, Payload::new(), Some(Timestamp(1))).map_err(err)?.case;
    let c2 = rt.start_case(m, Payload::new(), Some(Timestamp(2))).map_err(err)?.case;
    let mut ts = 2;
    let mut go = |c: CaseId, n: &str| {
        ts += 1;
        rt.submit(completed(m, c, n, Payload::new(), ts)).map(|_| ()).map_err(|e| format!("case {c} {n}: {e}"))
    };
    go(c1, "A")?;
    let init = inner(rt, c1);
    let want: BTreeMap<String, EventFlags> = [
        ("B", flags(false, true, true)),
        ("C", flags(false, false, false)),
        ("D", flags(false, true, true)),
        ("E", flags(false, true, true)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    ensure(init == want, || format!("inner rows after A: {init:?}"))?;

    go(c2, "A")?;
    go(c1, "B")?;
    ensure(inner(rt, c2) == want, || "case 2 saw case 1's event".into())?;
    go(c2, "E")?;
    go(c1, "C")?;
    go(c1, "E")?;
    ensure(offered(rt, c1).contains(&"D".to_string()), || format!("D not enabled: {:?}", offered(rt, c1)))?;
    go(c1, "D")?;
    ensure(inner(rt, c1).is_empty(), || format!("inner rows left after D: {:?}", inner(rt, c1)))?;
    ensure(inner(rt, c2).len() == 4, || "case 2 lost its inner rows".into())?;
    ensure(offered(rt, c1) == ["F"], || format!("after D offers {:?}", offered(rt, c1)))?;
    go(c1, "F")?;
    go(c2, "D")?;
    go(c2, "F")?;
    Ok((c1, c2))
}

fn hybrid() -> Check {
    let rt = Runtime::new(Config::default());
    rt.deploy(&spec("hybrid.toml")).map_err(err)?;
    let (c1, c2) = hybrid_run(&rt)?;
    for c in [c1, c2] {
        ensure(status(&rt, c) == Some(CaseStatus::Completed), || format!("case {c} did not complete"))?;
        let trail: Vec<String> = rt
            .log()
            .iter()
            .filter(|e| e.case == c && e.state == LifecycleState::Completed)
            .map(|e| e.node.clone())
            .collect();
        let pos = |n: &str| trail.iter().position(|x| x == n).unwrap_or(usize::MAX);
        ensure(pos("A") < pos("D") && pos("D") < pos("P") && pos("P") < pos("F") && pos("F") < pos("EE"), || {
            format!("case {c} order {trail:?}")
        })?;
    }
    ensure(rt.table_len(EVENT_STATE) == 0, || "inner rows remain".into())
}

// ---------------------------------------------------------------------------

fn replay() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = Config {
        data_dir: Some(dir.path().to_path_buf()),
        ..Config::default()
    };
    let rt = Runtime::open(config.clone()).map_err(err)?;
    migration_run(&rt)?;
    rt.deploy(&spec("hybrid.toml")).map_err(err)?;
    hybrid_run(&rt)?;
    let export = dir.path().join("export.ndjson");
    std::fs::write(&export, export_ndjson(&rt.log(), None, None)).map_err(err)?;
    let events = read_events(&export).map_err(err)?;
    let (fresh, report) = Runtime::replay(Config::default(), &rt.control_records(), &events).map_err(err)?;
    ensure(report.faults == 0, || format!("{} faults during replay", report.faults))?;
    ensure(report.log_matches, || "replayed log differs".into())?;
    ensure(fresh.snapshot() == rt.snapshot(), || "table snapshots differ".into())?;
    let statuses = |r: &Runtime| -> Vec<(CaseId, CaseStatus)> { r.cases().iter().map(|c| (c.case, c.status)).collect() };
    ensure(statuses(&fresh) == statuses(&rt), || "case statuses differ".into())?;
    ensure(statuses(&rt).iter().any(|(_, s)| *s == CaseStatus::Running), || "no running case was replayed".into())?;
    drop(rt);
    let reopened = Runtime::open(config).map_err(err)?;
    ensure(statuses(&reopened) == statuses(&fresh), || "reopened data dir differs".into())
}

// ---------------------------------------------------------------------------

const NODES: [&str; 4] = ["start", "A", "RareTask", "B"];
const STATES: [&str; 3] = ["started", "completed", "skipped"];
const WINDOW: u64 = 5 * 60 * 1000;

fn synthetic(n: usize, seed: u64) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts = 0u64;
    (0..n)
        .map(|_| {
            ts += rng.gen_range(1..40_000);
            let mut r = Row::new();
            r.insert("pmID".into(), Value::from(rng.gen_range(1..=3u64)));
            r.insert("caseID".into(), Value::from(rng.gen_range(1..=200u64)));
            r.insert("nodeID".into(), Value::from(NODES[rng.gen_range(0..NODES.len())]));
            r.insert("state".into(), Value::from(STATES[rng.gen_range(0..STATES.len())]));
            r.insert("payload".into(), Value::Map(Default::default()));
            r.insert("ts".into(), Value::from(ts));
            r
        })
        .collect()
}

fn field(name: &str) -> RuleExpr {
    RuleExpr::field("e", name)
}

fn all_fields() -> Vec<(String, RuleExpr)> {
    PROCESS_FIELDS.iter().map(|(f, _)| (f.to_string(), field(f))).collect()
}

fn get<'a>(r: &'a Row, f: &str) -> &'a Value {
    &r[f]
}

fn four_queries() -> Check {
    let mut eng = Engine::new();
    for s in ["EventStream", "RarelyExecutedTasksStream"] {
        eng.register_schema(process_stream_schema(s)).map_err(err)?;
    }
    eng.register_schema(SchemaDef::table("SkippedTasksTable", &PROCESS_FIELDS, &["pmID", "caseID", "nodeID", "ts"]))
        .map_err(err)?;
    eng.register_schema(SchemaDef::stream("NewInstancesStream", &[("caseID", FieldType::Int), ("ts", FieldType::Int)]))
        .map_err(err)?;
    eng.register_schema(SchemaDef::table("ProcessModelTable", &[("id", FieldType::Int), ("version", FieldType::Int)], &["id"]))
        .map_err(err)?;
    eng.register_schema(SchemaDef::stream(
        "NewInstancesByProcessVersionStream",
        &[("caseID", FieldType::Int), ("version", FieldType::Int)],
    ))
    .map_err(err)?;
    let versions = [(1u64, 4u64), (2, 7)];
    for (id, v) in versions {
        let row: Row = [("id".to_string(), Value::from(id)), ("version".to_string(), Value::from(v))].into_iter().collect();
        eng.put_row("ProcessModelTable", row).map_err(err)?;
    }
    let rules = vec![
        RuleIR::new("r1", "EventStream", "e")
            .filter(RuleExpr::eq(field("nodeID"), RuleExpr::lit("RareTask")))
            .action(Action::Emit { stream: "RarelyExecutedTasksStream".into(), fields: all_fields() }),
        RuleIR::new("r2", "EventStream", "e")
            .filter(RuleExpr::eq(field("state"), RuleExpr::lit("skipped")))
            .action(Action::Insert { table: "SkippedTasksTable".into(), values: all_fields() }),
        RuleIR::new("r3", "EventStream", "e")
            .filter(RuleExpr::eq(field("nodeID"), RuleExpr::lit("start")))
            .action(Action::Emit {
                stream: "NewInstancesStream".into(),
                fields: vec![("caseID".into(), field("caseID")), ("ts".into(), field("ts"))],
            }),
        RuleIR::new("r4", "EventStream", "e")
            .join("ProcessModelTable", "p", vec![("id".into(), field("pmID"))])
            .filter(RuleExpr::eq(field("nodeID"), RuleExpr::lit("start")))
            .action(Action::Emit {
                stream: "NewInstancesByProcessVersionStream".into(),
                fields: vec![
                    ("caseID".into(), field("caseID")),
                    ("version".into(), RuleExpr::field("p", "version")),
                ],
            }),
    ];
    for r in rules {
        eng.deploy_rule(r).map_err(err)?;
    }
    let input = synthetic(10_000, 7);
    let mut out: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for r in &input {
        for (s, row) in eng.ingest("EventStream", r.clone()).map_err(err)?.emitted() {
            out.entry(s).or_default().push(row);
        }
    }

    let want1: Vec<Row> = input.iter().filter(|r| get(r, "nodeID") == &Value::from("RareTask")).cloned().collect();
    let got1 = out.remove("RarelyExecutedTasksStream").unwrap_or_default();
    ensure(got1 == want1, || format!("filtered stream: {} rows, want {}", got1.len(), want1.len()))?;

    let mut want2: Vec<Row> = input.iter().filter(|r| get(r, "state") == &Value::from("skipped")).cloned().collect();
    let key = |r: &Row| {
        (get(r, "pmID").clone(), get(r, "caseID").clone(), get(r, "nodeID").clone(), get(r, "ts").clone())
    };
    want2.sort_by_key(|r| key(r));
    let mut got2: Vec<Row> = eng.rows("SkippedTasksTable").cloned().collect();
    got2.sort_by_key(|r| key(r));
    ensure(got2 == want2, || format!("skipped table: {} rows, want {}", got2.len(), want2.len()))?;

    let starts = out.remove("NewInstancesStream").unwrap_or_default();
    let last = input.last().map(|r| match get(r, "ts") { Value::Int(t) => *t as u64, _ => 0 }).unwrap_or(0);
    let counts: Vec<(u64, i64)> = eval_window(&WindowSpec::count(WINDOW), &starts, Some((0, last + 1)))
        .into_iter()
        .map(|w| (w.start, match w.value { Value::Int(n) => n, _ => -1 }))
        .collect();
    let mut buckets: BTreeMap<u64, i64> = (0..=last / WINDOW).map(|k| (k * WINDOW, 0)).collect();
    for r in input.iter().filter(|r| get(r, "nodeID") == &Value::from("start")) {
        if let Value::Int(t) = get(r, "ts") {
            *buckets.entry((*t as u64 / WINDOW) * WINDOW).or_default() += 1;
        }
    }
    let want3: Vec<(u64, i64)> = buckets.into_iter().collect();
    ensure(counts == want3, || format!("window counts: {} windows, want {}", counts.len(), want3.len()))?;

    let table: BTreeMap<u64, u64> = versions.into_iter().collect();
    let want4: Vec<(Value, Value)> = input
        .iter()
        .filter(|r| get(r, "nodeID") == &Value::from("start"))
        .filter_map(|r| match get(r, "pmID") {
            Value::Int(m) => table.get(&(*m as u64)).map(|v| (get(r, "caseID").clone(), Value::from(*v))),
            _ => None,
        })
        .collect();
    let got4: Vec<(Value, Value)> = out
        .remove("NewInstancesByProcessVersionStream")
        .unwrap_or_default()
        .into_iter()
        .map(|r| (r["caseID"].clone(), r["version"].clone()))
        .collect();
    ensure(got4 == want4, || format!("version join: {} rows, want {}", got4.len(), want4.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Check, u64); 12] = [
        ("and-interleave trace", and_interleave_trace, 1),
        ("bpmn case-study log", case_management_bpmn_log, 1),
        ("dcr case-study enabled events", case_management_dcr_session, 1),
        ("dcr oracle equivalence x1000", dcr_oracle, 30),
        ("bpmn oracle equivalence x1000", bpmn_oracle, 60),
        ("loop-nested and-join x5", loop_and, 1),
        ("irreducible loop or-joins", irreducible, 1),
        ("cutover migration", migration, 1),
        ("purge bound over 10000 cases", purge, 60),
        ("hybrid bpmn+dcr", hybrid, 1),
        ("replay determinism", replay, 5),
        ("cql four-query workload over 10000 events", four_queries, 10),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let t = Instant::now();
        let r = check();
        let took = t.elapsed();
        let r = r.and_then(|()| {
            ensure(took <= Duration::from_secs(limit), || format!("took {took:.2?}, limit {limit} s"))
        });
        match r {
            Ok(()) => println!("PASS {name} ({took:.2?})"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} ({took:.2?}): {e}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
