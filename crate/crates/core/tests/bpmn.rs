use std::collections::BTreeSet;
use std::path::Path;

use flowcq::bpmn::{
    classify_join_inputs, compile_bpmn, diff_models, parse_bpmn, BpmnError, LoopInfo, NodeChange,
    NodeKind,
};
use flowcq::event::{payload, CaseId, LifecycleState, ModelId, Payload, RawExecutionEvent, Scalar, Timestamp};
use flowcq::runtime::{CaseStatus, Config, ModelSpec, Runtime, RuntimeError};
use proptest::prelude::*;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

/// A process document around `body`.
fn process(body: &str) -> String {
    format!(
        r#"<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL">
  <process id="p" modelId="9" version="1">
{body}
  </process>
</definitions>"#
    )
}

fn flow(id: &str, from: &str, to: &str) -> String {
    format!(r#"<sequenceFlow id="{id}" sourceRef="{from}" targetRef="{to}"/>"#)
}

fn cond_flow(id: &str, from: &str, to: &str, cond: &str) -> String {
    format!(
        r#"<sequenceFlow id="{id}" sourceRef="{from}" targetRef="{to}"><conditionExpression>{cond}</conditionExpression></sequenceFlow>"#
    )
}

fn deploy(src: &str) -> (Runtime, ModelId) {
    let rt = Runtime::new(Config::default());
    let m = rt.deploy(&ModelSpec::Bpmn { source: src.to_string() }).unwrap().model;
    (rt, m)
}

fn offered(rt: &Runtime, case: CaseId) -> Vec<String> {
    let mut v: Vec<String> = rt.enabled_work(case).unwrap().into_iter().map(|w| w.node).collect();
    v.sort();
    v
}

fn complete(rt: &Runtime, m: ModelId, case: CaseId, node: &str, p: Payload, ts: u64) -> Vec<RawExecutionEvent> {
    rt.submit(RawExecutionEvent::new(m, case, node, LifecycleState::Completed, p, Timestamp(ts)))
        .unwrap()
        .events
}

fn states_of(events: &[RawExecutionEvent], node: &str) -> Vec<LifecycleState> {
    events.iter().filter(|e| e.node == node).map(|e| e.state).collect()
}

#[test]
fn case_management_fixture_shape() {
    let m = parse_bpmn(fixture("case_management.bpmn").as_bytes()).unwrap();
    assert_eq!(m.model_id, ModelId(3));
    assert_eq!(m.nodes_of(NodeKind::Task).len(), 10);
    assert_eq!(m.start_events(), vec!["SE"]);
    assert_eq!(m.end_events(), vec!["EE"]);
}

#[test]
fn parse_errors() {
    assert!(matches!(parse_bpmn(b"<definitions"), Err(BpmnError::Xml(_))));
    assert!(matches!(
        parse_bpmn(br#"<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL"/>"#),
        Err(BpmnError::NoProcess)
    ));
    let dangling = process(&format!(r#"<startEvent id="SE"/>{}"#, flow("f1", "SE", "X")));
    assert!(matches!(parse_bpmn(dangling.as_bytes()), Err(BpmnError::DanglingEdge { .. })));
    let dup = process(r#"<startEvent id="SE"/><userTask id="SE"/>"#);
    assert!(matches!(parse_bpmn(dup.as_bytes()), Err(BpmnError::DuplicateId(_))));
    let bad = process(&format!(
        r#"<startEvent id="SE"/><endEvent id="EE"/>{}"#,
        cond_flow("f1", "SE", "EE", "a = = 1")
    ));
    assert!(matches!(parse_bpmn(bad.as_bytes()), Err(BpmnError::Condition { .. })));
    let two = process(&format!(
        r#"<startEvent id="SE"/><userTask id="T"/><endEvent id="EE"/><endEvent id="EE2"/>{}{}{}"#,
        flow("f1", "SE", "T"),
        flow("f2", "T", "EE"),
        flow("f3", "T", "EE2"),
    ));
    assert!(matches!(parse_bpmn(two.as_bytes()), Err(BpmnError::MultipleOutgoing { .. })));
}

#[test]
fn minimal_completion_emits_only_the_end_event() {
    let (rt, m) = deploy(&fixture("minimal.bpmn"));
    let c = rt.start_case(m, Payload::new(), Some(Timestamp(1))).unwrap().case;
    assert_eq!(offered(&rt, c), ["T"]);
    let events = complete(&rt, m, c, "T", Payload::new(), 2);
    let derived: Vec<(&str, LifecycleState)> = events[1..].iter().map(|e| (e.node.as_str(), e.state)).collect();
    assert_eq!(derived, [("EE", LifecycleState::Completed)]);
    assert_eq!(rt.case(c).unwrap().status, CaseStatus::Completed);
    assert_eq!(rt.state(c).unwrap().len(), 0);
}

#[test]
fn derived_events_inherit_the_trigger_timestamp() {
    let (rt, m) = deploy(&fixture("and_interleave.bpmn"));
    let out = rt.start_case(m, Payload::new(), Some(Timestamp(42))).unwrap();
    assert!(out.events.len() >= 4);
    assert!(out.events.iter().all(|e| e.ts == Timestamp(42)));
}

fn xor_chain() -> String {
    process(&format!(
        r#"<startEvent id="SE"/><exclusiveGateway id="XS"/><userTask id="A"/><userTask id="B1"/>
<userTask id="B2"/><userTask id="B3"/><exclusiveGateway id="XJ"/><endEvent id="EE"/>
{}{}{}{}{}{}{}{}"#,
        flow("f1", "SE", "XS"),
        cond_flow("f2", "XS", "A", "x = 1"),
        cond_flow("f3", "XS", "B1", "x = 2"),
        flow("f4", "B1", "B2"),
        flow("f5", "B2", "B3"),
        flow("f6", "A", "XJ"),
        flow("f7", "B3", "XJ"),
        flow("f8", "XJ", "EE"),
    ))
}

#[test]
fn skip_propagates_down_a_chain() {
    let (rt, m) = deploy(&xor_chain());
    let out = rt.start_case(m, payload([("x", Scalar::Int(1))]), Some(Timestamp(1))).unwrap();
    for n in ["B1", "B2", "B3"] {
        assert_eq!(states_of(&out.events, n), [LifecycleState::Skipped], "{n}");
    }
    assert_eq!(states_of(&out.events, "A"), [LifecycleState::Started]);
    assert_eq!(offered(&rt, out.case), ["A"]);
    let events = complete(&rt, m, out.case, "A", Payload::new(), 2);
    assert_eq!(states_of(&events, "XJ"), [LifecycleState::Completed]);
    assert_eq!(rt.case(out.case).unwrap().status, CaseStatus::Completed);
}

#[test]
fn xor_with_no_true_condition_skips_everything() {
    let (rt, m) = deploy(&xor_chain());
    let out = rt.start_case(m, payload([("x", Scalar::Int(3))]), Some(Timestamp(1))).unwrap();
    assert!(offered(&rt, out.case).is_empty());
    assert_eq!(states_of(&out.events, "A"), [LifecycleState::Skipped]);
    assert_eq!(states_of(&out.events, "XJ"), [LifecycleState::Skipped]);
}

#[test]
fn unbound_condition_variable_faults_the_case() {
    let (rt, m) = deploy(&xor_chain());
    let err = rt.start_case(m, Payload::new(), Some(Timestamp(1))).unwrap_err();
    assert!(matches!(err, RuntimeError::Fault(_)), "{err}");
    let case = rt.cases().last().unwrap().case;
    assert_eq!(rt.case(case).unwrap().status, CaseStatus::Faulted);
    // another case of the same model is unaffected
    let ok = rt.start_case(m, payload([("x", Scalar::Int(2))]), Some(Timestamp(2))).unwrap();
    assert_eq!(offered(&rt, ok.case), ["B1"]);
}

#[test]
fn mixed_and_join_stalls_with_a_diagnostic() {
    let src = process(&format!(
        r#"<startEvent id="SE"/><exclusiveGateway id="XS"/><userTask id="A"/><userTask id="B"/>
<parallelGateway id="AJ"/><endEvent id="EE"/>{}{}{}{}{}{}"#,
        flow("f1", "SE", "XS"),
        cond_flow("f2", "XS", "A", "go = true"),
        cond_flow("f3", "XS", "B", "go = false"),
        flow("f4", "A", "AJ"),
        flow("f5", "B", "AJ"),
        flow("f6", "AJ", "EE"),
    ));
    let (rt, m) = deploy(&src);
    let out = rt.start_case(m, payload([("go", Scalar::Bool(true))]), Some(Timestamp(1))).unwrap();
    let after = rt
        .submit(RawExecutionEvent::new(m, out.case, "A", LifecycleState::Completed, Payload::new(), Timestamp(2)))
        .unwrap();
    assert!(states_of(&after.events, "AJ").is_empty());
    assert!(!after.diagnostics.is_empty());
    assert_eq!(rt.case(out.case).unwrap().status, CaseStatus::Running);
    assert!(offered(&rt, out.case).is_empty());
}

#[test]
fn or_join_waits_only_for_taken_branches() {
    let src = process(&format!(
        r#"<startEvent id="SE"/><inclusiveGateway id="OS"/><userTask id="A"/><userTask id="B"/>
<userTask id="C"/><inclusiveGateway id="OJ"/><endEvent id="EE"/>{}{}{}{}{}{}{}{}"#,
        flow("f1", "SE", "OS"),
        cond_flow("f2", "OS", "A", "a = true"),
        cond_flow("f3", "OS", "B", "b = true"),
        cond_flow("f4", "OS", "C", "c = true"),
        flow("f5", "A", "OJ"),
        flow("f6", "B", "OJ"),
        flow("f7", "C", "OJ"),
        flow("f8", "OJ", "EE"),
    ));
    let (rt, m) = deploy(&src);
    let p = payload([("a", Scalar::Bool(true)), ("b", Scalar::Bool(false)), ("c", Scalar::Bool(true))]);
    let c = rt.start_case(m, p, Some(Timestamp(1))).unwrap().case;
    assert_eq!(offered(&rt, c), ["A", "C"]);
    assert!(states_of(&complete(&rt, m, c, "C", Payload::new(), 2), "OJ").is_empty());
    let events = complete(&rt, m, c, "A", Payload::new(), 3);
    assert_eq!(states_of(&events, "OJ"), [LifecycleState::Completed]);
    assert_eq!(rt.case(c).unwrap().status, CaseStatus::Completed);
}

#[test]
fn task_payload_merges_into_case_variables() {
    let (rt, m) = deploy(&fixture("minimal.bpmn"));
    let c = rt.start_case(m, payload([("a", Scalar::Int(1)), ("b", Scalar::Int(2))]), Some(Timestamp(1))).unwrap().case;
    assert_eq!(rt.variables(c).unwrap().unwrap(), payload([("a", Scalar::Int(1)), ("b", Scalar::Int(2))]));
}

#[test]
fn running_example_diff() {
    let v1 = parse_bpmn(fixture("running_example.bpmn").as_bytes()).unwrap();
    let v2 = parse_bpmn(fixture("running_example_v2.bpmn").as_bytes()).unwrap();
    let d = diff_models(&v1, &v2).unwrap();
    assert_eq!(d.added, BTreeSet::from(["F".to_string()]));
    assert_eq!(d.removed, BTreeSet::from(["E".to_string()]));
    assert!(d.modified.contains("EE1"));
    assert!(d.modified.contains("AJ-1"));
    assert_eq!(d.change("AS-1"), Some(NodeChange::Unchanged));
    assert_eq!(d.change("C"), Some(NodeChange::Unchanged));
    assert_eq!(d.change("nope"), None);
}

#[test]
fn identical_models_diff_as_unchanged() {
    let v1 = parse_bpmn(fixture("running_example.bpmn").as_bytes()).unwrap();
    let d = diff_models(&v1, &v1).unwrap();
    assert!(d.added.is_empty() && d.removed.is_empty() && d.modified.is_empty());
    assert_eq!(d.unchanged.len(), v1.nodes.len());
}

#[test]
fn condition_change_marks_the_target_modified() {
    let text = fixture("running_example.bpmn");
    let v1 = parse_bpmn(text.as_bytes()).unwrap();
    let v2 = parse_bpmn(text.replace("${needB = true}", "${needB = false}").as_bytes()).unwrap();
    let d = diff_models(&v1, &v2).unwrap();
    assert_eq!(d.modified, BTreeSet::from(["B".to_string()]));
}

#[test]
fn diff_across_models_is_an_error() {
    let v1 = parse_bpmn(fixture("running_example.bpmn").as_bytes()).unwrap();
    let other = parse_bpmn(fixture("minimal.bpmn").as_bytes()).unwrap();
    assert!(matches!(diff_models(&v1, &other), Err(BpmnError::ModelMismatch(..))));
}

#[test]
fn running_example_join_classification() {
    let m = parse_bpmn(fixture("running_example.bpmn").as_bytes()).unwrap();
    let loops = LoopInfo::new(&m);
    for n in ["XJ-1", "OS-1", "B", "AS-1", "C", "D", "AJ-1", "OJ-1", "XS-1"] {
        assert!(loops.in_loop(n), "{n}");
    }
    for n in ["SE", "A", "E", "EE1"] {
        assert!(!loops.in_loop(n), "{n}");
    }
    assert!(loops.is_exit("XS-1", "E"));
    assert!(!loops.is_exit("XS-1", "XJ-1"));
    let c = classify_join_inputs(&m);
    let xj = c.iter().find(|c| c.join == "XJ-1").unwrap();
    assert_eq!(xj.loopless, BTreeSet::from(["A".to_string()]));
    assert_eq!(xj.looping, BTreeSet::from(["XS-1".to_string()]));
    assert!(xj.is_loop_entry());
    let oj = c.iter().find(|c| c.join == "OJ-1").unwrap();
    assert!(!oj.is_loop_entry());
}

#[test]
fn rule_ids_order_merge_before_joins() {
    let m = parse_bpmn(fixture("running_example.bpmn").as_bytes()).unwrap();
    let c = compile_bpmn(&m).unwrap();
    let ids: Vec<&str> = c.rules.iter().map(|r| r.id.as_str()).collect();
    let merge = c.by_node["*"][0].as_str();
    let join = c.by_node["AJ-1"][0].as_str();
    assert!(merge < join);
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), ids.len(), "rule ids are unique");
    let text = c.pretty();
    assert!(text.contains("AJ-1"));
    assert!(!c.rules_of("E").is_empty());
}

#[test]
fn running_example_loops_back_through_the_or_block() {
    let (rt, m) = deploy(&fixture("running_example.bpmn"));
    let vars = |b: bool, again: bool| payload([("needB", Scalar::Bool(b)), ("again", Scalar::Bool(again))]);
    let c = rt.start_case(m, vars(true, true), Some(Timestamp(1))).unwrap().case;
    complete(&rt, m, c, "A", Payload::new(), 2);
    assert_eq!(offered(&rt, c), ["B", "C", "D"]);
    complete(&rt, m, c, "C", Payload::new(), 3);
    complete(&rt, m, c, "D", Payload::new(), 4);
    assert_eq!(offered(&rt, c), ["B"]);
    complete(&rt, m, c, "B", vars(false, true), 5);
    // second pass: only the AND branch
    assert_eq!(offered(&rt, c), ["C", "D"]);
    complete(&rt, m, c, "D", Payload::new(), 6);
    complete(&rt, m, c, "C", vars(false, false), 7);
    assert_eq!(offered(&rt, c), ["E"]);
    complete(&rt, m, c, "E", Payload::new(), 8);
    assert_eq!(rt.case(c).unwrap().status, CaseStatus::Completed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Exactly one branch of a mutually exclusive, exhaustive XOR split starts.
    #[test]
    fn xor_routing_starts_exactly_one_branch(x in 0i64..100) {
        let src = process(&format!(
            r#"<startEvent id="SE"/><exclusiveGateway id="XS"/><userTask id="A"/><userTask id="B"/><userTask id="C"/>
<exclusiveGateway id="XJ"/><endEvent id="EE"/>{}{}{}{}{}{}{}{}"#,
            flow("f1", "SE", "XS"),
            cond_flow("f2", "XS", "A", "x &lt; 30"),
            cond_flow("f3", "XS", "B", "x &gt;= 30 and x &lt; 60"),
            cond_flow("f4", "XS", "C", "x &gt;= 60"),
            flow("f5", "A", "XJ"),
            flow("f6", "B", "XJ"),
            flow("f7", "C", "XJ"),
            flow("f8", "XJ", "EE"),
        ));
        let (rt, m) = deploy(&src);
        let out = rt.start_case(m, payload([("x", Scalar::Int(x))]), Some(Timestamp(1))).unwrap();
        let started: Vec<&str> = out.events.iter()
            .filter(|e| ["A", "B", "C"].contains(&e.node.as_str()) && e.state == LifecycleState::Started)
            .map(|e| e.node.as_str()).collect();
        let skipped = out.events.iter()
            .filter(|e| ["A", "B", "C"].contains(&e.node.as_str()) && e.state == LifecycleState::Skipped)
            .count();
        let want = if x < 30 { "A" } else if x < 60 { "B" } else { "C" };
        prop_assert_eq!(started, vec![want]);
        prop_assert_eq!(skipped, 2);
    }

    /// The join fires once, after the last branch, whatever the completion order.
    #[test]
    fn and_join_fires_after_the_last_branch(order in Just(vec!["A", "B"]).prop_shuffle()) {
        let (rt, m) = deploy(&fixture("and_interleave.bpmn"));
        let c = rt.start_case(m, Payload::new(), Some(Timestamp(1))).unwrap().case;
        let first = complete(&rt, m, c, order[0], Payload::new(), 2);
        prop_assert!(states_of(&first, "AJ").is_empty());
        let second = complete(&rt, m, c, order[1], Payload::new(), 3);
        prop_assert_eq!(states_of(&second, "AJ"), vec![LifecycleState::Completed]);
    }
}
