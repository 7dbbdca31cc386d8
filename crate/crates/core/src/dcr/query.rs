use std::collections::BTreeMap;

use crate::cql::{Engine, Value};
use crate::event::{CaseId, ModelId};
use crate::schema::EVENT_STATE;

use super::model::{DcrError, DcrModel, Marking};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventFlags {
    pub happened: bool,
    pub included: bool,
    pub restless: bool,
}

/// The case's `EventState` rows by event id.
pub fn event_states(
    engine: &Engine,
    pm: ModelId,
    case: CaseId,
) -> BTreeMap<String, EventFlags> {
    let rows = engine
        .query_table(
            EVENT_STATE,
            &[("pmID", Value::from(pm.0)), ("caseID", Value::from(case.0))],
        )
        .unwrap_or_default();
    let flag = |r: &crate::cql::Row, f: &str| r.get(f).and_then(Value::as_bool).unwrap_or(false);
    rows.iter()
        .filter_map(|r| {
            let id = r.get("eventID")?.as_str()?.to_string();
            Some((
                id,
                EventFlags {
                    happened: flag(r, "happened"),
                    included: flag(r, "included"),
                    restless: flag(r, "restless"),
                },
            ))
        })
        .collect()
}

fn states_of(
    engine: &Engine,
    m: &DcrModel,
    pm: ModelId,
    case: CaseId,
) -> Result<BTreeMap<String, EventFlags>, DcrError> {
    let mut st = event_states(engine, pm, case);
    st.retain(|e, _| m.has_event(e));
    if st.is_empty() {
        return Err(DcrError::UnknownCase {
            model: pm,
            case: case.0,
        });
    }
    Ok(st)
}

pub fn marking_of(
    engine: &Engine,
    m: &DcrModel,
    pm: ModelId,
    case: CaseId,
) -> Result<Marking, DcrError> {
    let st = states_of(engine, m, pm, case)?;
    let pick = |f: fn(&EventFlags) -> bool| {
        st.iter()
            .filter(|(_, fl)| f(fl))
            .map(|(e, _)| e.clone())
            .collect()
    };
    Ok(Marking {
        executed: pick(|f| f.happened),
        pending: pick(|f| f.restless),
        included: pick(|f| f.included),
    })
}

/// Enabled events in declaration order.
pub fn enabled_events(
    engine: &Engine,
    m: &DcrModel,
    pm: ModelId,
    case: CaseId,
) -> Result<Vec<String>, DcrError> {
    let st = states_of(engine, m, pm, case)?;
    let ok = |e: &str| {
        st.get(e).is_some_and(|f| f.included)
            && m
                .conditions_of(e)
                .iter()
                .all(|c| st.get(*c).is_none_or(|f| !f.included || f.happened))
    };
    Ok(m.events.iter().filter(|e| ok(e)).cloned().collect())
}

/// No included event is still pending.
pub fn accepting(
    engine: &Engine,
    m: &DcrModel,
    pm: ModelId,
    case: CaseId,
) -> Result<bool, DcrError> {
    let st = states_of(engine, m, pm, case)?;
    Ok(!st.values().any(|f| f.included && f.restless))
}
