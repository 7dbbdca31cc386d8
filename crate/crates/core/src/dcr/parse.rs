use std::collections::BTreeSet;

use roxmltree::{Document, Node as XmlNode};
use serde::Deserialize;

use crate::event::ModelId;

use super::model::{DcrError, DcrModel, Marking, RelationKind};

fn attr<'a>(n: &XmlNode<'a, '_>, name: &str) -> Option<&'a str> {
    n.attributes().find(|a| a.name() == name).map(|a| a.value())
}

fn child<'a, 'i>(n: &XmlNode<'a, 'i>, name: &str) -> Option<XmlNode<'a, 'i>> {
    n.children()
        .find(|c| c.is_element() && c.tag_name().name() == name)
}

fn elements<'a, 'i>(n: XmlNode<'a, 'i>, name: &'static str) -> impl Iterator<Item = XmlNode<'a, 'i>> {
    n.children()
        .filter(move |c| c.is_element() && c.tag_name().name() == name)
}

/// Reads a graph in either the XML layout or its JSON equivalent; the first
/// non-blank byte decides which.
pub fn parse_dcr(src: &[u8]) -> Result<DcrModel, DcrError> {
    let text = std::str::from_utf8(src).map_err(|e| DcrError::Xml(e.to_string()))?;
    if text.trim_start().starts_with('{') {
        parse_dcr_json(text)
    } else {
        parse_dcr_xml(text)
    }
}

pub fn parse_dcr_xml(text: &str) -> Result<DcrModel, DcrError> {
    let doc = Document::parse(text).map_err(|e| DcrError::Xml(e.to_string()))?;
    let root = doc
        .descendants()
        .find(|n| n.is_element() && n.tag_name().name() == "dcrgraph")
        .ok_or_else(|| DcrError::Structure("no dcrgraph element".into()))?;
    let mut m = DcrModel::new(
        ModelId(attr(&root, "modelId").and_then(|v| v.parse().ok()).unwrap_or(0)),
        attr(&root, "id").unwrap_or("dcr"),
        &[],
    );
    m.version = attr(&root, "version").and_then(|v| v.parse().ok()).unwrap_or(1);
    if let Some(events) = child(&root, "events") {
        for e in elements(events, "event") {
            let id = attr(&e, "id")
                .ok_or_else(|| DcrError::Structure("event without id".into()))?;
            m.events.push(id.to_string());
            m.labels
                .insert(id.to_string(), attr(&e, "label").unwrap_or(id).to_string());
        }
    }
    if let Some(rels) = child(&root, "relations") {
        for r in elements(rels, "relation") {
            let ty = attr(&r, "type").unwrap_or("");
            let kind = RelationKind::parse(ty).ok_or_else(|| DcrError::UnknownRelation(ty.into()))?;
            let end = |a: &str| {
                attr(&r, a)
                    .map(str::to_string)
                    .ok_or_else(|| DcrError::Structure(format!("{ty} relation lacks {a}")))
            };
            let (s, t) = (end("source")?, end("target")?);
            m.relations_mut(kind).insert((s, t));
        }
    }
    let marking = child(&root, "marking").ok_or(DcrError::MissingMarking)?;
    let ids = |name: &str| -> BTreeSet<String> {
        child(&marking, name)
            .map(|n| {
                elements(n, "event")
                    .filter_map(|e| attr(&e, "id").map(str::to_string))
                    .collect()
            })
            .unwrap_or_default()
    };
    m.marking = Marking {
        executed: ids("executed"),
        pending: ids("pending"),
        included: ids("included"),
    };
    m.validate()?;
    Ok(m)
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct JsonGraph {
    #[serde(default = "default_id")]
    id: String,
    #[serde(default)]
    model_id: u64,
    #[serde(default = "one")]
    version: u32,
    events: Vec<JsonEvent>,
    #[serde(default)]
    relations: Vec<JsonRelation>,
    marking: Option<JsonMarking>,
}

fn default_id() -> String {
    "dcr".into()
}

fn one() -> u32 {
    1
}

#[derive(Deserialize)]
struct JsonEvent {
    id: String,
    label: Option<String>,
}

#[derive(Deserialize)]
struct JsonRelation {
    #[serde(rename = "type")]
    kind: String,
    source: String,
    target: String,
}

#[derive(Deserialize)]
struct JsonMarking {
    #[serde(default)]
    executed: BTreeSet<String>,
    #[serde(default)]
    pending: BTreeSet<String>,
    #[serde(default)]
    included: BTreeSet<String>,
}

pub fn parse_dcr_json(text: &str) -> Result<DcrModel, DcrError> {
    let g: JsonGraph = serde_json::from_str(text).map_err(|e| DcrError::Json(e.to_string()))?;
    let mut m = DcrModel::new(ModelId(g.model_id), &g.id, &[]);
    m.version = g.version;
    for e in g.events {
        m.labels
            .insert(e.id.clone(), e.label.unwrap_or_else(|| e.id.clone()));
        m.events.push(e.id);
    }
    for r in g.relations {
        let kind = RelationKind::parse(&r.kind).ok_or(DcrError::UnknownRelation(r.kind))?;
        m.relations_mut(kind).insert((r.source, r.target));
    }
    let mk = g.marking.ok_or(DcrError::MissingMarking)?;
    m.marking = Marking {
        executed: mk.executed,
        pending: mk.pending,
        included: mk.included,
    };
    m.validate()?;
    Ok(m)
}
