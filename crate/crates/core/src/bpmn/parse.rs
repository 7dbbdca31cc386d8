use std::collections::BTreeSet;
use std::sync::Arc;

use roxmltree::{Document, Node as XmlNode};

use crate::event::ModelId;
use crate::expr::{parse_expression, Expression};

use super::model::{BpmnError, BpmnModel, Edge, Node, NodeKind};

fn kind_of(local: &str) -> Option<NodeKind> {
    Some(match local {
        "startEvent" => NodeKind::StartEvent,
        "endEvent" => NodeKind::EndEvent,
        "task" | "userTask" | "serviceTask" | "manualTask" | "scriptTask" | "sendTask"
        | "receiveTask" | "businessRuleTask" => NodeKind::Task,
        "intermediateCatchEvent" | "intermediateThrowEvent" => NodeKind::IntermediateEvent,
        "exclusiveGateway" => NodeKind::XorGateway,
        "parallelGateway" => NodeKind::AndGateway,
        "inclusiveGateway" => NodeKind::OrGateway,
        "adHocSubProcess" => NodeKind::AdHocSubProcess,
        _ => return None,
    })
}

const IGNORED: &[&str] = &[
    "documentation",
    "extensionElements",
    "incoming",
    "outgoing",
    "dataObject",
    "dataObjectReference",
    "dataStoreReference",
    "property",
    "laneSet",
    "textAnnotation",
    "association",
    "ioSpecification",
];

fn attr<'a>(n: &XmlNode<'a, '_>, name: &str) -> Option<&'a str> {
    n.attributes().find(|a| a.name() == name).map(|a| a.value())
}

/// Reads the supported BPMN 2.0 subset. `modelId` and `version` attributes
/// on the process element are honoured when present.
pub fn parse_bpmn(src: &[u8]) -> Result<BpmnModel, BpmnError> {
    let text = std::str::from_utf8(src).map_err(|e| BpmnError::Xml(e.to_string()))?;
    let doc = Document::parse(text).map_err(|e| BpmnError::Xml(e.to_string()))?;
    let process = doc
        .descendants()
        .find(|n| n.is_element() && n.tag_name().name() == "process")
        .ok_or(BpmnError::NoProcess)?;

    let mut m = BpmnModel {
        model_id: ModelId(
            attr(&process, "modelId")
                .and_then(|v| v.parse().ok())
                .unwrap_or(0),
        ),
        version: attr(&process, "version")
            .and_then(|v| v.parse().ok())
            .unwrap_or(1),
        process_id: attr(&process, "id").unwrap_or("process").to_string(),
        nodes: Vec::new(),
        edges: Vec::new(),
        data_names: BTreeSet::new(),
    };

    for child in process.children().filter(XmlNode::is_element) {
        let local = child.tag_name().name();
        let id = || {
            attr(&child, "id")
                .map(str::to_string)
                .ok_or_else(|| BpmnError::Structure(format!("{local} without id")))
        };
        if let Some(kind) = kind_of(local) {
            m.nodes.push(Node {
                id: id()?,
                kind,
                name: attr(&child, "name").map(str::to_string),
            });
        } else if local == "sequenceFlow" {
            let flow = id()?;
            let get = |a: &str| {
                attr(&child, a)
                    .map(str::to_string)
                    .ok_or_else(|| BpmnError::Structure(format!("{flow} lacks {a}")))
            };
            let condition = match child
                .children()
                .find(|c| c.is_element() && c.tag_name().name() == "conditionExpression")
            {
                Some(c) => {
                    let body: String = c
                        .descendants()
                        .filter(|t| t.is_text())
                        .filter_map(|t| t.text())
                        .collect();
                    parse_expression(&body).map_err(|source| BpmnError::Condition {
                        flow: flow.clone(),
                        source,
                    })?
                }
                None => Expression::truth(),
            };
            m.edges.push(Edge {
                source: get("sourceRef")?,
                target: get("targetRef")?,
                id: flow,
                condition: Arc::new(condition),
            });
        } else if local == "dataObject" || local == "property" {
            if let Some(n) = attr(&child, "name") {
                m.data_names.insert(n.to_string());
            }
        } else if !IGNORED.contains(&local) {
            return Err(BpmnError::Unsupported(local.to_string()));
        }
    }
    m.validate()?;
    Ok(m)
}
