use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bpmn::{CompiledModel, ModelDiff};
use crate::cql::RuleIR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MigrationPolicy {
    /// Running cases stay on the old rules, new cases use the new ones.
    #[default]
    #[serde(alias = "cutover-new-cases-only")]
    Cutover,
    /// Every case switches to the new rules at once.
    Immediate,
}

impl FromStr for MigrationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cutover" | "cutover-new-cases-only" => Ok(MigrationPolicy::Cutover),
            "immediate" => Ok(MigrationPolicy::Immediate),
            other => Err(format!("unknown migration policy {other}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MigrationPlan {
    pub diff: ModelDiff,
    /// Nodes, `*` included, whose rules carry over unchanged.
    pub shared: BTreeSet<String>,
    /// Rules of the old version that the new version does not use.
    pub retire: Vec<String>,
    /// Rules only the new version uses.
    pub deploy: Vec<RuleIR>,
    /// Rules of the new version per node.
    pub rules: BTreeMap<String, Vec<RuleIR>>,
}

pub fn rules_by_node(c: &CompiledModel) -> BTreeMap<String, Vec<RuleIR>> {
    c.by_node
        .iter()
        .map(|(n, ids)| {
            let rules = ids
                .iter()
                .filter_map(|id| c.rules.iter().find(|r| &r.id == id).cloned())
                .collect();
            (n.clone(), rules)
        })
        .collect()
}

fn same(a: &[RuleIR], b: &[RuleIR]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_behavior(y))
}

/// Splits the rules of two versions into shared, retired and new ones. A
/// node shares its rules only when the diff reports it unchanged and its
/// compiled rules are identical.
pub fn plan_migration(
    old: &BTreeMap<String, Vec<RuleIR>>,
    new: &CompiledModel,
    diff: ModelDiff,
) -> MigrationPlan {
    let fresh = rules_by_node(new);
    let mut plan = MigrationPlan {
        diff,
        shared: BTreeSet::new(),
        retire: Vec::new(),
        deploy: Vec::new(),
        rules: BTreeMap::new(),
    };
    for (node, rules) in &fresh {
        let unchanged = node == "*" || plan.diff.unchanged.contains(node);
        match old.get(node) {
            Some(prev) if unchanged && same(prev, rules) => {
                plan.shared.insert(node.clone());
                plan.rules.insert(node.clone(), prev.clone());
            }
            _ => {
                plan.deploy.extend(rules.iter().cloned());
                plan.rules.insert(node.clone(), rules.clone());
            }
        }
    }
    for (node, rules) in old {
        if !plan.shared.contains(node) {
            plan.retire.extend(rules.iter().map(|r| r.id.clone()));
        }
    }
    plan
}
