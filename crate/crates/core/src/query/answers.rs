use super::{QueryDag, QueryNode};
use crate::error::Result;
use crate::kg::{EntityId, GraphView, KnowledgeGraph, SplitMask};

/// Exact answer set of `dag` over the splits in `mask`, by set semantics:
/// anchors are singletons, translation takes the union of neighbors,
/// intersection and union are the set operations.
pub fn enumerate_answers(
    dag: &QueryDag,
    kg: &KnowledgeGraph,
    mask: SplitMask,
) -> Result<Vec<EntityId>> {
    for e in dag.anchors() {
        kg.check_entity(e)?;
    }
    for r in dag.relations() {
        kg.check_relation(r)?;
    }
    Ok(enumerate_answers_in(dag, &kg.view(mask)))
}

/// As [`enumerate_answers`], against a prepared view. Ids are assumed valid.
pub fn enumerate_answers_in(dag: &QueryDag, view: &GraphView) -> Vec<EntityId> {
    let mut sets: Vec<Vec<EntityId>> = Vec::with_capacity(dag.nodes().len());
    for node in dag.nodes() {
        let set = match node {
            QueryNode::Anchor(e) => vec![*e],
            QueryNode::Translate { child, relation } => {
                let mut out = Vec::new();
                for &e in &sets[*child] {
                    out.extend_from_slice(view.tails(e, *relation));
                }
                out.sort_unstable();
                out.dedup();
                out
            }
            QueryNode::Intersect(cs) => {
                let mut acc = sets[cs[0]].clone();
                for &c in &cs[1..] {
                    acc = intersect_sorted(&acc, &sets[c]);
                }
                acc
            }
            QueryNode::Union(cs) => {
                let mut out: Vec<EntityId> = cs.iter().flat_map(|&c| sets[c].iter().copied()).collect();
                out.sort_unstable();
                out.dedup();
                out
            }
        };
        sets.push(set);
    }
    sets.pop().unwrap_or_default()
}

fn intersect_sorted(a: &[EntityId], b: &[EntityId]) -> Vec<EntityId> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}
