//! First-order existential queries as trees of anchor / translate /
//! intersect / union nodes.

mod answers;
mod compile;
mod parse;
mod sample;
mod workload;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};

pub use answers::{enumerate_answers, enumerate_answers_in};
pub use compile::{compile, MAX_COMPONENTS};
pub use parse::{parse_query, serialize_query};
pub use sample::{sample_queries, SampleOptions, MAX_RETRIES};
pub use workload::{read_workload, write_workload, QuerySample, WorkloadRecord};

/// The nine query shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "1t")]
    OneHop,
    #[serde(rename = "2t")]
    TwoHop,
    #[serde(rename = "3t")]
    ThreeHop,
    #[serde(rename = "2i")]
    TwoInter,
    #[serde(rename = "3i")]
    ThreeInter,
    #[serde(rename = "2u")]
    TwoUnion,
    /// Translation applied to a two-way intersection.
    #[serde(rename = "it")]
    InterTranslate,
    /// Intersection of a two-hop branch and a one-hop branch.
    #[serde(rename = "ti")]
    TranslateInter,
    /// Translation applied to a two-way union.
    #[serde(rename = "ut")]
    UnionTranslate,
}

impl QueryType {
    pub const ALL: [QueryType; 9] = [
        QueryType::OneHop,
        QueryType::TwoHop,
        QueryType::ThreeHop,
        QueryType::TwoInter,
        QueryType::ThreeInter,
        QueryType::TwoUnion,
        QueryType::InterTranslate,
        QueryType::TranslateInter,
        QueryType::UnionTranslate,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            QueryType::OneHop => "1t",
            QueryType::TwoHop => "2t",
            QueryType::ThreeHop => "3t",
            QueryType::TwoInter => "2i",
            QueryType::ThreeInter => "3i",
            QueryType::TwoUnion => "2u",
            QueryType::InterTranslate => "it",
            QueryType::TranslateInter => "ti",
            QueryType::UnionTranslate => "ut",
        }
    }

    /// Query types that use only a single operator kind.
    pub fn is_single_operator(self) -> bool {
        !matches!(
            self,
            QueryType::InterTranslate | QueryType::TranslateInter | QueryType::UnionTranslate
        )
    }

    pub fn is_translation_only(self) -> bool {
        matches!(
            self,
            QueryType::OneHop | QueryType::TwoHop | QueryType::ThreeHop
        )
    }

    /// Skeleton of this shape with anchors and relations left open.
    pub(crate) fn pattern(self) -> Pattern {
        use Pattern::*;
        let hop = |p: Pattern| Translate(Box::new(p));
        match self {
            QueryType::OneHop => hop(Anchor),
            QueryType::TwoHop => hop(hop(Anchor)),
            QueryType::ThreeHop => hop(hop(hop(Anchor))),
            QueryType::TwoInter => Intersect(vec![hop(Anchor), hop(Anchor)]),
            QueryType::ThreeInter => Intersect(vec![hop(Anchor), hop(Anchor), hop(Anchor)]),
            QueryType::TwoUnion => Union(vec![hop(Anchor), hop(Anchor)]),
            QueryType::InterTranslate => hop(Intersect(vec![hop(Anchor), hop(Anchor)])),
            QueryType::TranslateInter => Intersect(vec![hop(hop(Anchor)), hop(Anchor)]),
            QueryType::UnionTranslate => hop(Union(vec![hop(Anchor), hop(Anchor)])),
        }
    }

    /// Parses a comma-separated list such as `1t,2u`.
    pub fn parse_list(s: &str) -> Result<Vec<QueryType>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let t: QueryType = part.parse()?;
            if !out.contains(&t) {
                out.push(t);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidParameter("empty query type list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = match s {
            "1t" => QueryType::OneHop,
            "2t" => QueryType::TwoHop,
            "3t" => QueryType::ThreeHop,
            "2i" | "2∩" => QueryType::TwoInter,
            "3i" | "3∩" => QueryType::ThreeInter,
            "2u" | "2∪" => QueryType::TwoUnion,
            "it" | "∩t" => QueryType::InterTranslate,
            "ti" | "t∩" => QueryType::TranslateInter,
            "ut" | "∪t" => QueryType::UnionTranslate,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown query type `{other}`"
                )))
            }
        };
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Pattern {
    Anchor,
    Translate(Box<Pattern>),
    Intersect(Vec<Pattern>),
    Union(Vec<Pattern>),
}

/// Recursive form of a query, convenient for construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QueryExpr {
    Anchor(EntityId),
    Translate(Box<QueryExpr>, RelationId),
    Intersect(Vec<QueryExpr>),
    Union(Vec<QueryExpr>),
}

impl QueryExpr {
    pub fn hop(self, relation: RelationId) -> QueryExpr {
        QueryExpr::Translate(Box::new(self), relation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QueryNode {
    Anchor(EntityId),
    Translate { child: usize, relation: RelationId },
    Intersect(Vec<usize>),
    Union(Vec<usize>),
}

/// A query tree stored as an arena. Children always precede their parent, so
/// evaluating nodes in index order is a valid bottom-up traversal; the root is
/// the last node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryDag {
    nodes: Vec<QueryNode>,
}

impl QueryDag {
    /// Validates a node arena: every node but the last has exactly one parent,
    /// children precede parents, and set operators have at least two operands.
    pub fn new(nodes: Vec<QueryNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("query has no nodes".into()));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            let mut visit = |c: usize| -> Result<()> {
                if c >= i {
                    return Err(Error::InvalidParameter(format!(
                        "node {i} refers to node {c}, which does not precede it"
                    )));
                }
                parents[c] += 1;
                Ok(())
            };
            match node {
                QueryNode::Anchor(_) => {}
                QueryNode::Translate { child, .. } => visit(*child)?,
                QueryNode::Intersect(cs) | QueryNode::Union(cs) => {
                    if cs.len() < 2 {
                        return Err(Error::InvalidParameter(
                            "set operators take at least two operands".into(),
                        ));
                    }
                    for &c in cs {
                        visit(c)?;
                    }
                }
            }
        }
        let root = nodes.len() - 1;
        for (i, &p) in parents.iter().enumerate() {
            let expected = usize::from(i != root);
            if p != expected {
                return Err(Error::InvalidParameter(format!(
                    "node {i} has {p} parents; queries must be trees"
                )));
            }
        }
        Ok(QueryDag { nodes })
    }

    pub fn from_expr(expr: &QueryExpr) -> Result<Self> {
        fn push(expr: &QueryExpr, nodes: &mut Vec<QueryNode>) -> Result<usize> {
            let node = match expr {
                QueryExpr::Anchor(e) => QueryNode::Anchor(*e),
                QueryExpr::Translate(child, r) => QueryNode::Translate {
                    child: push(child, nodes)?,
                    relation: *r,
                },
                QueryExpr::Intersect(cs) | QueryExpr::Union(cs) => {
                    let ids = cs
                        .iter()
                        .map(|c| push(c, nodes))
                        .collect::<Result<Vec<_>>>()?;
                    if matches!(expr, QueryExpr::Intersect(_)) {
                        QueryNode::Intersect(ids)
                    } else {
                        QueryNode::Union(ids)
                    }
                }
            };
            nodes.push(node);
            Ok(nodes.len() - 1)
        }
        let mut nodes = Vec::new();
        push(expr, &mut nodes)?;
        QueryDag::new(nodes)
    }

    pub fn to_expr(&self) -> QueryExpr {
        self.expr_at(self.root())
    }

    fn expr_at(&self, i: usize) -> QueryExpr {
        match &self.nodes[i] {
            QueryNode::Anchor(e) => QueryExpr::Anchor(*e),
            QueryNode::Translate { child, relation } => {
                QueryExpr::Translate(Box::new(self.expr_at(*child)), *relation)
            }
            QueryNode::Intersect(cs) => {
                QueryExpr::Intersect(cs.iter().map(|&c| self.expr_at(c)).collect())
            }
            QueryNode::Union(cs) => {
                QueryExpr::Union(cs.iter().map(|&c| self.expr_at(c)).collect())
            }
        }
    }

    pub fn nodes(&self) -> &[QueryNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn anchors(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            QueryNode::Anchor(e) => Some(*e),
            _ => None,
        })
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            QueryNode::Translate { relation, .. } => Some(*relation),
            _ => None,
        })
    }

    /// Classifies the tree into one of the nine shapes, if it matches one.
    pub fn shape(&self) -> Option<QueryType> {
        let expr = self.to_expr();
        QueryType::ALL
            .into_iter()
            .find(|t| matches_pattern(&expr, &t.pattern()))
            .or_else(|| {
                // the two-hop branch of `ti` may come second
                if let QueryExpr::Intersect(cs) = &expr {
                    if cs.len() == 2 {
                        let swapped = QueryExpr::Intersect(vec![cs[1].clone(), cs[0].clone()]);
                        if matches_pattern(&swapped, &QueryType::TranslateInter.pattern()) {
                            return Some(QueryType::TranslateInter);
                        }
                    }
                }
                None
            })
    }

    /// Number of mixture components `compile` produces without the cap.
    pub fn component_count(&self) -> usize {
        let mut counts = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            counts[i] = match n {
                QueryNode::Anchor(_) => 1,
                QueryNode::Translate { child, .. } => counts[*child],
                QueryNode::Intersect(cs) => cs.iter().map(|&c| counts[c]).product(),
                QueryNode::Union(cs) => cs.iter().map(|&c| counts[c]).sum(),
            };
        }
        counts[self.root()]
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            depth[i] = match n {
                QueryNode::Anchor(_) => 0,
                QueryNode::Translate { child, .. } => depth[*child] + 1,
                QueryNode::Intersect(cs) | QueryNode::Union(cs) => {
                    cs.iter().map(|&c| depth[c]).max().unwrap_or(0) + 1
                }
            };
        }
        depth[self.root()]
    }
}

fn matches_pattern(expr: &QueryExpr, pattern: &Pattern) -> bool {
    match (expr, pattern) {
        (QueryExpr::Anchor(_), Pattern::Anchor) => true,
        (QueryExpr::Translate(c, _), Pattern::Translate(p)) => matches_pattern(c, p),
        (QueryExpr::Intersect(cs), Pattern::Intersect(ps))
        | (QueryExpr::Union(cs), Pattern::Union(ps)) => {
            cs.len() == ps.len() && cs.iter().zip(ps).all(|(c, p)| matches_pattern(c, p))
        }
        _ => false,
    }
}
