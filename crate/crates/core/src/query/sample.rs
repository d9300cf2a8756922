use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{enumerate_answers_in, Pattern, QueryDag, QueryExpr, QuerySample, QueryType};
use crate::embedding::pick;
use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphView, KnowledgeGraph, SplitMask};

/// Attempts allowed per sample before a shape is declared unsatisfiable.
pub const MAX_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    /// Splits whose edges define the answer set.
    pub mask: SplitMask,
    /// When set, every sample must have at least one answer that is not
    /// reachable under this mask; those reachable answers are recorded as
    /// the sample's easy answers.
    pub hard_against: Option<SplitMask>,
    /// Rejects queries with more answers than this.
    pub max_answers: Option<usize>,
}

impl SampleOptions {
    pub fn train() -> Self {
        SampleOptions {
            mask: SplitMask::TRAIN,
            hard_against: None,
            max_answers: None,
        }
    }

    /// Answers over every split, each query needing an answer outside `easy`.
    pub fn held_out(mask: SplitMask, easy: SplitMask) -> Self {
        SampleOptions {
            mask,
            hard_against: Some(easy),
            max_answers: None,
        }
    }
}

/// Draws `count` queries of one shape.
///
/// Each query is grown backwards from a target entity chosen uniformly among
/// entities with an incoming edge: every translation picks one of the
/// incoming `(head, relation)` pairs of its current entity uniformly, and
/// every set-operator branch is grown towards the same entity. Queries with
/// repeated sibling branches, or that fail the options, are rejected and
/// redrawn. Deterministic for a given seed.
pub fn sample_queries(
    kg: &KnowledgeGraph,
    query_type: QueryType,
    count: usize,
    seed: u64,
    options: &SampleOptions,
) -> Result<Vec<QuerySample>> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let view = kg.view(options.mask);
    let easy_view = options.hard_against.map(|m| kg.view(m));
    let targets = view.entities_with_sources();
    let pattern = query_type.pattern();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(query_type as u64 + 1)));

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = None;
        for _ in 0..MAX_RETRIES {
            let Some(target) = pick(&targets, &mut rng) else {
                break;
            };
            let Some(expr) = grow(&pattern, target, &view, &mut rng) else {
                continue;
            };
            let dag = QueryDag::from_expr(&expr)?;
            let answers = enumerate_answers_in(&dag, &view);
            if answers.is_empty() || options.max_answers.is_some_and(|m| answers.len() > m) {
                continue;
            }
            let easy_answers = match &easy_view {
                Some(ev) => {
                    let easy = enumerate_answers_in(&dag, ev);
                    let easy: Vec<EntityId> = easy
                        .into_iter()
                        .filter(|e| answers.binary_search(e).is_ok())
                        .collect();
                    if easy.len() == answers.len() {
                        continue;
                    }
                    Some(easy)
                }
                None => None,
            };
            accepted = Some(QuerySample {
                dag,
                query_type,
                answers,
                easy_answers,
                hard_negatives: None,
            });
            break;
        }
        match accepted {
            Some(s) => out.push(s),
            None => {
                return Err(Error::Unsatisfiable {
                    shape: query_type.tag().into(),
                    retries: MAX_RETRIES,
                })
            }
        }
    }
    Ok(out)
}

fn grow(
    pattern: &Pattern,
    target: EntityId,
    view: &GraphView,
    rng: &mut ChaCha8Rng,
) -> Option<QueryExpr> {
    match pattern {
        Pattern::Anchor => Some(QueryExpr::Anchor(target)),
        Pattern::Translate(child) => {
            let (head, relation) = pick(view.sources(target), rng)?;
            Some(grow(child, head, view, rng)?.hop(relation))
        }
        Pattern::Intersect(children) | Pattern::Union(children) => {
            let branches = children
                .iter()
                .map(|c| grow(c, target, view, rng))
                .collect::<Option<Vec<_>>>()?;
            let distinct: HashSet<&QueryExpr> = branches.iter().collect();
            if distinct.len() != branches.len() {
                return None;
            }
            Some(if matches!(pattern, Pattern::Intersect(_)) {
                QueryExpr::Intersect(branches)
            } else {
                QueryExpr::Union(branches)
            })
        }
    }
}
