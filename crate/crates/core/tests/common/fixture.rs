//! The synthetic planted-hierarchy graph and its query workloads.

use std::collections::BTreeSet;

use gaussq_core::kg::{KnowledgeGraph, SplitMask};
use gaussq_core::query::{sample_queries, QuerySample, QueryType, SampleOptions};
use gaussq_core::synthetic::{planted_hierarchy, SyntheticConfig};
use gaussq_core::EmbeddingTable;

pub struct Fixture {
    pub kg: KnowledgeGraph,
    pub train: Vec<QuerySample>,
    pub valid: Vec<QuerySample>,
    pub test_1t: Vec<QuerySample>,
    pub test_2u: Vec<QuerySample>,
}

/// Training queries of every type over training edges (800 one-hop, 300 of
/// each other type), up to 30 validation queries per type whose answers need
/// a validation edge, and 100 test queries each of `1t` and `2u` whose
/// answers need a test edge. Shapes the graph cannot produce held out are
/// skipped.
pub fn fixture() -> Fixture {
    let kg = planted_hierarchy(&SyntheticConfig::default()).unwrap();
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let valid_opts = SampleOptions::held_out(SplitMask::TRAIN_VALID, SplitMask::TRAIN);
    for t in QueryType::ALL {
        let n = if t == QueryType::OneHop { 800 } else { 300 };
        train.extend(sample_queries(&kg, t, n, 1, &SampleOptions::train()).unwrap());
        if let Ok(v) = sample_queries(&kg, t, 30, 2, &valid_opts) {
            valid.extend(v);
        }
    }
    let test_opts = SampleOptions::held_out(SplitMask::ALL, SplitMask::TRAIN_VALID);
    let test_1t = sample_queries(&kg, QueryType::OneHop, 100, 3, &test_opts).unwrap();
    let test_2u = sample_queries(&kg, QueryType::TwoUnion, 100, 3, &test_opts).unwrap();
    Fixture {
        kg,
        train,
        valid,
        test_1t,
        test_2u,
    }
}

/// Mean factor column norm over the densities a query can move: entities
/// that appear as anchors in `samples`, and every relation.
pub fn query_side_norm(table: &EmbeddingTable, samples: &[QuerySample]) -> f64 {
    let anchors: BTreeSet<usize> = samples.iter().flat_map(|s| s.dag.anchors()).collect();
    let mut total = 0.0;
    let mut count = 0;
    for g in anchors
        .iter()
        .map(|&a| table.entity(a).unwrap())
        .chain(table.relations())
    {
        for c in g.factor().column_iter() {
            total += c.norm();
            count += 1;
        }
    }
    total / count as f64
}

/// Expected precision-mode MRR of a uniformly random ranking, averaged over
/// `samples`: a query with `a` answers among `n` entities scores
/// `(1/n) Σ_i (a/n)/i = a·H_n/n²`.
pub fn random_ranking_mrr(samples: &[QuerySample], n: usize) -> f64 {
    let harmonic: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let nf = n as f64;
    samples
        .iter()
        .map(|s| s.answers.len() as f64 * harmonic / (nf * nf))
        .sum::<f64>()
        / samples.len() as f64
}
