//! Shared generators and independent oracles for the integration suites.
#![allow(dead_code)]

pub mod checks;
pub mod fixture;

use std::collections::BTreeSet;

use gaussq_core::gaussian::{AggregatorMode, AggregatorParams, GaussianDensity};
use gaussq_core::kg::{KnowledgeGraph, Split, Triple, Vocab};
use gaussq_core::query::QueryExpr;
use gaussq_core::EmbeddingTable;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const JITTER: f64 = 1e-3;

pub fn density<R: Rng>(rng: &mut R, d: usize, r: usize, jitter: f64) -> GaussianDensity {
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let factor = DMatrix::from_fn(d, r, |_, _| rng.random_range(-1.0..1.0));
    GaussianDensity::new(mean, factor, jitter).unwrap()
}

pub fn table<R: Rng>(
    rng: &mut R,
    entities: usize,
    relations: usize,
    d: usize,
    r: usize,
    mode: AggregatorMode,
) -> EmbeddingTable {
    let es = (0..entities).map(|_| density(rng, d, r, JITTER)).collect();
    let rs = (0..relations).map(|_| density(rng, d, r, JITTER)).collect();
    let n = AggregatorParams::param_count(mode, d);
    let params = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
    let agg = AggregatorParams::from_parts(mode, d, params).unwrap();
    EmbeddingTable::new(es, rs, agg).unwrap()
}

pub fn vocab(prefix: &str, n: usize) -> Vocab {
    Vocab::from_names((0..n).map(|i| format!("{prefix}{i}")).collect()).unwrap()
}

/// Random graph with every triple in the training split.
pub fn random_kg<R: Rng>(rng: &mut R, entities: usize, relations: usize, triples: usize) -> (KnowledgeGraph, Vec<Triple>) {
    let mut set = BTreeSet::new();
    while set.len() < triples {
        set.insert(Triple {
            head: rng.random_range(0..entities),
            relation: rng.random_range(0..relations),
            tail: rng.random_range(0..entities),
        });
    }
    let list: Vec<Triple> = set.into_iter().collect();
    let kg = KnowledgeGraph::from_triples(
        vocab("e", entities),
        vocab("r", relations),
        [list.clone(), Vec::new(), Vec::new()],
    )
    .unwrap();
    assert_eq!(kg.triples(Split::Train).len(), list.len());
    (kg, list)
}

/// Random query tree of at most `depth` operator levels.
pub fn random_expr<R: Rng>(rng: &mut R, entities: usize, relations: usize, depth: usize) -> QueryExpr {
    let anchor = QueryExpr::Anchor(rng.random_range(0..entities));
    if depth == 0 {
        return anchor;
    }
    match rng.random_range(0..4) {
        0 => anchor.hop(rng.random_range(0..relations)),
        1 => random_expr(rng, entities, relations, depth - 1).hop(rng.random_range(0..relations)),
        k => {
            let n = rng.random_range(2..=3);
            let parts = (0..n)
                .map(|_| random_expr(rng, entities, relations, depth - 1))
                .collect();
            if k == 2 {
                QueryExpr::Intersect(parts)
            } else {
                QueryExpr::Union(parts)
            }
        }
    }
}

/// Set semantics of a query by brute force over the triple list.
pub fn brute_answers(expr: &QueryExpr, triples: &[Triple]) -> BTreeSet<usize> {
    match expr {
        QueryExpr::Anchor(e) => BTreeSet::from([*e]),
        QueryExpr::Translate(child, r) => {
            let from = brute_answers(child, triples);
            triples
                .iter()
                .filter(|t| t.relation == *r && from.contains(&t.head))
                .map(|t| t.tail)
                .collect()
        }
        QueryExpr::Intersect(cs) => {
            let mut sets = cs.iter().map(|c| brute_answers(c, triples));
            let first = sets.next().unwrap();
            sets.fold(first, |acc, s| acc.intersection(&s).copied().collect())
        }
        QueryExpr::Union(cs) => cs.iter().flat_map(|c| brute_answers(c, triples)).collect(),
    }
}

/// Mean and variance of the normalized product of two univariate normal
/// densities, by composite Simpson integration on a fine grid.
pub fn grid_product_moments(m1: f64, v1: f64, m2: f64, v2: f64) -> (f64, f64) {
    let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let s = v1.sqrt().min(v2.sqrt());
    let center = if v1 < v2 { m1 } else { m2 };
    let (lo, hi) = (center - 40.0 * s - (m1 - m2).abs(), center + 40.0 * s + (m1 - m2).abs());
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let (mut z, mut m, mut q) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = w * pdf(x, m1, v1) * pdf(x, m2, v2);
        z += f;
        m += f * x;
        q += f * x * x;
    }
    let mean = m / z;
    (mean, q / z - mean * mean)
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Flattens mean then column-major factor.
pub fn flatten(g: &GaussianDensity) -> Vec<f64> {
    g.mean().iter().chain(g.factor().iter()).copied().collect()
}

pub fn unflatten(x: &[f64], d: usize, r: usize, jitter: f64) -> GaussianDensity {
    GaussianDensity::new(
        DVector::from_column_slice(&x[..d]),
        DMatrix::from_column_slice(d, r, &x[d..d + d * r]),
        jitter,
    )
    .unwrap()
}
