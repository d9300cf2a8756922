//! Ranking of all entities against a compiled query, and the HITS@K / MRR
//! metrics.
//!
//! Two metric conventions are available. [`MetricMode::Precision`] is the
//! precision-at-K form `HITS@K = (1/K) Σ_{k≤K} 1[e_k ∈ Ê]` and
//! `MRR = (1/n) Σ_{i≤n} 1[e_i ∈ Ê] / i` over the unfiltered ranking, with `n`
//! the number of entities. [`MetricMode::Filtered`] is the usual link
//! prediction protocol: each hard answer is ranked against non-answers only,
//! and HITS@K / MRR are averaged over those per-answer ranks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::gaussian::mixture_distance;
use crate::kg::EntityId;
use crate::query::{compile, QueryDag, QuerySample, QueryType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    #[default]
    Precision,
    Filtered,
}

/// Distance of every entity mean to the compiled query.
pub fn entity_distances(dag: &QueryDag, table: &EmbeddingTable) -> Result<Vec<f64>> {
    let mixture = compile(dag, table)?;
    table
        .entities()
        .iter()
        .map(|e| mixture_distance(e.mean(), &mixture))
        .collect()
}

/// Entity ids in ascending distance order, ties by lower id. Ids listed in
/// `filter` (sorted) are left out.
pub fn rank_by_distance(distances: &[f64], filter: &[EntityId]) -> Vec<EntityId> {
    let mut ids: Vec<EntityId> = (0..distances.len())
        .filter(|e| filter.binary_search(e).is_err())
        .collect();
    ids.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    ids
}

pub fn rank_candidates(
    dag: &QueryDag,
    table: &EmbeddingTable,
    filter: &[EntityId],
) -> Result<Vec<EntityId>> {
    Ok(rank_by_distance(&entity_distances(dag, table)?, filter))
}

/// `(1/K) Σ_{k=1}^{K} 1[ranked[k] ∈ answers]`; `answers` must be sorted.
pub fn hits_at_k(ranked: &[EntityId], answers: &[EntityId], k: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::InvalidParameter("cannot score an empty ranking".into()));
    }
    if k == 0 || k > ranked.len() {
        return Err(Error::InvalidParameter(format!(
            "K must be in 1..={}, got {k}",
            ranked.len()
        )));
    }
    let hits = ranked[..k]
        .iter()
        .filter(|e| answers.binary_search(e).is_ok())
        .count();
    Ok(hits as f64 / k as f64)
}

/// `(1/n) Σ_{i=1}^{n} 1[ranked[i] ∈ answers] / i` over the first `n` entries
/// (clamped to the ranking length).
pub fn mrr(ranked: &[EntityId], answers: &[EntityId], n: usize) -> f64 {
    let n = n.min(ranked.len());
    if n == 0 {
        return 0.0;
    }
    let total: f64 = ranked[..n]
        .iter()
        .enumerate()
        .filter(|(_, e)| answers.binary_search(e).is_ok())
        .map(|(i, _)| 1.0 / (i + 1) as f64)
        .sum();
    total / n as f64
}

/// 1-based rank of each target among entities that are not answers.
pub fn filtered_ranks(distances: &[f64], answers: &[EntityId], targets: &[EntityId]) -> Vec<usize> {
    targets
        .iter()
        .map(|&t| {
            let dt = distances[t];
            1 + distances
                .iter()
                .enumerate()
                .filter(|&(e, &d)| {
                    answers.binary_search(&e).is_err() && (d < dt || (d == dt && e < t))
                })
                .count()
        })
        .collect()
}

pub const REPORTED_KS: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mrr: f64,
}

impl Metrics {
    fn add(&mut self, o: &Metrics) {
        self.hits1 += o.hits1;
        self.hits3 += o.hits3;
        self.hits10 += o.hits10;
        self.mrr += o.mrr;
    }

    fn scaled(&self, s: f64) -> Metrics {
        Metrics {
            hits1: self.hits1 * s,
            hits3: self.hits3 * s,
            hits10: self.hits10 * s,
            mrr: self.mrr * s,
        }
    }
}

/// Metrics of one query given the distance of every entity.
pub fn query_metrics(distances: &[f64], sample: &QuerySample, mode: MetricMode) -> Result<Metrics> {
    match mode {
        MetricMode::Precision => {
            let ranked = rank_by_distance(distances, &[]);
            let hits = |k: usize| hits_at_k(&ranked, &sample.answers, k.min(ranked.len()));
            Ok(Metrics {
                hits1: hits(1)?,
                hits3: hits(3)?,
                hits10: hits(10)?,
                mrr: mrr(&ranked, &sample.answers, ranked.len()),
            })
        }
        MetricMode::Filtered => {
            let targets = sample.hard_answers();
            if targets.is_empty() {
                return Ok(Metrics::default());
            }
            let ranks = filtered_ranks(distances, &sample.answers, &targets);
            let n = ranks.len() as f64;
            let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
            Ok(Metrics {
                hits1: hits(1),
                hits3: hits(3),
                hits10: hits(10),
                mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MetricMode,
    pub per_type: BTreeMap<QueryType, TypeMetrics>,
    /// Unweighted mean over the query types present.
    pub average: Metrics,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalConfig {
    pub mode: MetricMode,
    /// Worker threads; 0 or 1 evaluates sequentially.
    pub threads: usize,
}

/// Aggregates per-query metrics using any distance oracle.
pub fn evaluate_with<F>(samples: &[QuerySample], config: &EvalConfig, distances: F) -> Result<EvalReport>
where
    F: Fn(&QuerySample) -> Result<Vec<f64>> + Sync,
{
    let one = |s: &QuerySample| -> Result<Metrics> { query_metrics(&distances(s)?, s, config.mode) };
    let per_query: Vec<Metrics> = if config.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        pool.install(|| samples.par_iter().map(one).collect::<Result<Vec<_>>>())?
    } else {
        samples.iter().map(one).collect::<Result<Vec<_>>>()?
    };
    let mut per_type: BTreeMap<QueryType, TypeMetrics> = BTreeMap::new();
    for (s, m) in samples.iter().zip(&per_query) {
        let entry = per_type.entry(s.query_type).or_insert(TypeMetrics {
            metrics: Metrics::default(),
            count: 0,
        });
        entry.metrics.add(m);
        entry.count += 1;
    }
    let mut average = Metrics::default();
    for t in per_type.values_mut() {
        t.metrics = t.metrics.scaled(1.0 / t.count as f64);
        average.add(&t.metrics);
    }
    if !per_type.is_empty() {
        average = average.scaled(1.0 / per_type.len() as f64);
    }
    Ok(EvalReport {
        mode: config.mode,
        per_type,
        average,
    })
}

pub fn evaluate(table: &EmbeddingTable, samples: &[QuerySample], config: &EvalConfig) -> Result<EvalReport> {
    evaluate_with(samples, config, |s| entity_distances(&s.dag, table))
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("mode".into(), serde_json::to_value(self.mode).unwrap_or_default());
        map.insert(
            "average_note".into(),
            "avg is the unweighted mean over query types".into(),
        );
        for (t, m) in &self.per_type {
            map.insert(t.tag().into(), serde_json::to_value(m).unwrap_or_default());
        }
        map.insert("avg".into(), serde_json::to_value(self.average).unwrap_or_default());
        serde_json::Value::Object(map)
    }

    /// Aligned table, one column per query type plus the average.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# metrics: {} (avg = unweighted mean over query types)",
            match self.mode {
                MetricMode::Precision => "precision",
                MetricMode::Filtered => "filtered",
            }
        );
        let _ = write!(out, "{:<8}", "metric");
        for t in self.per_type.keys() {
            let _ = write!(out, "{:>8}", t.tag());
        }
        let _ = writeln!(out, "{:>8}", "avg");
        let rows: [(&str, fn(&Metrics) -> f64); 4] = [
            ("hits@1", |m| m.hits1),
            ("hits@3", |m| m.hits3),
            ("hits@10", |m| m.hits10),
            ("mrr", |m| m.mrr),
        ];
        for (name, get) in rows {
            let _ = write!(out, "{name:<8}");
            for m in self.per_type.values() {
                let _ = write!(out, "{:>8.4}", get(&m.metrics));
            }
            let _ = writeln!(out, "{:>8.4}", get(&self.average));
        }
        let _ = write!(out, "{:<8}", "queries");
        for m in self.per_type.values() {
            let _ = write!(out, "{:>8}", m.count);
        }
        let total: usize = self.per_type.values().map(|m| m.count).sum();
        let _ = writeln!(out, "{total:>8}");
        out
    }
}
