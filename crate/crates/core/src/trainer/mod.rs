//! Negative-sampling training of an [`EmbeddingTable`] on query workloads.

mod checkpoint;
mod optim;
mod tape;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, MetricMode};
use crate::gaussian::{AggregatorMode, DEFAULT_JITTER};
use crate::kg::EntityId;
use crate::query::{QuerySample, QueryType};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{query_loss, Candidates, Gradients, LossKind, ParamGrad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Margin loss against sampled negatives.
    #[default]
    NegativeSampling,
    /// Pulls every answer towards the query with no negatives.
    PositiveOnly,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative-sampling" => Ok(Objective::NegativeSampling),
            "positive-only" => Ok(Objective::PositiveOnly),
            other => Err(Error::InvalidParameter(format!(
                "unknown objective `{other}` (expected negative-sampling or positive-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub rank: usize,
    pub jitter: f64,
    pub learning_rate: f64,
    pub margin: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub query_types: Vec<QueryType>,
    pub aggregator: AggregatorMode,
    pub optimizer: OptimizerKind,
    pub objective: Objective,
    /// Epochs without a validation HITS@3 improvement before stopping;
    /// 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    /// Worker threads for gradient computation; 0 or 1 runs sequentially.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 16,
            rank: 4,
            jitter: DEFAULT_JITTER,
            learning_rate: 0.01,
            margin: 24.0,
            negatives: 64,
            batch_size: 64,
            epochs: 100,
            query_types: QueryType::ALL.to_vec(),
            aggregator: AggregatorMode::Attention,
            optimizer: OptimizerKind::Adam,
            objective: Objective::NegativeSampling,
            patience: 5,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dim == 0 || self.rank == 0 || self.rank > self.dim {
            return bad(format!(
                "need 1 <= rank <= dim, got dim={} rank={}",
                self.dim, self.rank
            ));
        }
        if !self.jitter.is_finite() || self.jitter <= 0.0 {
            return bad(format!("jitter must be positive, got {}", self.jitter));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if self.negatives == 0 && self.objective == Objective::NegativeSampling {
            return bad("need at least one negative per query".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.query_types.is_empty() {
            return bad("no query types selected".into());
        }
        Ok(())
    }

    fn loss_kind(&self) -> LossKind {
        match self.objective {
            Objective::NegativeSampling => LossKind::Margin {
                margin: self.margin,
            },
            Objective::PositiveOnly => LossKind::PositiveOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_hits3: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation HITS@3, or the last
    /// epoch when there is no validation set.
    pub table: EmbeddingTable,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Training queries consumed, per type.
    pub type_histogram: BTreeMap<QueryType, usize>,
}

/// Draws the candidates for one query: one uniform positive and `k` uniform
/// non-answers (with replacement) under negative sampling, every answer when
/// training on positives only.
pub fn draw_candidates<R: Rng + ?Sized>(
    sample: &QuerySample,
    num_entities: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Candidates> {
    match config.objective {
        Objective::PositiveOnly => Ok(Candidates {
            positives: sample.answers.clone(),
            negatives: Vec::new(),
        }),
        Objective::NegativeSampling => {
            if sample.answers.len() >= num_entities {
                return Err(Error::InvalidParameter(
                    "every entity answers the query; no negatives to draw".into(),
                ));
            }
            let positive = sample.answers[rng.random_range(0..sample.answers.len())];
            let mut negatives = Vec::with_capacity(config.negatives);
            while negatives.len() < config.negatives {
                let e: EntityId = rng.random_range(0..num_entities);
                if sample.answers.binary_search(&e).is_err() {
                    negatives.push(e);
                }
            }
            Ok(Candidates {
                positives: vec![positive],
                negatives,
            })
        }
    }
}

/// Mean loss and summed-then-averaged gradient over a batch. `ids` name the
/// samples in error messages. The reduction order is fixed, so the result
/// does not depend on the thread count.
pub fn batch_loss(
    batch: &[(&QuerySample, Candidates)],
    ids: &[usize],
    table: &EmbeddingTable,
    kind: LossKind,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, Gradients)> {
    let one = |(i, (s, c)): (usize, &(&QuerySample, Candidates))| {
        query_loss(&s.dag, table, c, kind)
            .map_err(|e| e.with_context(format!("training sample {}", ids[i])))
    };
    let parts: Vec<(f64, Gradients)> = match pool {
        Some(pool) => pool.install(|| batch.par_iter().enumerate().map(one).collect::<Result<_>>())?,
        None => batch.iter().enumerate().map(one).collect::<Result<_>>()?,
    };
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for (v, g) in &parts {
        total += v;
        grads.merge(g);
    }
    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Random initial table for a graph of the given size.
pub fn init_table(config: &TrainConfig, num_entities: usize, num_relations: usize) -> Result<EmbeddingTable> {
    config.validate()?;
    EmbeddingTable::random(
        num_entities,
        num_relations,
        config.dim,
        config.rank,
        config.jitter,
        config.aggregator,
        config.seed,
    )
}

/// Runs training from `table`. Each epoch visits every training query once,
/// interleaving query types round-robin after a per-type shuffle.
/// `on_epoch` sees each epoch's metrics as they are produced.
pub fn train(
    config: &TrainConfig,
    mut table: EmbeddingTable,
    train_set: &[QuerySample],
    valid_set: &[QuerySample],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if table.dim() != config.dim || table.rank() != config.rank {
        return Err(Error::InvalidParameter(format!(
            "table has dim={} rank={} but the configuration asks for dim={} rank={}",
            table.dim(),
            table.rank(),
            config.dim,
            config.rank
        )));
    }
    let mut queues: BTreeMap<QueryType, Vec<usize>> =
        config.query_types.iter().map(|&t| (t, Vec::new())).collect();
    for (i, s) in train_set.iter().enumerate() {
        if let Some(q) = queues.get_mut(&s.query_type) {
            q.push(i);
        }
    }
    if let Some((t, _)) = queues.iter().find(|(_, q)| q.is_empty()) {
        return Err(Error::InvalidParameter(format!(
            "no training queries of configured type `{t}`"
        )));
    }
    let valid: Vec<QuerySample> = valid_set
        .iter()
        .filter(|s| queues.contains_key(&s.query_type))
        .cloned()
        .collect();

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?,
        )
    } else {
        None
    };
    let eval_config = EvalConfig {
        mode: MetricMode::Precision,
        threads: config.threads,
    };
    let kind = config.loss_kind();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut histogram: BTreeMap<QueryType, usize> = BTreeMap::new();
    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, EmbeddingTable)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        for q in queues.values_mut() {
            q.shuffle(&mut rng);
        }
        let order = round_robin(&queues);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    Ok((s, draw_candidates(s, table.num_entities(), config, &mut rng)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_loss(&batch, chunk, &table, kind, pool.as_ref())?;
            optimizer.apply(&mut table, &grads);
            if !table.is_finite() {
                return Err(Error::Numeric(format!(
                    "parameters became non-finite in epoch {epoch} (batch starting at sample {})",
                    chunk[0]
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            for &i in chunk {
                *histogram.entry(train_set[i].query_type).or_default() += 1;
            }
        }
        let valid_hits3 = if valid.is_empty() {
            None
        } else {
            Some(evaluate(&table, &valid, &eval_config)?.average.hits3)
        };
        let m = EpochMetrics {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            valid_hits3,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} valid hits@3 {}",
            m.mean_loss,
            valid_hits3.map_or("-".to_string(), |h| format!("{h:.4}"))
        );
        on_epoch(&m);
        metrics.push(m);

        if let Some(h) = valid_hits3 {
            if best.as_ref().is_none_or(|(b, _, _)| h > *b) {
                best = Some((h, epoch, table.clone()));
                stale = 0;
            } else {
                stale += 1;
                if config.patience > 0 && stale >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let last = metrics.len();
    let (table, best_epoch) = match best {
        Some((_, e, t)) => (t, e),
        None => (table, last),
    };
    Ok(TrainOutcome {
        table,
        metrics,
        best_epoch,
        stopped_early,
        type_histogram: histogram,
    })
}

fn round_robin(queues: &BTreeMap<QueryType, Vec<usize>>) -> Vec<usize> {
    let longest = queues.values().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(queues.values().map(Vec::len).sum());
    for i in 0..longest {
        for q in queues.values() {
            if let Some(&s) = q.get(i) {
                out.push(s);
            }
        }
    }
    out
}
