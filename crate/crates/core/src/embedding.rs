use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::gaussian::{AggregatorMode, AggregatorParams, GaussianDensity};
use crate::kg::{EntityId, RelationId};

/// Every learnable parameter: one density per entity and per relation, plus
/// the mixture-weight scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rank: usize,
    jitter: f64,
    entities: Vec<GaussianDensity>,
    relations: Vec<GaussianDensity>,
    aggregator: AggregatorParams,
}

impl EmbeddingTable {
    pub fn new(
        entities: Vec<GaussianDensity>,
        relations: Vec<GaussianDensity>,
        aggregator: AggregatorParams,
    ) -> Result<Self> {
        let first = entities
            .first()
            .or(relations.first())
            .ok_or_else(|| Error::InvalidParameter("empty embedding table".into()))?;
        let (dim, rank, jitter) = (first.dim(), first.rank(), first.jitter());
        for g in entities.iter().chain(&relations) {
            if g.dim() != dim || g.rank() != rank || g.jitter() != jitter {
                return Err(Error::InvalidParameter(
                    "all densities must share dimension, rank and jitter".into(),
                ));
            }
        }
        if aggregator.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: aggregator.dim(),
            });
        }
        Ok(EmbeddingTable {
            dim,
            rank,
            jitter,
            entities,
            relations,
            aggregator,
        })
    }

    /// Means uniform in `±0.5/√d`, factor entries normal with standard
    /// deviation `1/√(d·r)`. Deterministic per seed.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        rank: usize,
        jitter: f64,
        mode: AggregatorMode,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || rank == 0 || rank > dim {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= rank <= dim, got dim={dim} rank={rank}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.5 / (dim as f64).sqrt();
        let mean_dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        let factor_dist = Normal::new(0.0, 1.0 / ((dim * rank) as f64).sqrt()).expect("valid std");
        let draw = |rng: &mut ChaCha8Rng| {
            let mean = DVector::from_fn(dim, |_, _| mean_dist.sample(rng));
            let factor = DMatrix::from_fn(dim, rank, |_, _| factor_dist.sample(rng));
            GaussianDensity::new(mean, factor, jitter)
        };
        let entities = (0..num_entities)
            .map(|_| draw(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let relations = (0..num_relations)
            .map(|_| draw(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let aggregator = AggregatorParams::init(mode, dim, &mut rng);
        EmbeddingTable::new(entities, relations, aggregator)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity(&self, id: EntityId) -> Result<&GaussianDensity> {
        self.entities.get(id).ok_or(Error::IdOutOfRange {
            kind: "entity",
            id,
            size: self.entities.len(),
        })
    }

    pub fn relation(&self, id: RelationId) -> Result<&GaussianDensity> {
        self.relations.get(id).ok_or(Error::IdOutOfRange {
            kind: "relation",
            id,
            size: self.relations.len(),
        })
    }

    pub fn entities(&self) -> &[GaussianDensity] {
        &self.entities
    }

    pub fn relations(&self) -> &[GaussianDensity] {
        &self.relations
    }

    pub fn aggregator(&self) -> &AggregatorParams {
        &self.aggregator
    }

    pub(crate) fn entity_mut(&mut self, id: EntityId) -> &mut GaussianDensity {
        &mut self.entities[id]
    }

    pub(crate) fn relation_mut(&mut self, id: RelationId) -> &mut GaussianDensity {
        &mut self.relations[id]
    }

    pub(crate) fn aggregator_mut(&mut self) -> &mut AggregatorParams {
        &mut self.aggregator
    }

    /// Mean column norm of every factor in the table.
    pub fn mean_factor_column_norm(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for g in self.entities.iter().chain(&self.relations) {
            for c in g.factor().column_iter() {
                total += c.norm();
                count += 1;
            }
        }
        total / count.max(1) as f64
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .iter()
            .chain(&self.relations)
            .all(|g| g.mean().iter().chain(g.factor().iter()).all(|v| v.is_finite()))
            && self.aggregator.params().iter().all(|v| v.is_finite())
    }
}

/// Draws an index uniformly at random; used by the samplers.
pub(crate) fn pick<T: Copy, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> Option<T> {
    if items.is_empty() {
        None
    } else {
        Some(items[rng.random_range(0..items.len())])
    }
}
