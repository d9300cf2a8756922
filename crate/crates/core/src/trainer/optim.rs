use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tape::Gradients;
use crate::embedding::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(crate::Error::InvalidParameter(format!(
                "unknown optimizer `{s}` (expected sgd or adam)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    EntityMean(usize),
    EntityFactor(usize),
    RelationMean(usize),
    RelationFactor(usize),
    Aggregator,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Plain SGD, or Adam with lazily created moment buffers: a parameter's
/// moments only advance on steps where it receives a gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: HashMap<Slot, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn apply(&mut self, table: &mut EmbeddingTable, grads: &Gradients) {
        self.step += 1;
        for (&id, g) in &grads.entities {
            let e = table.entity_mut(id);
            self.update(Slot::EntityMean(id), e.mean_mut().as_mut_slice(), g.mean.as_slice());
            self.update(Slot::EntityFactor(id), e.factor_mut().as_mut_slice(), g.factor.as_slice());
        }
        for (&id, g) in &grads.relations {
            let r = table.relation_mut(id);
            self.update(Slot::RelationMean(id), r.mean_mut().as_mut_slice(), g.mean.as_slice());
            self.update(Slot::RelationFactor(id), r.factor_mut().as_mut_slice(), g.factor.as_slice());
        }
        if !grads.aggregator.is_empty() {
            self.update(
                Slot::Aggregator,
                table.aggregator_mut().params_mut(),
                &grads.aggregator,
            );
        }
    }

    fn update(&mut self, slot: Slot, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let n = params.len();
                let (m, v) = self
                    .moments
                    .entry(slot)
                    .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
                let t = self.step.min(1 << 30) as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for i in 0..n {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    params[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}
