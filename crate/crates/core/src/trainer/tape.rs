//! Differentiable replay of query compilation on explicit precisions, and the
//! per-query loss with its gradient.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::gaussian::{
    component_feature, factor_grad, heaviest, product_vjp, softmax_backward, AggregatorMode,
    DenseGaussian, PrecisionGrad,
};
use crate::kg::{EntityId, RelationId};
use crate::query::{QueryDag, QueryNode, MAX_COMPONENTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Leaf {
    Entity(EntityId),
    Relation(RelationId),
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf(Leaf),
    Translate(usize, usize),
    Product(usize, usize),
}

struct Node {
    op: Op,
    value: DenseGaussian,
}

/// Gradient with respect to one stored density.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub mean: DVector<f64>,
    pub factor: DMatrix<f64>,
}

impl ParamGrad {
    fn zeros(dim: usize, rank: usize) -> Self {
        ParamGrad {
            mean: DVector::zeros(dim),
            factor: DMatrix::zeros(dim, rank),
        }
    }

    fn add(&mut self, other: &ParamGrad) {
        self.mean += &other.mean;
        self.factor += &other.factor;
    }
}

/// Sparse gradient over an embedding table. An empty aggregator vector means
/// zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub entities: BTreeMap<EntityId, ParamGrad>,
    pub relations: BTreeMap<RelationId, ParamGrad>,
    pub aggregator: Vec<f64>,
}

impl Gradients {
    pub fn merge(&mut self, other: &Gradients) {
        for (map, theirs) in [
            (&mut self.entities, &other.entities),
            (&mut self.relations, &other.relations),
        ] {
            for (id, g) in theirs {
                match map.get_mut(id) {
                    Some(mine) => mine.add(g),
                    None => {
                        map.insert(*id, g.clone());
                    }
                }
            }
        }
        if self.aggregator.is_empty() {
            self.aggregator = other.aggregator.clone();
        } else if !other.aggregator.is_empty() {
            for (a, b) in self.aggregator.iter_mut().zip(&other.aggregator) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.entities.values_mut().chain(self.relations.values_mut()) {
            g.mean *= s;
            g.factor *= s;
        }
        for a in &mut self.aggregator {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .values()
            .chain(self.relations.values())
            .all(|g| g.mean.iter().chain(g.factor.iter()).all(|v| v.is_finite()))
            && self.aggregator.iter().all(|v| v.is_finite())
    }
}

/// Which candidates a query is scored against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidates {
    pub positives: Vec<EntityId>,
    pub negatives: Vec<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `softplus(D⁺ − γ)` averaged over positives plus `softplus(γ − D⁻)`
    /// averaged over negatives.
    Margin { margin: f64 },
    /// Sum of positive distances, no negatives.
    PositiveOnly,
}

/// The compiled query as tape nodes plus final mixture weights.
pub(crate) struct Tape<'a> {
    table: &'a EmbeddingTable,
    nodes: Vec<Node>,
    leaves: HashMap<Leaf, usize>,
    components: Vec<usize>,
    features: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub(crate) fn record(dag: &QueryDag, table: &'a EmbeddingTable) -> Result<Self> {
        let mut tape = Tape {
            table,
            nodes: Vec::new(),
            leaves: HashMap::new(),
            components: Vec::new(),
            features: Vec::new(),
            weights: Vec::new(),
        };
        let mut values: Vec<Vec<usize>> = Vec::with_capacity(dag.nodes().len());
        for node in dag.nodes() {
            let comps = match node {
                QueryNode::Anchor(e) => vec![tape.leaf(Leaf::Entity(*e))?],
                QueryNode::Translate { child, relation } => {
                    let r = tape.leaf(Leaf::Relation(*relation))?;
                    values[*child]
                        .clone()
                        .into_iter()
                        .map(|c| tape.push(Op::Translate(c, r)))
                        .collect::<Result<_>>()?
                }
                QueryNode::Intersect(cs) => {
                    let mut acc = values[cs[0]].clone();
                    for &c in &cs[1..] {
                        let next = values[c].clone();
                        acc = if next.len() == 1 {
                            acc.into_iter()
                                .map(|a| tape.push(Op::Product(next[0], a)))
                                .collect::<Result<_>>()?
                        } else if acc.len() == 1 {
                            next.into_iter()
                                .map(|b| tape.push(Op::Product(acc[0], b)))
                                .collect::<Result<_>>()?
                        } else {
                            let mut out = Vec::with_capacity(acc.len() * next.len());
                            for &a in &acc {
                                for &b in &next {
                                    out.push(tape.push(Op::Product(a, b))?);
                                }
                            }
                            out
                        };
                        acc = tape.cap(acc)?;
                    }
                    acc
                }
                QueryNode::Union(cs) => {
                    let merged = cs.iter().flat_map(|&c| values[c].iter().copied()).collect();
                    tape.cap(merged)?
                }
            };
            values.push(comps);
        }
        tape.components = values.pop().expect("a query has at least one node");
        tape.features = tape.features_of(&tape.components);
        tape.weights = table.aggregator().weights_from_features(&tape.features)?;
        Ok(tape)
    }

    fn leaf(&mut self, leaf: Leaf) -> Result<usize> {
        if let Some(&i) = self.leaves.get(&leaf) {
            return Ok(i);
        }
        let g = match leaf {
            Leaf::Entity(e) => self.table.entity(e)?,
            Leaf::Relation(r) => self.table.relation(r)?,
        };
        self.nodes.push(Node {
            op: Op::Leaf(leaf),
            value: g.to_dense(),
        });
        self.leaves.insert(leaf, self.nodes.len() - 1);
        Ok(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<usize> {
        let value = match op {
            Op::Leaf(_) => unreachable!("leaves go through `leaf`"),
            Op::Translate(a, b) => self.nodes[a].value.translate(&self.nodes[b].value)?,
            Op::Product(a, b) => self.nodes[a].value.product(&self.nodes[b].value)?,
        };
        self.nodes.push(Node { op, value });
        Ok(self.nodes.len() - 1)
    }

    fn features_of(&self, comps: &[usize]) -> Vec<Vec<f64>> {
        if self.table.aggregator().mode() == AggregatorMode::Average {
            return vec![Vec::new(); comps.len()];
        }
        comps
            .iter()
            .map(|&c| component_feature(&self.nodes[c].value.mean, &self.nodes[c].value.precision))
            .collect()
    }

    fn cap(&self, comps: Vec<usize>) -> Result<Vec<usize>> {
        if comps.len() <= MAX_COMPONENTS {
            return Ok(comps);
        }
        let w = self
            .table
            .aggregator()
            .weights_from_features(&self.features_of(&comps))?;
        Ok(heaviest(&w, MAX_COMPONENTS)?
            .into_iter()
            .map(|i| comps[i])
            .collect())
    }

    /// Mixture distance of one entity mean.
    pub(crate) fn distance(&self, candidate: EntityId) -> Result<f64> {
        let m = self.table.entity(candidate)?.mean();
        Ok(self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(&c, w)| {
                let v = &self.nodes[c].value;
                let delta = &v.mean - m;
                w * delta.dot(&(&v.precision * &delta))
            })
            .sum())
    }

    /// Loss of this query against the candidates, and its gradient.
    pub(crate) fn loss(&self, candidates: &Candidates, kind: LossKind) -> Result<(f64, Gradients)> {
        let mut coeffs: Vec<(EntityId, f64)> = Vec::new();
        let mut value = 0.0;
        match kind {
            LossKind::Margin { margin } => {
                let np = candidates.positives.len().max(1) as f64;
                let nn = candidates.negatives.len().max(1) as f64;
                for &p in &candidates.positives {
                    let x = self.distance(p)? - margin;
                    value += stable_softplus(x) / np;
                    coeffs.push((p, sigmoid(x) / np));
                }
                for &n in &candidates.negatives {
                    let x = margin - self.distance(n)?;
                    value += stable_softplus(x) / nn;
                    coeffs.push((n, -sigmoid(x) / nn));
                }
            }
            LossKind::PositiveOnly => {
                for &p in &candidates.positives {
                    value += self.distance(p)?;
                    coeffs.push((p, 1.0));
                }
            }
        }
        Ok((value, self.backward(&coeffs)?))
    }

    /// Gradient of `Σ c_v · D(v)` for the given `(v, c_v)` pairs.
    pub(crate) fn backward(&self, coeffs: &[(EntityId, f64)]) -> Result<Gradients> {
        let d = self.table.dim();
        let r = self.table.rank();
        let mut grads = Gradients::default();
        let mut node_grads: Vec<Option<PrecisionGrad>> = vec![None; self.nodes.len()];
        let mut d_weights = vec![0.0; self.components.len()];

        for &(v, c) in coeffs {
            let m = self.table.entity(v)?.mean();
            let mut d_candidate = DVector::zeros(d);
            for (k, (&node, &w)) in self.components.iter().zip(&self.weights).enumerate() {
                let val = &self.nodes[node].value;
                let delta = &val.mean - m;
                let p_delta = &val.precision * &delta;
                d_weights[k] += c * delta.dot(&p_delta);
                let g = node_grads[node].get_or_insert_with(|| PrecisionGrad::zeros(d));
                g.mean.axpy(2.0 * c * w, &p_delta, 1.0);
                g.precision.ger(c * w, &delta, &delta, 1.0);
                d_candidate.axpy(-2.0 * c * w, &p_delta, 1.0);
            }
            grads
                .entities
                .entry(v)
                .or_insert_with(|| ParamGrad::zeros(d, r))
                .mean += d_candidate;
        }

        let agg = self.table.aggregator();
        if agg.mode() != AggregatorMode::Average {
            let d_scores = softmax_backward(&self.weights, &d_weights);
            let mut d_params = vec![0.0; agg.params().len()];
            for (k, &node) in self.components.iter().enumerate() {
                let mut d_feature = vec![0.0; self.features[k].len()];
                agg.score_backward(&self.features[k], d_scores[k], &mut d_feature, &mut d_params);
                let g = node_grads[node].get_or_insert_with(|| PrecisionGrad::zeros(d));
                for i in 0..d {
                    g.mean[i] += d_feature[i];
                }
                let mut idx = d;
                for i in 0..d {
                    for j in i..d {
                        g.precision[(i, j)] += d_feature[idx];
                        idx += 1;
                    }
                }
            }
            grads.aggregator = d_params;
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            match self.nodes[i].op {
                Op::Translate(a, b) => {
                    for j in [a, b] {
                        node_grads[j]
                            .get_or_insert_with(|| PrecisionGrad::zeros(d))
                            .accumulate(&g);
                    }
                }
                Op::Product(a, b) => {
                    let (ga, gb) = product_vjp(
                        &self.nodes[a].value,
                        &self.nodes[b].value,
                        &self.nodes[i].value,
                        &g,
                    )?;
                    for (j, gj) in [(a, ga), (b, gb)] {
                        node_grads[j]
                            .get_or_insert_with(|| PrecisionGrad::zeros(d))
                            .accumulate(&gj);
                    }
                }
                Op::Leaf(leaf) => {
                    let (map, g_density) = match leaf {
                        Leaf::Entity(e) => (&mut grads.entities, (e, self.table.entity(e)?)),
                        Leaf::Relation(r) => (&mut grads.relations, (r, self.table.relation(r)?)),
                    };
                    let (id, density) = g_density;
                    let entry = map.entry(id).or_insert_with(|| ParamGrad::zeros(d, r));
                    entry.mean += &g.mean;
                    entry.factor += factor_grad(&g.precision, density.factor());
                }
            }
        }
        Ok(grads)
    }
}

/// Loss and gradient of one query; errors name the failing quantity.
pub fn query_loss(
    dag: &QueryDag,
    table: &EmbeddingTable,
    candidates: &Candidates,
    kind: LossKind,
) -> Result<(f64, Gradients)> {
    let tape = Tape::record(dag, table)?;
    let (value, grads) = tape.loss(candidates, kind)?;
    if !value.is_finite() || !grads.is_finite() {
        return Err(Error::Numeric("loss or gradient is not finite".into()));
    }
    Ok((value, grads))
}
