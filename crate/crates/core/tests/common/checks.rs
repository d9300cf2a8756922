//! Check routines with a configurable workload size. The acceptance harness
//! runs them at full size; the per-topic suites run them smaller.

use std::collections::BTreeSet;

use gaussq_core::gaussian::{
    cap_components, grad_mahalanobis, grad_through_product, mahalanobis, mixture_intersect,
    mixture_product, mixture_translate, product, translate, union, AggregatorMode,
    AggregatorParams, GaussianDensity, GaussianMixture, PrecisionGrad,
};
use gaussq_core::kg::SplitMask;
use gaussq_core::query::{enumerate_answers, QueryDag, QueryExpr, QueryType, MAX_COMPONENTS};
use gaussq_core::trainer::{query_loss, Candidates, Gradients, LossKind};
use gaussq_core::EmbeddingTable;
use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const MODES: [AggregatorMode; 3] = [
    AggregatorMode::Attention,
    AggregatorMode::Average,
    AggregatorMode::Scorer,
];

fn check_mixture(m: &GaussianMixture, d: usize, what: &str, failures: &mut Vec<String>) {
    if !m.is_well_formed() || m.dim() != d {
        failures.push(format!("{what}: malformed mixture (dim {}, {} components)", m.dim(), m.len()));
    }
}

fn check_density(g: &GaussianDensity, d: usize, what: &str, failures: &mut Vec<String>) {
    if !g.is_well_formed() || g.dim() != d || g.rank() > d {
        failures.push(format!("{what}: malformed density (dim {}, rank {})", g.dim(), g.rank()));
    }
}

/// Applies `applications` randomized operators to random densities and
/// mixtures (dimension ≤ 8, nesting depth ≤ 4) and returns every invariant
/// violation found.
pub fn closure(seed: u64, applications: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut done = 0;
    while done < applications {
        let d = rng.random_range(1..=8);
        let r = rng.random_range(1..=d);
        let mode = *MODES.choose(&mut rng).unwrap();
        let n = AggregatorParams::param_count(mode, d);
        let agg = AggregatorParams::from_parts(mode, d, (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        // (value, depth) pools
        let mut singles: Vec<(GaussianDensity, usize)> = (0..3).map(|_| (density(&mut rng, d, r, JITTER), 0)).collect();
        let mut mixtures: Vec<(GaussianMixture, usize)> = singles.iter().map(|(g, _)| (g.clone().into(), 0)).collect();
        for _ in 0..12 {
            if done >= applications {
                break;
            }
            done += 1;
            let op = rng.random_range(0..8);
            let (a, da) = singles.choose(&mut rng).unwrap().clone();
            let (b, db) = singles.choose(&mut rng).unwrap().clone();
            let (ma, dma) = mixtures.choose(&mut rng).unwrap().clone();
            let (mb, dmb) = mixtures.choose(&mut rng).unwrap().clone();
            let label = format!("seed {seed} app {done} op {op} d {d}");
            let depth = |x: usize, y: usize| x.max(y) + 1;
            match op {
                0 | 1 => {
                    let (out, what) = if op == 0 {
                        (translate(&a, &b), "translate")
                    } else {
                        (product(&a, &b), "product")
                    };
                    match out {
                        Ok(g) => {
                            check_density(&g, d, &format!("{label} {what}"), &mut failures);
                            if what == "product" {
                                let want = a.precision() + b.precision();
                                if (g.precision() - want).amax() > 1e-9 * (1.0 + a.precision().amax() + b.precision().amax()) {
                                    failures.push(format!("{label}: product precision is not additive"));
                                }
                            }
                            if depth(da, db) < 4 {
                                singles.push((g.clone(), depth(da, db)));
                                mixtures.push((g.into(), depth(da, db)));
                            }
                        }
                        Err(e) => failures.push(format!("{label} {what}: {e}")),
                    }
                }
                2 => match a.truncated(rng.random_range(1..=d)) {
                    Ok(g) => check_density(&g, d, &format!("{label} truncate"), &mut failures),
                    Err(e) => failures.push(format!("{label} truncate: {e}")),
                },
                _ => {
                    let out = match op {
                        3 => union(&[ma.clone(), mb.clone()], &agg),
                        4 => mixture_translate(&ma, &b, &agg),
                        5 => mixture_intersect(&ma, &b, &agg),
                        6 => mixture_product(&ma, &mb, &agg),
                        _ => cap_components(&ma, rng.random_range(1..=MAX_COMPONENTS)).map(|(m, _)| m),
                    };
                    match out {
                        Ok(m) => {
                            check_mixture(&m, d, &format!("{label} mixture op"), &mut failures);
                            let (capped, kept) = cap_components(&m, MAX_COMPONENTS).unwrap();
                            check_mixture(&capped, d, &format!("{label} cap"), &mut failures);
                            if capped.len() > MAX_COMPONENTS || kept.len() != capped.len() {
                                failures.push(format!("{label}: cap kept {} components", capped.len()));
                            }
                            let probe = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
                            match gaussq_core::gaussian::mixture_distance(&probe, &capped) {
                                Ok(v) if v.is_finite() && v >= 0.0 => {}
                                Ok(v) => failures.push(format!("{label}: mixture distance {v}")),
                                Err(e) => failures.push(format!("{label}: mixture distance: {e}")),
                            }
                            let dm = depth(dma, dmb);
                            if dm < 4 {
                                mixtures.push((capped, dm));
                            }
                        }
                        Err(e) => failures.push(format!("{label} mixture op: {e}")),
                    }
                }
            }
        }
    }
    failures
}

/// Largest absolute mean and variance error of univariate products against
/// grid integration.
pub fn univariate_products(seed: u64, count: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let draw = |rng: &mut ChaCha8Rng| {
            let l: f64 = rng.random_range(0.3..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            GaussianDensity::new(
                DVector::from_element(1, rng.random_range(-3.0..3.0)),
                DMatrix::from_element(1, 1, l),
                JITTER,
            )
            .unwrap()
        };
        let (g1, g2) = (draw(&mut rng), draw(&mut rng));
        let var = |g: &GaussianDensity| 1.0 / g.precision()[(0, 0)];
        let (m, v) = grid_product_moments(g1.mean()[0], var(&g1), g2.mean()[0], var(&g2));
        let p = product(&g1, &g2).unwrap();
        worst_mean = worst_mean.max((p.mean()[0] - m).abs());
        worst_var = worst_var.max((var(&p) - v).abs());
    }
    (worst_mean, worst_var)
}

/// Largest precision-additivity error and mean-solve residual of random
/// multivariate products (dimension ≤ 5).
pub fn multivariate_products(seed: u64, count: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_p, mut worst_r) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let d = rng.random_range(1..=5);
        let (r1, r2) = (rng.random_range(1..=d), rng.random_range(1..=d));
        let g1 = density(&mut rng, d, r1, JITTER);
        let g2 = density(&mut rng, d, r2, JITTER);
        let p = product(&g1, &g2).unwrap();
        let (p1, p2) = (g1.precision(), g2.precision());
        worst_p = worst_p.max((p.precision() - (&p1 + &p2)).amax());
        let residual = (&p1 + &p2) * p.mean() - (&p1 * g1.mean() + &p2 * g2.mean());
        worst_r = worst_r.max(residual.norm());
    }
    (worst_p, worst_r)
}

const H: f64 = 1e-5;
/// Denominator floor for relative gradient error.
pub const GRAD_FLOOR: f64 = 1e-3;

/// Worst relative error of the analytic Mahalanobis gradient.
pub fn mahalanobis_gradients(seed: u64, configs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let d = rng.random_range(1..=8);
        let r = rng.random_range(1..=d);
        let q = density(&mut rng, d, r, JITTER);
        let c = DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5));
        let g = grad_mahalanobis(&c, &q).unwrap();
        let analytic: Vec<f64> = g.query_mean.iter().chain(g.query_factor.iter()).chain(g.candidate_mean.iter()).copied().collect();
        let mut x: Vec<f64> = flatten(&q).into_iter().chain(c.iter().copied()).collect();
        let n = d + d * r;
        for (i, a) in analytic.iter().enumerate() {
            let fd = central_diff(&mut x, i, H, |x| {
                mahalanobis(&DVector::from_column_slice(&x[n..]), &unflatten(&x[..n], d, r, JITTER)).unwrap()
            });
            worst = worst.max(rel_err(*a, fd, GRAD_FLOOR));
        }
    }
    worst
}

/// Worst relative error of gradients pulled back through a product, for a
/// random linear functional of the product's mean and precision.
pub fn product_gradients(seed: u64, configs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let d = rng.random_range(1..=6);
        let (r1, r2) = (rng.random_range(1..=d), rng.random_range(1..=d));
        let g1 = density(&mut rng, d, r1, JITTER);
        let g2 = density(&mut rng, d, r2, JITTER);
        let upstream = PrecisionGrad {
            mean: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            precision: DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)),
        };
        let scalar = |a: &GaussianDensity, b: &GaussianDensity| {
            let p = product(a, b).unwrap();
            upstream.mean.dot(p.mean()) + upstream.precision.component_mul(&p.precision()).sum()
        };
        let g = grad_through_product(&upstream, &g1, &g2).unwrap();
        let analytic: Vec<f64> = g.mean1.iter().chain(g.factor1.iter()).chain(g.mean2.iter()).chain(g.factor2.iter()).copied().collect();
        let n1 = d + d * r1;
        let mut x: Vec<f64> = flatten(&g1).into_iter().chain(flatten(&g2)).collect();
        for (i, a) in analytic.iter().enumerate() {
            let fd = central_diff(&mut x, i, H, |x| {
                scalar(&unflatten(&x[..n1], d, r1, JITTER), &unflatten(&x[n1..], d, r2, JITTER))
            });
            worst = worst.max(rel_err(*a, fd, GRAD_FLOOR));
        }
    }
    worst
}

/// One random query of the given shape.
pub fn shape_expr<R: Rng>(t: QueryType, rng: &mut R, entities: usize, relations: usize) -> QueryExpr {
    let mut a = || QueryExpr::Anchor(rng.random_range(0..entities));
    let anchors: Vec<QueryExpr> = (0..3).map(|_| a()).collect();
    let mut r = || rng.random_range(0..relations);
    let [a0, a1, a2] = anchors.try_into().unwrap();
    use QueryType::*;
    match t {
        OneHop => a0.hop(r()),
        TwoHop => a0.hop(r()).hop(r()),
        ThreeHop => a0.hop(r()).hop(r()).hop(r()),
        TwoInter => QueryExpr::Intersect(vec![a0.hop(r()), a1.hop(r())]),
        ThreeInter => QueryExpr::Intersect(vec![a0.hop(r()), a1.hop(r()), a2.hop(r())]),
        TwoUnion => QueryExpr::Union(vec![a0.hop(r()), a1.hop(r())]),
        InterTranslate => QueryExpr::Intersect(vec![a0.hop(r()), a1.hop(r())]).hop(r()),
        TranslateInter => QueryExpr::Intersect(vec![a0.hop(r()).hop(r()), a1.hop(r())]),
        UnionTranslate => QueryExpr::Union(vec![a0.hop(r()), a1.hop(r())]).hop(r()),
    }
}

fn table_params(t: &EmbeddingTable) -> Vec<f64> {
    t.entities()
        .iter()
        .chain(t.relations())
        .flat_map(flatten)
        .chain(t.aggregator().params().iter().copied())
        .collect()
}

fn table_from(x: &[f64], t: &EmbeddingTable) -> EmbeddingTable {
    let (d, r, j) = (t.dim(), t.rank(), t.jitter());
    let n = d + d * r;
    let count = t.num_entities() + t.num_relations();
    let dens: Vec<GaussianDensity> = (0..count).map(|i| unflatten(&x[i * n..(i + 1) * n], d, r, j)).collect();
    let (es, rs) = dens.split_at(t.num_entities());
    let agg = AggregatorParams::from_parts(t.aggregator().mode(), d, x[count * n..].to_vec()).unwrap();
    EmbeddingTable::new(es.to_vec(), rs.to_vec(), agg).unwrap()
}

fn grads_flat(g: &Gradients, t: &EmbeddingTable) -> Vec<f64> {
    let n = t.dim() + t.dim() * t.rank();
    let mut out = vec![0.0; table_params(t).len()];
    let mut put = |slot: usize, pg: &gaussq_core::trainer::ParamGrad| {
        for (k, v) in pg.mean.iter().chain(pg.factor.iter()).enumerate() {
            out[slot * n + k] = *v;
        }
    };
    for (e, pg) in &g.entities {
        put(*e, pg);
    }
    for (r, pg) in &g.relations {
        put(t.num_entities() + r, pg);
    }
    let base = (t.num_entities() + t.num_relations()) * n;
    for (k, v) in g.aggregator.iter().enumerate() {
        out[base + k] = *v;
    }
    out
}

/// Worst relative error of full query-loss gradients over random tables,
/// shapes, aggregator modes and loss kinds.
pub fn loss_gradients(seed: u64, configs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..configs {
        let d = rng.random_range(2..=4);
        let r = rng.random_range(1..=d);
        let mode = MODES[i % 3];
        let t = table(&mut rng, 7, 3, d, r, mode);
        let shape = QueryType::ALL[i % QueryType::ALL.len()];
        let dag = QueryDag::from_expr(&shape_expr(shape, &mut rng, 7, 3)).unwrap();
        let candidates = Candidates {
            positives: (0..rng.random_range(1..=2)).map(|_| rng.random_range(0..7)).collect(),
            negatives: (0..3).map(|_| rng.random_range(0..7)).collect(),
        };
        let kind = if rng.random_bool(0.75) {
            LossKind::Margin { margin: rng.random_range(0.5..6.0) }
        } else {
            LossKind::PositiveOnly
        };
        let (_, grads) = query_loss(&dag, &t, &candidates, kind).unwrap();
        let analytic = grads_flat(&grads, &t);
        let mut x = table_params(&t);
        for (k, a) in analytic.iter().enumerate() {
            let fd = central_diff(&mut x, k, H, |x| query_loss(&dag, &table_from(x, &t), &candidates, kind).unwrap().0);
            worst = worst.max(rel_err(*a, fd, GRAD_FLOOR));
        }
    }
    worst
}

/// Checks the recursion laws of the answer enumerator on random graphs:
/// anchors are singletons, translation is the neighbor union of the child
/// set, intersection and union are the set operations on child sets, and
/// every set matches a brute-force scan of the triples. Returns the number
/// of nodes checked and the violations.
pub fn recursion_laws(seed: u64, graphs: usize, queries_per_graph: usize) -> (usize, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut failures = Vec::new();
    for gi in 0..graphs {
        let entities = rng.random_range(10..=80);
        let relations = rng.random_range(1..=6);
        let max_triples = (entities * entities * relations).min(500);
        let triples = rng.random_range(1..=max_triples);
        let (kg, list) = random_kg(&mut rng, entities, relations, triples);
        for qi in 0..queries_per_graph {
            let depth = rng.random_range(1..=3);
            let expr = random_expr(&mut rng, entities, relations, depth);
            let mut stack = vec![expr];
            while let Some(e) = stack.pop() {
                checked += 1;
                let got = answers_of(&e, &kg);
                let law: BTreeSet<usize> = match &e {
                    QueryExpr::Anchor(a) => BTreeSet::from([*a]),
                    QueryExpr::Translate(c, rel) => {
                        let from = answers_of(c, &kg);
                        let view = kg.view(SplitMask::TRAIN);
                        from.iter().flat_map(|&h| view.tails(h, *rel).iter().copied()).collect()
                    }
                    QueryExpr::Intersect(cs) => {
                        let sets: Vec<BTreeSet<usize>> = cs.iter().map(|c| answers_of(c, &kg)).collect();
                        sets[1..].iter().fold(sets[0].clone(), |acc, s| acc.intersection(s).copied().collect())
                    }
                    QueryExpr::Union(cs) => cs.iter().flat_map(|c| answers_of(c, &kg)).collect(),
                };
                if got != law {
                    failures.push(format!("graph {gi} query {qi}: recursion law fails at {e:?}"));
                }
                if got != brute_answers(&e, &list) {
                    failures.push(format!("graph {gi} query {qi}: brute-force mismatch at {e:?}"));
                }
                match e {
                    QueryExpr::Anchor(_) => {}
                    QueryExpr::Translate(c, _) => stack.push(*c),
                    QueryExpr::Intersect(cs) | QueryExpr::Union(cs) => stack.extend(cs),
                }
            }
        }
    }
    (checked, failures)
}

fn answers_of(e: &QueryExpr, kg: &gaussq_core::kg::KnowledgeGraph) -> BTreeSet<usize> {
    let dag = QueryDag::from_expr(e).unwrap();
    let v = enumerate_answers(&dag, kg, SplitMask::TRAIN).unwrap();
    assert!(v.windows(2).all(|w| w[0] < w[1]), "answers must be sorted and unique");
    v.into_iter().collect()
}

/// A ranking with hand-computed precision-mode metrics. `hits` pairs K with the
/// expected HITS@K; `mrr` uses `n` = ranking length.
pub struct MetricFixture {
    pub ranked: &'static [usize],
    pub answers: &'static [usize],
    pub hits: &'static [(usize, f64)],
    pub mrr: f64,
}

pub const METRIC_FIXTURES: [MetricFixture; 20] = [
    MetricFixture { ranked: &[0, 1, 2, 3], answers: &[0], hits: &[(1, 1.0), (3, 1.0 / 3.0)], mrr: 1.0 / 4.0 },
    MetricFixture { ranked: &[3, 2, 1, 0], answers: &[0], hits: &[(1, 0.0), (3, 0.0), (4, 1.0 / 4.0)], mrr: 1.0 / 16.0 },
    MetricFixture { ranked: &[2, 0, 1], answers: &[0, 1], hits: &[(1, 0.0), (3, 2.0 / 3.0)], mrr: 5.0 / 18.0 },
    MetricFixture { ranked: &[5, 4, 3, 2, 1, 0], answers: &[4, 5], hits: &[(1, 1.0), (3, 2.0 / 3.0)], mrr: 1.0 / 4.0 },
    MetricFixture { ranked: &[1, 0, 2, 3, 4], answers: &[0, 1, 2, 3, 4], hits: &[(1, 1.0), (3, 1.0)], mrr: 137.0 / 300.0 },
    MetricFixture { ranked: &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9], answers: &[9], hits: &[(1, 0.0), (3, 0.0), (10, 1.0 / 10.0)], mrr: 1.0 / 100.0 },
    MetricFixture { ranked: &[9, 8, 7, 6, 5, 4, 3, 2, 1, 0], answers: &[7, 8, 9], hits: &[(1, 1.0), (3, 1.0), (10, 3.0 / 10.0)], mrr: 11.0 / 60.0 },
    MetricFixture { ranked: &[4, 2, 0, 3, 1], answers: &[1, 3], hits: &[(1, 0.0), (3, 0.0)], mrr: 9.0 / 100.0 },
    MetricFixture { ranked: &[2, 5, 1, 4, 0, 3], answers: &[1], hits: &[(1, 0.0), (3, 1.0 / 3.0)], mrr: 1.0 / 18.0 },
    MetricFixture { ranked: &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11], answers: &[0, 11], hits: &[(1, 1.0), (3, 1.0 / 3.0), (10, 1.0 / 10.0)], mrr: 13.0 / 144.0 },
    MetricFixture { ranked: &[7, 3], answers: &[3], hits: &[(1, 0.0), (2, 1.0 / 2.0)], mrr: 1.0 / 4.0 },
    MetricFixture { ranked: &[1], answers: &[1], hits: &[(1, 1.0)], mrr: 1.0 },
    MetricFixture { ranked: &[1], answers: &[0], hits: &[(1, 0.0)], mrr: 0.0 },
    MetricFixture { ranked: &[3, 1, 2, 0], answers: &[0, 1, 2, 3], hits: &[(1, 1.0), (3, 1.0)], mrr: 25.0 / 48.0 },
    MetricFixture { ranked: &[6, 5, 4, 3, 2, 1, 0], answers: &[0, 2, 4, 6], hits: &[(1, 1.0), (3, 2.0 / 3.0)], mrr: 176.0 / 735.0 },
    MetricFixture { ranked: &[10, 20, 30, 40], answers: &[20, 40], hits: &[(1, 0.0), (3, 1.0 / 3.0)], mrr: 3.0 / 16.0 },
    MetricFixture {
        ranked: &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19],
        answers: &[2, 5, 19],
        hits: &[(1, 0.0), (3, 1.0 / 3.0), (10, 2.0 / 10.0)],
        mrr: 11.0 / 400.0,
    },
    MetricFixture { ranked: &[8, 6, 7, 5, 3, 0, 9], answers: &[9], hits: &[(1, 0.0), (3, 0.0)], mrr: 1.0 / 49.0 },
    MetricFixture { ranked: &[1, 2, 3], answers: &[1, 2, 3, 4], hits: &[(1, 1.0), (3, 1.0)], mrr: 11.0 / 18.0 },
    MetricFixture { ranked: &[4, 3, 2, 1, 0], answers: &[3], hits: &[(1, 0.0), (3, 1.0 / 3.0)], mrr: 1.0 / 10.0 },
];

/// Largest deviation from the hand values; HITS must match bit for bit.
pub fn metric_fixtures() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (i, f) in METRIC_FIXTURES.iter().enumerate() {
        for &(k, want) in f.hits {
            let got = gaussq_core::eval::hits_at_k(f.ranked, f.answers, k).map_err(|e| format!("fixture {i}: {e}"))?;
            if got != want {
                return Err(format!("fixture {i}: HITS@{k} = {got}, expected {want}"));
            }
        }
        let got = gaussq_core::eval::mrr(f.ranked, f.answers, f.ranked.len());
        worst = worst.max((got - f.mrr).abs());
    }
    Ok(worst)
}
