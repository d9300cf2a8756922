use super::{QueryDag, QueryNode};
use crate::embedding::EmbeddingTable;
use crate::error::Result;
use crate::gaussian::{
    cap_components, mixture_intersect, mixture_product, mixture_translate, union, GaussianMixture,
};

/// Largest mixture kept after an intersection or union; lighter components
/// are dropped and the rest renormalized.
pub const MAX_COMPONENTS: usize = 16;

/// Turns a query tree into the Gaussian mixture it denotes.
///
/// Anchors become one-component mixtures, translations translate every
/// component, intersections fold left over the operands (mixture × density
/// when either side has a single component, pairwise products otherwise),
/// and unions concatenate.
pub fn compile(dag: &QueryDag, table: &EmbeddingTable) -> Result<GaussianMixture> {
    let agg = table.aggregator();
    let mut values: Vec<GaussianMixture> = Vec::with_capacity(dag.nodes().len());
    for (i, node) in dag.nodes().iter().enumerate() {
        let at = |e: crate::Error| e.with_context(format!("query node {i}"));
        let value = match node {
            QueryNode::Anchor(e) => GaussianMixture::from(table.entity(*e)?.clone()),
            QueryNode::Translate { child, relation } => {
                mixture_translate(&values[*child], table.relation(*relation)?, agg).map_err(at)?
            }
            QueryNode::Intersect(cs) => {
                let mut acc = values[cs[0]].clone();
                for &c in &cs[1..] {
                    let next = &values[c];
                    acc = if next.len() == 1 {
                        mixture_intersect(&acc, &next.components()[0], agg)
                    } else if acc.len() == 1 {
                        mixture_intersect(next, &acc.components()[0], agg)
                    } else {
                        mixture_product(&acc, next, agg)
                    }
                    .map_err(at)?;
                    acc = cap_components(&acc, MAX_COMPONENTS)?.0;
                }
                acc
            }
            QueryNode::Union(cs) => {
                let parts: Vec<GaussianMixture> = cs.iter().map(|&c| values[c].clone()).collect();
                let merged = union(&parts, agg).map_err(at)?;
                cap_components(&merged, MAX_COMPONENTS)?.0
            }
        };
        values.push(value);
    }
    Ok(values.pop().expect("a query has at least one node"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{translate, AggregatorMode};
    use crate::query::tests::canonical;
    use crate::query::{QueryExpr, QueryType};

    fn table(mode: AggregatorMode) -> EmbeddingTable {
        EmbeddingTable::random(12, 12, 3, 2, 1e-3, mode, 4).unwrap()
    }

    #[test]
    fn anchor_only() {
        let t = table(AggregatorMode::Attention);
        let m = compile(&QueryDag::from_expr(&QueryExpr::Anchor(3)).unwrap(), &t).unwrap();
        assert_eq!(m.components(), &[t.entity(3).unwrap().clone()]);
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn one_hop_is_translation() {
        let t = table(AggregatorMode::Attention);
        let m = compile(&QueryDag::from_expr(&QueryExpr::Anchor(1).hop(2)).unwrap(), &t).unwrap();
        let expected = translate(t.entity(1).unwrap(), t.relation(2).unwrap()).unwrap();
        assert_eq!(m.components(), &[expected]);
    }

    #[test]
    fn union_of_identical_anchors() {
        let t = table(AggregatorMode::Scorer);
        let q = QueryExpr::Union(vec![QueryExpr::Anchor(5), QueryExpr::Anchor(5)]);
        let m = compile(&QueryDag::from_expr(&q).unwrap(), &t).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.components()[0], m.components()[1]);
        assert!((m.weights()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn canonical_shapes_compile_with_expected_sizes() {
        let t = table(AggregatorMode::Attention);
        for qt in QueryType::ALL {
            let dag = QueryDag::from_expr(&canonical(qt)).unwrap();
            let m = compile(&dag, &t).unwrap();
            assert_eq!(m.len(), dag.component_count(), "{qt}");
            assert!(m.is_well_formed());
        }
    }

    #[test]
    fn intersection_after_union_is_allowed() {
        let t = table(AggregatorMode::Attention);
        let u = QueryExpr::Union(vec![QueryExpr::Anchor(0).hop(0), QueryExpr::Anchor(1).hop(1)]);
        let q = QueryExpr::Intersect(vec![u.clone(), u.hop(2)]);
        let m = compile(&QueryDag::from_expr(&q).unwrap(), &t).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.is_well_formed());
    }

    #[test]
    fn wide_unions_are_capped() {
        let t = table(AggregatorMode::Attention);
        let u = |k: usize| {
            QueryExpr::Union((0..5).map(|i| QueryExpr::Anchor(i + k).hop(i)).collect())
        };
        let q = QueryExpr::Intersect(vec![u(0), u(5)]);
        let m = compile(&QueryDag::from_expr(&q).unwrap(), &t).unwrap();
        assert_eq!(m.len(), MAX_COMPONENTS);
    }
}
