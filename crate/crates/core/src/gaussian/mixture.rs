use nalgebra::DVector;

use super::{aggregate_weights, mahalanobis, product, translate, AggregatorParams, GaussianDensity};
use crate::error::{check_dim, Error, Result};

/// Weighted set of densities. A one-component mixture with weight 1 is the
/// canonical form of a single density.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianDensity>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianDensity>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "a mixture needs at least one component".into(),
            ));
        }
        check_dim(components.len(), weights.len())?;
        let d = components[0].dim();
        for c in &components[1..] {
            check_dim(d, c.dim())?;
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidParameter(
                "mixture weights must be strictly positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(GaussianMixture {
            components,
            weights,
        })
    }

    /// Builds a mixture whose weights come from the aggregator.
    pub fn weighted(components: Vec<GaussianDensity>, params: &AggregatorParams) -> Result<Self> {
        let weights = aggregate_weights(&components, params)?;
        GaussianMixture::new(components, weights)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn components(&self) -> &[GaussianDensity] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GaussianDensity, f64)> {
        self.components.iter().zip(self.weights.iter().copied())
    }

    pub fn into_components(self) -> Vec<GaussianDensity> {
        self.components
    }

    pub fn is_well_formed(&self) -> bool {
        !self.components.is_empty()
            && self.components.len() == self.weights.len()
            && self.weights.iter().all(|w| w.is_finite() && *w > 0.0)
            && (self.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            && self.components.iter().all(|c| c.dim() == self.dim() && c.is_well_formed())
    }
}

impl From<GaussianDensity> for GaussianMixture {
    fn from(g: GaussianDensity) -> Self {
        GaussianMixture {
            components: vec![g],
            weights: vec![1.0],
        }
    }
}

/// Concatenates all input components and re-weights them jointly.
pub fn union(inputs: &[GaussianMixture], params: &AggregatorParams) -> Result<GaussianMixture> {
    let components: Vec<GaussianDensity> = inputs
        .iter()
        .flat_map(|m| m.components().iter().cloned())
        .collect();
    if let Some(first) = components.first() {
        for c in &components[1..] {
            check_dim(first.dim(), c.dim())?;
        }
    }
    GaussianMixture::weighted(components, params)
}

/// Translates every component by the relation; weights are recomputed.
pub fn mixture_translate(
    m: &GaussianMixture,
    rel: &GaussianDensity,
    params: &AggregatorParams,
) -> Result<GaussianMixture> {
    let components = m
        .components()
        .iter()
        .map(|c| translate(c, rel))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::weighted(components, params)
}

/// Intersects every component with `e` (distributive law); weights are
/// recomputed over the products.
pub fn mixture_intersect(
    m: &GaussianMixture,
    e: &GaussianDensity,
    params: &AggregatorParams,
) -> Result<GaussianMixture> {
    let components = m
        .components()
        .iter()
        .enumerate()
        .map(|(i, c)| product(e, c).map_err(|err| err.with_context(format!("component {i}"))))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::weighted(components, params)
}

/// Intersection of two mixtures: every pairwise component product, in
/// row-major order over `(a, b)`.
pub fn mixture_product(
    a: &GaussianMixture,
    b: &GaussianMixture,
    params: &AggregatorParams,
) -> Result<GaussianMixture> {
    let mut components = Vec::with_capacity(a.len() * b.len());
    for (i, ca) in a.components().iter().enumerate() {
        for (j, cb) in b.components().iter().enumerate() {
            components.push(
                product(ca, cb).map_err(|e| e.with_context(format!("components ({i}, {j})")))?,
            );
        }
    }
    GaussianMixture::weighted(components, params)
}

/// `Σ φᵢ d(candidate, componentᵢ)`.
pub fn mixture_distance(candidate_mean: &DVector<f64>, m: &GaussianMixture) -> Result<f64> {
    let mut total = 0.0;
    for (c, w) in m.iter() {
        total += w * mahalanobis(candidate_mean, c)?;
    }
    Ok(total)
}

/// Keeps the `max` heaviest components (ties keep the lower index) and
/// renormalizes. Returns the kept indices in original order.
pub fn cap_components(m: &GaussianMixture, max: usize) -> Result<(GaussianMixture, Vec<usize>)> {
    let keep = heaviest(m.weights(), max)?;
    if keep.len() == m.len() {
        return Ok((m.clone(), keep));
    }
    let total: f64 = keep.iter().map(|&i| m.weights[i]).sum();
    let components = keep.iter().map(|&i| m.components[i].clone()).collect();
    let weights = keep.iter().map(|&i| m.weights[i] / total).collect();
    Ok((GaussianMixture::new(components, weights)?, keep))
}

pub(crate) fn heaviest(weights: &[f64], max: usize) -> Result<Vec<usize>> {
    if max == 0 {
        return Err(Error::InvalidParameter(
            "component cap must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    if weights.len() > max {
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        order.truncate(max);
        order.sort_unstable();
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{AggregatorMode, DEFAULT_JITTER};
    use nalgebra::{dvector, DMatrix};

    fn g(mean: DVector<f64>, scale: f64) -> GaussianDensity {
        let d = mean.len();
        GaussianDensity::new(mean, DMatrix::identity(d, d) * scale, DEFAULT_JITTER).unwrap()
    }

    fn attention(d: usize, seed: f64) -> AggregatorParams {
        let n = AggregatorParams::param_count(AggregatorMode::Attention, d);
        AggregatorParams::from_parts(
            AggregatorMode::Attention,
            d,
            (0..n).map(|i| seed * ((i as f64) * 0.7).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn weights_must_sum_to_one() {
        let c = g(dvector![0.0], 1.0);
        assert!(GaussianMixture::new(vec![c.clone(), c.clone()], vec![0.5, 0.6]).is_err());
        assert!(GaussianMixture::new(vec![c.clone()], vec![0.0]).is_err());
        assert!(GaussianMixture::new(vec![], vec![]).is_err());
        assert!(GaussianMixture::new(vec![c.clone(), c], vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn union_with_average_weights() {
        let a = g(dvector![0.0, 0.0], 1.0);
        let b = g(dvector![1.0, 0.0], 2.0);
        let u = union(&[a.clone().into(), b.clone().into()], &AggregatorParams::average(2)).unwrap();
        assert_eq!(u.components(), &[a, b]);
        assert_eq!(u.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn union_of_one_and_two_components() {
        let p = attention(2, 0.4);
        let a: GaussianMixture = g(dvector![0.0, 0.0], 1.0).into();
        let b = union(
            &[g(dvector![1.0, 0.0], 1.0).into(), g(dvector![0.0, 3.0], 0.5).into()],
            &p,
        )
        .unwrap();
        let u = union(&[a, b], &p).unwrap();
        assert_eq!(u.len(), 3);
        assert!((u.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn union_of_identical_singletons_is_balanced() {
        let x = g(dvector![0.3, -0.2], 1.5);
        let u = union(&[x.clone().into(), x.into()], &attention(2, 1.0)).unwrap();
        assert!((u.weights()[0] - 0.5).abs() < 1e-15);
        assert!((u.weights()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn union_rejects_mixed_dimensions() {
        let u = union(
            &[g(dvector![0.0], 1.0).into(), g(dvector![0.0, 0.0], 1.0).into()],
            &AggregatorParams::average(1),
        );
        assert!(matches!(u, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn chain_translation_shifts_every_component() {
        let p = attention(2, 0.2);
        let m = union(
            &[g(dvector![0.0, 0.0], 1.0).into(), g(dvector![2.0, 1.0], 3.0).into()],
            &p,
        )
        .unwrap();
        let shift = g(dvector![1.0, 0.0], 0.5);
        let t = mixture_translate(&m, &shift, &p).unwrap();
        assert_eq!(t.components()[0].mean(), &dvector![1.0, 0.0]);
        assert_eq!(t.components()[1].mean(), &dvector![3.0, 1.0]);

        let zero = g(dvector![0.0, 0.0], 0.5);
        let t = mixture_translate(&m, &zero, &p).unwrap();
        for (a, b) in t.components().iter().zip(m.components()) {
            assert_eq!(a.mean(), b.mean());
        }
    }

    #[test]
    fn single_component_mixture_ops_match_density_ops() {
        let p = attention(2, 0.5);
        let e = g(dvector![0.5, 0.5], 2.0);
        let r = g(dvector![1.0, -1.0], 0.3);
        let m: GaussianMixture = e.clone().into();
        let t = mixture_translate(&m, &r, &p).unwrap();
        assert_eq!(t.components(), &[translate(&e, &r).unwrap()]);
        assert_eq!(t.weights(), &[1.0]);
        let i = mixture_intersect(&m, &r, &p).unwrap();
        assert_eq!(i.components(), &[product(&r, &e).unwrap()]);
        let c = dvector![0.1, 0.2];
        assert_eq!(
            mixture_distance(&c, &m).unwrap(),
            mahalanobis(&c, &e).unwrap()
        );
    }

    #[test]
    fn intersecting_with_a_vague_density_barely_moves_means() {
        let vague = GaussianDensity::new(dvector![10.0, -10.0], DMatrix::zeros(2, 1), 1e-9).unwrap();
        let m = union(
            &[g(dvector![0.0, 0.0], 1.0).into(), g(dvector![1.0, 2.0], 2.0).into()],
            &AggregatorParams::average(2),
        )
        .unwrap();
        let out = mixture_intersect(&m, &vague, &AggregatorParams::average(2)).unwrap();
        for (a, b) in out.components().iter().zip(m.components()) {
            let pa = b.precision();
            // shift = (Pa + εI)⁻¹ ε (μ_vague − μ_a), bounded by ε‖Δ‖ / λ_min(Pa)
            let lambda_min = pa.symmetric_eigenvalues().min();
            let bound = 1e-9 * (vague.mean() - b.mean()).norm() / lambda_min;
            assert!((a.mean() - b.mean()).norm() <= 10.0 * bound);
        }
    }

    #[test]
    fn intersecting_identical_components_stays_symmetric() {
        let x = g(dvector![1.0, 1.0], 1.0);
        let m = union(&[x.clone().into(), x.into()], &attention(2, 0.3)).unwrap();
        let e = g(dvector![0.0, 2.0], 0.7);
        let out = mixture_intersect(&m, &e, &attention(2, 0.3)).unwrap();
        assert_eq!(out.components()[0], out.components()[1]);
        assert_eq!(out.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn weighted_distance() {
        // component distances 2 and 4 at the origin
        let a = GaussianDensity::new(dvector![1.0, 1.0], DMatrix::identity(2, 2), 0.0).unwrap();
        let b = GaussianDensity::new(dvector![2.0, 0.0], DMatrix::identity(2, 2), 0.0).unwrap();
        let m = GaussianMixture::new(vec![a, b], vec![0.5, 0.5]).unwrap();
        assert!((mixture_distance(&dvector![0.0, 0.0], &m).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_product_counts() {
        let p = AggregatorParams::average(1);
        let a = union(
            &[g(dvector![0.0], 1.0).into(), g(dvector![1.0], 1.0).into()],
            &p,
        )
        .unwrap();
        let b = union(
            &[
                g(dvector![2.0], 1.0).into(),
                g(dvector![3.0], 1.0).into(),
                g(dvector![4.0], 1.0).into(),
            ],
            &p,
        )
        .unwrap();
        let out = mixture_product(&a, &b, &p).unwrap();
        assert_eq!(out.len(), 6);
        assert!((out.components()[5].mean()[0] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn capping_drops_lightest_and_renormalizes() {
        let comps: Vec<_> = (0..4).map(|i| g(dvector![i as f64], 1.0)).collect();
        let m = GaussianMixture::new(comps, vec![0.1, 0.4, 0.1, 0.4]).unwrap();
        let (capped, kept) = cap_components(&m, 3).unwrap();
        assert_eq!(kept, vec![0, 1, 3]);
        assert!((capped.weights()[0] - 1.0 / 9.0).abs() < 1e-12);
        assert!(capped.is_well_formed());
    }
}
