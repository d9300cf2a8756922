//! Gaussian densities with factored precision, their mixtures, and the
//! closed-form operators used to answer queries.
//!
//! A density stores its mean `μ` and a `d × r` factor `L`; the precision is
//! `L·Lᵀ + ε·I`. Covariances are never formed. Operators whose precision is a
//! sum of operand precisions (translation and intersection) concatenate the
//! operand factors and add the jitters, so the result reproduces the exact
//! sum. Factors wider than `d` columns are re-compressed to `d × d` through a
//! thin QR decomposition, which leaves `L·Lᵀ` unchanged.

mod aggregator;
mod grad;
mod mixture;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub use aggregator::{
    aggregate_weights, component_feature, softmax_backward, AggregatorMode, AggregatorParams,
};
pub use grad::{
    factor_grad, grad_mahalanobis, grad_through_product, product_vjp, MahalanobisGrad,
    PrecisionGrad, ProductGrad,
};
pub use mixture::{
    cap_components, mixture_distance, mixture_intersect, mixture_product, mixture_translate,
    union, GaussianMixture,
};
pub(crate) use mixture::heaviest;

/// Jitter added to every precision unless configured otherwise.
pub const DEFAULT_JITTER: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, factor: DMatrix<f64>, jitter: f64) -> Result<Self> {
        check_dim(mean.len(), factor.nrows())?;
        if mean.is_empty() {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if factor.ncols() == 0 {
            return Err(Error::InvalidParameter("factor needs at least one column".into()));
        }
        if !jitter.is_finite() || jitter < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "jitter must be finite and non-negative, got {jitter}"
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mean has non-finite entries".into()));
        }
        if factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("factor has non-finite entries".into()));
        }
        Ok(GaussianDensity {
            mean,
            factor,
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of factor columns.
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(crate) fn mean_mut(&mut self) -> &mut DVector<f64> {
        &mut self.mean
    }

    pub(crate) fn factor_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.factor
    }

    /// `L·Lᵀ + ε·I`, symmetrized so that round-off cannot break symmetry.
    pub fn precision(&self) -> DMatrix<f64> {
        let mut p = &self.factor * self.factor.transpose();
        for i in 0..p.nrows() {
            p[(i, i)] += self.jitter;
            for j in 0..i {
                let avg = 0.5 * (p[(i, j)] + p[(j, i)]);
                p[(i, j)] = avg;
                p[(j, i)] = avg;
            }
        }
        p
    }

    pub fn to_dense(&self) -> DenseGaussian {
        DenseGaussian {
            mean: self.mean.clone(),
            precision: self.precision(),
        }
    }

    /// Checks every type invariant, including positive definiteness of the
    /// precision when the jitter is positive.
    pub fn is_well_formed(&self) -> bool {
        if self.mean.iter().any(|v| !v.is_finite())
            || self.factor.iter().any(|v| !v.is_finite())
            || !self.jitter.is_finite()
            || self.jitter < 0.0
            || self.factor.nrows() != self.mean.len()
        {
            return false;
        }
        self.jitter == 0.0 || self.precision().cholesky().is_some()
    }

    /// Lossy rank cap: re-factor through a thin QR and keep the `max_cols`
    /// columns of largest norm. Equal norms keep the lower column index.
    pub fn truncated(&self, max_cols: usize) -> Result<GaussianDensity> {
        if max_cols == 0 {
            return Err(Error::InvalidParameter("rank cap must be at least 1".into()));
        }
        let orth = orthogonal_factor(&self.factor);
        if orth.ncols() <= max_cols {
            return GaussianDensity::new(self.mean.clone(), orth, self.jitter);
        }
        let mut order: Vec<usize> = (0..orth.ncols()).collect();
        let norms: Vec<f64> = (0..orth.ncols()).map(|j| orth.column(j).norm()).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        order.truncate(max_cols);
        order.sort_unstable();
        let kept = orth.select_columns(order.iter());
        GaussianDensity::new(self.mean.clone(), kept, self.jitter)
    }
}

/// Thin QR of `Lᵀ`: returns `Rᵀ` with `Rᵀ·R = L·Lᵀ` and at most `d` columns.
fn orthogonal_factor(factor: &DMatrix<f64>) -> DMatrix<f64> {
    factor.transpose().qr().r().transpose()
}

/// Concatenates two factors column-wise, compressing back to `d` columns when
/// the concatenation grows wider than the dimension.
fn sum_factor(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let mut cat = DMatrix::zeros(d, a.ncols() + b.ncols());
    cat.columns_mut(0, a.ncols()).copy_from(a);
    cat.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    if cat.ncols() > d {
        orthogonal_factor(&cat)
    } else {
        cat
    }
}

/// Mean plus explicit precision matrix. Used by the differentiable forward
/// pass and as a reference for the factored operators.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGaussian {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl DenseGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn translate(&self, rel: &DenseGaussian) -> Result<DenseGaussian> {
        check_dim(self.dim(), rel.dim())?;
        Ok(DenseGaussian {
            mean: &self.mean + &rel.mean,
            precision: &self.precision + &rel.precision,
        })
    }

    pub fn product(&self, other: &DenseGaussian) -> Result<DenseGaussian> {
        check_dim(self.dim(), other.dim())?;
        let precision = &self.precision + &other.precision;
        let rhs = &self.precision * &self.mean + &other.precision * &other.mean;
        let mean = solve_spd(&precision, &rhs)?;
        Ok(DenseGaussian { mean, precision })
    }

    pub fn mahalanobis(&self, candidate: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), candidate.len())?;
        let delta = &self.mean - candidate;
        Ok(delta.dot(&(&self.precision * &delta)).max(0.0))
    }
}

/// Solves `A·x = b` for symmetric positive-definite `A` by Cholesky with one
/// step of iterative refinement. The residual is checked against `1e-8·‖b‖`.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a.clone().cholesky().ok_or_else(|| Error::SolveFailed {
        context: "cholesky factorization".into(),
    })?;
    let mut x = chol.solve(b);
    let r = b - a * &x;
    x += chol.solve(&r);
    let residual = (a * &x - b).norm();
    let scale = b.norm();
    if !residual.is_finite() || residual > 1e-8 * scale.max(f64::MIN_POSITIVE) && residual > 0.0 {
        return Err(Error::SolveFailed {
            context: format!("residual {residual:e} exceeds tolerance for |b| = {scale:e}"),
        });
    }
    Ok(x)
}

/// `d(μ_cand, query) = (μ_q − μ_cand)ᵀ Σ_q⁻¹ (μ_q − μ_cand)`, computed from the
/// factor as `‖Lᵀδ‖² + ε‖δ‖²`.
pub fn mahalanobis(candidate_mean: &DVector<f64>, query: &GaussianDensity) -> Result<f64> {
    check_dim(query.dim(), candidate_mean.len())?;
    let delta = query.mean() - candidate_mean;
    let projected = query.factor().tr_mul(&delta);
    Ok(projected.norm_squared() + query.jitter() * delta.norm_squared())
}

/// Translation by a relation: means add, precisions add.
pub fn translate(e: &GaussianDensity, rel: &GaussianDensity) -> Result<GaussianDensity> {
    check_dim(e.dim(), rel.dim())?;
    GaussianDensity::new(
        e.mean() + rel.mean(),
        sum_factor(e.factor(), rel.factor()),
        e.jitter() + rel.jitter(),
    )
}

/// Intersection as the product of two densities:
/// `Σ₃⁻¹ = Σ₁⁻¹ + Σ₂⁻¹` and `Σ₃⁻¹ μ₃ = Σ₁⁻¹ μ₁ + Σ₂⁻¹ μ₂`.
pub fn product(g1: &GaussianDensity, g2: &GaussianDensity) -> Result<GaussianDensity> {
    check_dim(g1.dim(), g2.dim())?;
    let p1 = g1.precision();
    let p2 = g2.precision();
    let rhs = &p1 * g1.mean() + &p2 * g2.mean();
    let mean = solve_spd(&(p1 + p2), &rhs)?;
    GaussianDensity::new(
        mean,
        sum_factor(g1.factor(), g2.factor()),
        g1.jitter() + g2.jitter(),
    )
}
