//! Closed-form gradients of the Mahalanobis distance and of the Gaussian
//! product. Precisions are treated as unconstrained matrices; `factor_grad`
//! maps a precision gradient back onto `L` through `P = L·Lᵀ + ε·I`.

use nalgebra::{DMatrix, DVector};

use super::{solve_spd, DenseGaussian, GaussianDensity};
use crate::error::{check_dim, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisGrad {
    pub query_mean: DVector<f64>,
    pub query_factor: DMatrix<f64>,
    pub candidate_mean: DVector<f64>,
}

/// With `δ = μ_q − μ_c`: `∂d/∂μ_q = 2Pδ`, `∂d/∂μ_c = −2Pδ`, `∂d/∂L = 2δδᵀL`.
pub fn grad_mahalanobis(
    candidate_mean: &DVector<f64>,
    query: &GaussianDensity,
) -> Result<MahalanobisGrad> {
    check_dim(query.dim(), candidate_mean.len())?;
    let delta = query.mean() - candidate_mean;
    let l = query.factor();
    let p_delta = l * l.tr_mul(&delta) + &delta * query.jitter();
    let query_factor = &delta * (delta.transpose() * l) * 2.0;
    Ok(MahalanobisGrad {
        query_mean: &p_delta * 2.0,
        candidate_mean: &p_delta * -2.0,
        query_factor,
    })
}

/// Gradient of a scalar with respect to a (mean, precision) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionGrad {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl PrecisionGrad {
    pub fn zeros(d: usize) -> Self {
        PrecisionGrad {
            mean: DVector::zeros(d),
            precision: DMatrix::zeros(d, d),
        }
    }

    pub fn accumulate(&mut self, other: &PrecisionGrad) {
        self.mean += &other.mean;
        self.precision += &other.precision;
    }
}

/// `∂ℓ/∂L = (G + Gᵀ)·L` for `G = ∂ℓ/∂P`.
pub fn factor_grad(d_precision: &DMatrix<f64>, factor: &DMatrix<f64>) -> DMatrix<f64> {
    (d_precision + d_precision.transpose()) * factor
}

/// Vector-Jacobian product through `P₃ = P₁ + P₂`, `P₃μ₃ = P₁μ₁ + P₂μ₂`.
///
/// The solve is differentiated by the adjoint method: `λ = P₃⁻ᵀ·ḡ_μ`, the
/// right-hand side receives `λ` and `P₃` receives `−λμ₃ᵀ`.
pub fn product_vjp(
    g1: &DenseGaussian,
    g2: &DenseGaussian,
    out: &DenseGaussian,
    upstream: &PrecisionGrad,
) -> Result<(PrecisionGrad, PrecisionGrad)> {
    check_dim(g1.dim(), g2.dim())?;
    check_dim(g1.dim(), out.dim())?;
    let lambda = if upstream.mean.iter().all(|v| *v == 0.0) {
        DVector::zeros(out.dim())
    } else {
        solve_spd(&out.precision.transpose(), &upstream.mean)?
    };
    let d_out_precision = &upstream.precision - &lambda * out.mean.transpose();
    let side = |g: &DenseGaussian| PrecisionGrad {
        mean: g.precision.tr_mul(&lambda),
        precision: &d_out_precision + &lambda * g.mean.transpose(),
    };
    Ok((side(g1), side(g2)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductGrad {
    pub mean1: DVector<f64>,
    pub factor1: DMatrix<f64>,
    pub mean2: DVector<f64>,
    pub factor2: DMatrix<f64>,
}

/// Gradients of a scalar function of `product(g1, g2)` with respect to both
/// operands' means and factors, given the upstream gradient on the product's
/// (mean, precision).
pub fn grad_through_product(
    upstream: &PrecisionGrad,
    g1: &GaussianDensity,
    g2: &GaussianDensity,
) -> Result<ProductGrad> {
    let d1 = g1.to_dense();
    let d2 = g2.to_dense();
    let out = d1.product(&d2)?;
    let (a, b) = product_vjp(&d1, &d2, &out, upstream)?;
    Ok(ProductGrad {
        factor1: factor_grad(&a.precision, g1.factor()),
        mean1: a.mean,
        factor2: factor_grad(&b.precision, g2.factor()),
        mean2: b.mean,
    })
}
