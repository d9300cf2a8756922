use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::GaussianDensity;
use crate::error::{check_dim, Error, Result};

/// How mixture weights are produced from component parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorMode {
    /// One shared linear scorer, softmax across components.
    Attention,
    /// Uniform weights, no parameters.
    Average,
    /// Two-layer tanh scorer with hidden width `2d`, softmax across components.
    #[serde(rename = "mlp", alias = "scorer")]
    Scorer,
}

impl AggregatorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorMode::Attention => "attention",
            AggregatorMode::Average => "average",
            AggregatorMode::Scorer => "mlp",
        }
    }
}

impl std::str::FromStr for AggregatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(AggregatorMode::Attention),
            "average" => Ok(AggregatorMode::Average),
            "mlp" | "scorer" => Ok(AggregatorMode::Scorer),
            other => Err(Error::InvalidParameter(format!(
                "unknown aggregator `{other}` (expected attention, average or mlp)"
            ))),
        }
    }
}

impl std::fmt::Display for AggregatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Learnable parameters of the mixture-weight scorer, stored flat.
///
/// Layouts, with `f` the feature length and `h = 2d`:
/// - attention: `[w (f), b]`
/// - scorer: `[W₁ (h×f, row-major), b₁ (h), w₂ (h), b₂]`
/// - average: empty
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    mode: AggregatorMode,
    dim: usize,
    params: Vec<f64>,
}

/// Per-component feature: the mean followed by the upper triangle of the
/// precision (row-major, diagonal included). The precision is used instead of
/// the raw factor because composed components have non-unique factors.
pub fn component_feature(mean: &DVector<f64>, precision: &DMatrix<f64>) -> Vec<f64> {
    let d = mean.len();
    let mut f = Vec::with_capacity(AggregatorParams::feature_len(d));
    f.extend(mean.iter().copied());
    for i in 0..d {
        for j in i..d {
            f.push(precision[(i, j)]);
        }
    }
    f
}

impl AggregatorParams {
    pub fn feature_len(dim: usize) -> usize {
        dim + dim * (dim + 1) / 2
    }

    pub fn hidden_len(dim: usize) -> usize {
        2 * dim
    }

    pub fn param_count(mode: AggregatorMode, dim: usize) -> usize {
        let f = Self::feature_len(dim);
        let h = Self::hidden_len(dim);
        match mode {
            AggregatorMode::Attention => f + 1,
            AggregatorMode::Average => 0,
            AggregatorMode::Scorer => h * f + h + h + 1,
        }
    }

    pub fn zeros(mode: AggregatorMode, dim: usize) -> Self {
        AggregatorParams {
            mode,
            dim,
            params: vec![0.0; Self::param_count(mode, dim)],
        }
    }

    pub fn average(dim: usize) -> Self {
        Self::zeros(AggregatorMode::Average, dim)
    }

    /// Attention starts at zero (uniform weights). The scorer's layers are
    /// drawn with fan-in scaling, since a zero hidden layer has zero gradient.
    pub fn init<R: Rng + ?Sized>(mode: AggregatorMode, dim: usize, rng: &mut R) -> Self {
        let mut out = Self::zeros(mode, dim);
        if mode == AggregatorMode::Scorer {
            let f = Self::feature_len(dim);
            let h = Self::hidden_len(dim);
            let w1 = Normal::new(0.0, 1.0 / (f as f64).sqrt()).expect("valid std");
            let w2 = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("valid std");
            for v in &mut out.params[..h * f] {
                *v = w1.sample(rng);
            }
            for v in &mut out.params[h * f + h..h * f + 2 * h] {
                *v = w2.sample(rng);
            }
        }
        out
    }

    pub fn from_parts(mode: AggregatorMode, dim: usize, params: Vec<f64>) -> Result<Self> {
        check_dim(Self::param_count(mode, dim), params.len())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "aggregator parameters must be finite".into(),
            ));
        }
        Ok(AggregatorParams { mode, dim, params })
    }

    pub fn mode(&self) -> AggregatorMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Unnormalized score of one component feature.
    pub fn score(&self, feature: &[f64]) -> f64 {
        let f = feature.len();
        match self.mode {
            AggregatorMode::Average => 0.0,
            AggregatorMode::Attention => {
                let (w, b) = self.params.split_at(f);
                dot(w, feature) + b[0]
            }
            AggregatorMode::Scorer => {
                let h = Self::hidden_len(self.dim);
                let (w1, rest) = self.params.split_at(h * f);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                let mut s = b2[0];
                for k in 0..h {
                    let z = dot(&w1[k * f..(k + 1) * f], feature) + b1[k];
                    s += w2[k] * z.tanh();
                }
                s
            }
        }
    }

    /// Backpropagates `upstream = ∂ℓ/∂score` into the feature and parameter
    /// gradients (both accumulated in place).
    pub fn score_backward(
        &self,
        feature: &[f64],
        upstream: f64,
        d_feature: &mut [f64],
        d_params: &mut [f64],
    ) {
        let f = feature.len();
        match self.mode {
            AggregatorMode::Average => {}
            AggregatorMode::Attention => {
                let (w, _) = self.params.split_at(f);
                for i in 0..f {
                    d_feature[i] += upstream * w[i];
                    d_params[i] += upstream * feature[i];
                }
                d_params[f] += upstream;
            }
            AggregatorMode::Scorer => {
                let h = Self::hidden_len(self.dim);
                let (w1, rest) = self.params.split_at(h * f);
                let (b1, rest) = rest.split_at(h);
                let (w2, _) = rest.split_at(h);
                for k in 0..h {
                    let row = &w1[k * f..(k + 1) * f];
                    let a = (dot(row, feature) + b1[k]).tanh();
                    // ∂s/∂w₂ₖ = a, ∂s/∂zₖ = w₂ₖ·(1 − a²)
                    d_params[h * f + h + k] += upstream * a;
                    let dz = upstream * w2[k] * (1.0 - a * a);
                    d_params[h * f + k] += dz;
                    for i in 0..f {
                        d_params[k * f + i] += dz * feature[i];
                        d_feature[i] += dz * row[i];
                    }
                }
                d_params[h * f + 2 * h] += upstream;
            }
        }
    }

    /// Mixture weights for a list of component features: uniform in average
    /// mode, otherwise the softmax of the scores.
    pub fn weights_from_features(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot weight an empty component list".into(),
            ));
        }
        let n = features.len();
        if self.mode == AggregatorMode::Average {
            return Ok(vec![1.0 / n as f64; n]);
        }
        let expected = Self::feature_len(self.dim);
        for f in features {
            check_dim(expected, f.len())?;
        }
        let scores: Vec<f64> = features.iter().map(|f| self.score(f)).collect();
        softmax(&scores)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax. Weights that would underflow are floored at
/// the smallest normal float so every weight stays strictly positive.
fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite mixture score".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v = (*v / total).max(f64::MIN_POSITIVE);
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Given softmax outputs `φ` and `∂ℓ/∂φ`, returns `∂ℓ/∂score`.
pub fn softmax_backward(weights: &[f64], d_weights: &[f64]) -> Vec<f64> {
    let mean: f64 = weights.iter().zip(d_weights).map(|(w, g)| w * g).sum();
    weights
        .iter()
        .zip(d_weights)
        .map(|(w, g)| w * (g - mean))
        .collect()
}

/// Weights `φ` over a component list.
pub fn aggregate_weights(
    components: &[GaussianDensity],
    params: &AggregatorParams,
) -> Result<Vec<f64>> {
    if params.mode() == AggregatorMode::Average {
        return params.weights_from_features(&vec![Vec::new(); components.len()]);
    }
    let features: Vec<Vec<f64>> = components
        .iter()
        .map(|c| {
            check_dim(params.dim(), c.dim())?;
            Ok(component_feature(c.mean(), &c.precision()))
        })
        .collect::<Result<_>>()?;
    params.weights_from_features(&features)
}
