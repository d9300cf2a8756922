//! Two-dimensional projection of densities for external plotting.
//!
//! Means are projected onto the two leading principal axes of the selected
//! means. Each item's 2×2 covariance is the pseudo-inverse of its precision
//! restricted to those axes, `(VᵀPV)⁺`.

use std::path::Path;

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::Serialize;

/// One density to project.
#[derive(Debug, Clone)]
pub struct VizItem {
    pub name: String,
    pub kind: &'static str,
    pub component: usize,
    pub weight: f64,
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VizRow {
    pub item: String,
    pub kind: &'static str,
    pub component: usize,
    pub weight: f64,
    pub x: f64,
    pub y: f64,
    pub cov_xx: f64,
    pub cov_xy: f64,
    pub cov_yy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Projection {
    pub center: Vec<f64>,
    /// Two orthonormal axes, each of length `d`.
    pub axes: [Vec<f64>; 2],
    /// Variance of the means along each axis.
    pub explained_variance: [f64; 2],
    pub rows: Vec<VizRow>,
}

/// Principal axes of the rows of `points` (n × d), largest variance first.
/// Each axis is signed so that its largest-magnitude entry is positive.
pub fn principal_axes(points: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, Vec<f64>) {
    let n = points.nrows() as f64;
    let center = points.row_mean().transpose();
    let mut centered = points.clone();
    for mut row in centered.row_iter_mut() {
        row -= center.transpose();
    }
    let cov = centered.tr_mul(&centered) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = eig.eigenvectors.select_columns(order.iter());
    for mut col in axes.column_iter_mut() {
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    (center, axes, values)
}

pub fn project(items: &[VizItem]) -> anyhow::Result<Projection> {
    if items.len() < 2 {
        bail!(gaussq_core::Error::InvalidParameter(format!(
            "need at least 2 items to project, got {}",
            items.len()
        )));
    }
    let d = items[0].mean.len();
    if d < 2 {
        bail!(gaussq_core::Error::InvalidParameter(
            "a 2-D projection needs embeddings of dimension at least 2".into()
        ));
    }
    let points = DMatrix::from_fn(items.len(), d, |i, j| items[i].mean[j]);
    let (center, axes, values) = principal_axes(&points);
    let v = axes.columns(0, 2).into_owned();
    let rows = items
        .iter()
        .map(|it| {
            let p = it.mean.clone() - &center;
            let xy = v.tr_mul(&p);
            let projected = v.tr_mul(&(&it.precision * &v));
            let sym = Matrix2::new(
                projected[(0, 0)],
                0.5 * (projected[(0, 1)] + projected[(1, 0)]),
                0.5 * (projected[(0, 1)] + projected[(1, 0)]),
                projected[(1, 1)],
            );
            let cov = sym
                .pseudo_inverse(1e-12)
                .map_err(|e| anyhow::anyhow!(gaussq_core::Error::Numeric(e.to_string())))?;
            Ok(VizRow {
                item: it.name.clone(),
                kind: it.kind,
                component: it.component,
                weight: it.weight,
                x: xy[0],
                y: xy[1],
                cov_xx: cov[(0, 0)],
                cov_xy: cov[(0, 1)],
                cov_yy: cov[(1, 1)],
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Projection {
        center: center.iter().copied().collect(),
        axes: [
            v.column(0).iter().copied().collect(),
            v.column(1).iter().copied().collect(),
        ],
        explained_variance: [values[0], values[1]],
        rows,
    })
}

pub fn write_csv(path: &Path, projection: &Projection) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in &projection.rows {
        w.serialize(row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(name: &str, mean: &[f64], precision: DMatrix<f64>) -> VizItem {
        VizItem {
            name: name.into(),
            kind: "entity",
            component: 0,
            weight: 1.0,
            mean: DVector::from_column_slice(mean),
            precision,
        }
    }

    #[test]
    fn two_entities_give_orthonormal_axes() {
        let p = DMatrix::identity(3, 3) * 2.0;
        let proj = project(&[item("a", &[1.0, 0.0, 0.0], p.clone()), item("b", &[0.0, 1.0, 0.0], p)]).unwrap();
        assert_eq!(proj.rows.len(), 2);
        let a = DVector::from_vec(proj.axes[0].clone());
        let b = DVector::from_vec(proj.axes[1].clone());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((b.norm() - 1.0).abs() < 1e-12);
        assert!(a.dot(&b).abs() < 1e-12);
        // isotropic precision 2 gives projected covariance I/2
        for r in &proj.rows {
            assert!((r.cov_xx - 0.5).abs() < 1e-12 && (r.cov_yy - 0.5).abs() < 1e-12);
            assert!(r.cov_xy.abs() < 1e-12);
        }
        // the two points sit symmetric about the center on the first axis
        assert!((proj.rows[0].x + proj.rows[1].x).abs() < 1e-12);
        assert!(((proj.rows[0].x - proj.rows[1].x).abs() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn one_item_is_rejected() {
        let p = DMatrix::identity(2, 2);
        assert!(project(&[item("a", &[0.0, 0.0], p)]).is_err());
    }
}
