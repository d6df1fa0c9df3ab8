//! Spectral norms for the Lipschitz bounds.

use nalgebra::DMatrix;
use ndarray::Array2;

/// Relative slack added to computed singular values so the result stays an
/// upper bound under rounding.
const SVD_SLACK: f64 = 1e-12;

/// Largest singular value with its left and right singular vectors.
pub struct TopSingular {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn top_singular(w: &Array2<f64>) -> TopSingular {
    let (r, c) = w.dim();
    let m = DMatrix::from_fn(r, c, |i, j| w[[i, j]]);
    let svd = m.svd(true, true);
    let (k, &sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    let u = svd.u.as_ref().expect("requested u").column(k).iter().copied().collect();
    let v = svd
        .v_t
        .as_ref()
        .expect("requested v_t")
        .row(k)
        .iter()
        .copied()
        .collect();
    TopSingular {
        sigma: sigma * (1.0 + SVD_SLACK),
        u,
        v,
    }
}

pub fn spectral_norm(w: &Array2<f64>) -> f64 {
    let (r, c) = w.dim();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let m = DMatrix::from_fn(r, c, |i, j| w[[i, j]]);
    m.singular_values().iter().copied().fold(0.0, f64::max) * (1.0 + SVD_SLACK)
}

pub fn spectral_norm_rows(rows: &[Vec<f64>]) -> f64 {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return 0.0;
    }
    spectral_norm(&Array2::from_shape_fn((r, c), |(i, j)| rows[i][j]))
}
