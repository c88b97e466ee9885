use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

pub const DEFAULT_TARGET_RATIO: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// r×d, orthonormal rows, decreasing variance.
    pub components: Matrix,
    pub explained_variance_ratio: Vec<f64>,
    pub target_ratio: f64,
}

/// Keeps the smallest number of leading principal components whose cumulative
/// explained-variance ratio reaches `target_ratio`.
pub fn fit_pca(m: &Matrix, target_ratio: f64) -> Result<PcaModel> {
    let (n, d) = (m.n_rows(), m.n_cols());
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 rows, got {n}")));
    }
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::invalid(format!(
            "target ratio must be in (0, 1], got {target_ratio}"
        )));
    }
    if !m.all_finite() {
        return Err(Error::Numeric("PCA input contains non-finite values".into()));
    }
    let mut mean = vec![0.0; d];
    for row in m.rows() {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| m.get(i, j) - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let var: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = var.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("PCA input has zero variance".into()));
    }
    let ratios: Vec<f64> = var.iter().map(|v| v / total).collect();
    let mut r = ratios.len();
    let mut cum = 0.0;
    for (i, x) in ratios.iter().enumerate() {
        cum += x;
        if cum >= target_ratio {
            r = i + 1;
            break;
        }
    }
    let mut comps = Vec::with_capacity(r * d);
    for &i in &order[..r] {
        let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
        // Fix the sign so the largest-magnitude coordinate is positive.
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |b, (j, v)| if v.abs() > b.1.abs() { (j, *v) } else { b });
        if pivot.1 < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        comps.extend(row);
    }
    Ok(PcaModel {
        mean,
        components: Matrix::from_vec(r, d, comps)?,
        explained_variance_ratio: ratios[..r].to_vec(),
        target_ratio,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.n_rows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) · componentsᵀ` for every row.
    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        if m.n_cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: m.n_cols(),
            });
        }
        let r = self.n_components();
        let mut out = Vec::with_capacity(m.n_rows() * r);
        let mut centered = vec![0.0; self.input_dim()];
        for row in m.rows() {
            for ((c, x), mu) in centered.iter_mut().zip(row).zip(&self.mean) {
                *c = x - mu;
            }
            out.extend(self.components.rows().map(|comp| dot(&centered, comp)));
        }
        Matrix::from_vec(m.n_rows(), r, out)
    }

    /// Maps projected coordinates back to the input space.
    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix> {
        let r = self.n_components();
        if z.n_cols() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: z.n_cols(),
            });
        }
        let d = self.input_dim();
        let mut out = Vec::with_capacity(z.n_rows() * d);
        for row in z.rows() {
            let mut x = self.mean.clone();
            for (coef, comp) in row.iter().zip(self.components.rows()) {
                for (xi, ci) in x.iter_mut().zip(comp) {
                    *xi += coef * ci;
                }
            }
            out.extend(x);
        }
        Matrix::from_vec(z.n_rows(), d, out)
    }
}
