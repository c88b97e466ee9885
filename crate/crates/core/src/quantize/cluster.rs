use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{agglomerative, gmm, kmeans};
use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Kmeans,
    Gmm,
    Agglomerative,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Kmeans => "kmeans",
            Algorithm::Gmm => "gmm",
            Algorithm::Agglomerative => "agglomerative",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Algorithm::Kmeans),
            "gmm" => Ok(Algorithm::Gmm),
            "agglomerative" => Ok(Algorithm::Agglomerative),
            other => Err(Error::invalid(format!("unknown clustering algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub algorithm: Algorithm,
    pub k: usize,
    pub iters: usize,
    pub restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            algorithm: Algorithm::Kmeans,
            k: 500,
            iters: 500,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClusterParams {
    Centroids {
        centroids: Matrix,
    },
    Gaussian {
        weights: Vec<f64>,
        means: Matrix,
        covariances: Vec<Matrix>,
    },
}

/// Per-restart fitting record. `history` holds the objective after every
/// iteration (within-cluster sum of squares for k-means, negative
/// log-likelihood for GMM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringModel {
    pub algorithm: Algorithm,
    pub k: usize,
    pub seed: u64,
    /// Objective of the kept restart; lower is better for every algorithm.
    pub objective: f64,
    pub params: ClusterParams,
    pub restarts: Vec<RestartTrace>,
}

pub fn fit_clusters(m: &Matrix, config: &ClusterConfig, seed: u64) -> Result<ClusteringModel> {
    let k = config.k;
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if m.n_rows() < k {
        return Err(Error::invalid(format!(
            "{} points cannot form {k} clusters",
            m.n_rows()
        )));
    }
    if m.n_cols() == 0 {
        return Err(Error::invalid("cannot cluster zero-dimensional points"));
    }
    if !m.all_finite() {
        return Err(Error::Numeric("clustering input contains non-finite values".into()));
    }
    if config.restarts == 0 || config.iters == 0 {
        return Err(Error::invalid("iters and restarts must be positive"));
    }
    match config.algorithm {
        Algorithm::Kmeans => {
            require_distinct(m, k)?;
            kmeans::fit(m, k, config.iters, config.restarts, seed)
        }
        Algorithm::Gmm => gmm::fit(m, k, config.iters, config.restarts, seed),
        Algorithm::Agglomerative => {
            require_distinct(m, k)?;
            agglomerative::fit(m, k, seed)
        }
    }
}

fn require_distinct(m: &Matrix, k: usize) -> Result<()> {
    let mut seen = HashSet::new();
    for row in m.rows() {
        seen.insert(row.iter().map(|v| v.to_bits()).collect::<Vec<u64>>());
        if seen.len() >= k {
            return Ok(());
        }
    }
    Err(Error::invalid(format!(
        "only {} distinct points, fewer than k = {k}",
        seen.len()
    )))
}

impl ClusteringModel {
    pub fn dim(&self) -> usize {
        match &self.params {
            ClusterParams::Centroids { centroids } => centroids.n_cols(),
            ClusterParams::Gaussian { means, .. } => means.n_cols(),
        }
    }

    /// Nearest centroid (ties to the lowest index) or maximal posterior
    /// responsibility for mixtures.
    pub fn assign(&self, m: &Matrix) -> Result<Vec<usize>> {
        if m.n_cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: m.n_cols(),
            });
        }
        match &self.params {
            ClusterParams::Centroids { centroids } => Ok(nearest(m, centroids).0),
            ClusterParams::Gaussian {
                weights,
                means,
                covariances,
            } => gmm::assign(m, weights, means, covariances),
        }
    }
}

pub fn assign(model: &ClusteringModel, m: &Matrix) -> Result<Vec<usize>> {
    model.assign(m)
}

/// Labels and squared distances to the nearest centroid.
pub(crate) fn nearest(m: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    (0..m.n_rows())
        .into_par_iter()
        .map(|i| {
            let x = m.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.rows().enumerate() {
                let d = sq_dist(x, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            (best, best_d)
        })
        .unzip()
}

pub(crate) fn counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &l in labels {
        c[l] += 1;
    }
    c
}

/// Moves every empty centroid onto a point far from its own centroid, taking
/// points in order of decreasing distance and never reusing a position.
pub(crate) fn reseed_empty(
    m: &Matrix,
    centroids: &mut Matrix,
    empty: &[usize],
    dists: &[f64],
) {
    let mut order: Vec<usize> = (0..m.n_rows()).collect();
    order.sort_by(|&a, &b| dists[b].partial_cmp(&dists[a]).unwrap().then(a.cmp(&b)));
    let mut used: Vec<&[f64]> = Vec::new();
    let mut it = order.into_iter();
    for &c in empty {
        for i in it.by_ref() {
            let x = m.row(i);
            if used.iter().any(|u| *u == x) {
                continue;
            }
            used.push(x);
            centroids.row_mut(c).copy_from_slice(x);
            break;
        }
    }
}

/// Reseeds until every centroid wins at least one training point. Returns the
/// final labels and distances.
pub(crate) fn ensure_reachable(
    m: &Matrix,
    centroids: &mut Matrix,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let k = centroids.n_rows();
    for _ in 0..=k {
        let (labels, dists) = nearest(m, centroids);
        let empty: Vec<usize> = counts(&labels, k)
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(j, _)| j)
            .collect();
        if empty.is_empty() {
            return Ok((labels, dists));
        }
        reseed_empty(m, centroids, &empty, &dists);
    }
    Err(Error::Numeric(
        "could not make every cluster reachable on the training set".into(),
    ))
}
