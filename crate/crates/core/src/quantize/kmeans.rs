//! Lloyd's algorithm with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cluster::{
    counts, ensure_reachable, nearest, reseed_empty, Algorithm, ClusterParams, ClusteringModel,
    RestartTrace,
};
use crate::error::{Error, Result};
use crate::matrix::{ksum, sq_dist, Matrix};

pub(crate) fn restart_seeds(seed: u64, restarts: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..restarts).map(|_| rng.random()).collect()
}

/// D²-weighted seeding. Requires at least `k` distinct rows.
pub(crate) fn kmeans_pp(m: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let n = m.n_rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist(m.row(i), m.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total = ksum(d2.iter().copied());
        if !(total > 0.0) {
            return Err(Error::Numeric("k-means++ ran out of distinct points".into()));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let next = pick.expect("positive total implies a candidate");
        chosen.push(next);
        let c = m.row(next);
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(m.row(i), c);
            if nd < *d {
                *d = nd;
            }
        });
    }
    Ok(m.select_rows(&chosen))
}

/// Means of the points in each cluster, accumulated in row order.
fn update_means(m: &Matrix, labels: &[usize], centroids: &mut Matrix, sizes: &[usize]) {
    let d = m.n_cols();
    let mut sums = vec![0.0; centroids.n_rows() * d];
    for (i, &l) in labels.iter().enumerate() {
        for (s, x) in sums[l * d..(l + 1) * d].iter_mut().zip(m.row(i)) {
            *s += x;
        }
    }
    for (j, &size) in sizes.iter().enumerate() {
        if size > 0 {
            let row = centroids.row_mut(j);
            for (c, s) in row.iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *c = s / size as f64;
            }
        }
    }
}

pub(crate) struct LloydRun {
    pub centroids: Matrix,
    #[cfg_attr(not(test), allow(dead_code))]
    pub labels: Vec<usize>,
    pub trace: RestartTrace,
}

pub(crate) fn lloyd(m: &Matrix, mut centroids: Matrix, iters: usize, seed: u64) -> Result<LloydRun> {
    let k = centroids.n_rows();
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..iters {
        iterations += 1;
        let (new_labels, dists) = nearest(m, &centroids);
        history.push(ksum(dists.iter().copied()));
        let changed = new_labels != labels;
        labels = new_labels;
        let sizes = counts(&labels, k);
        let empty: Vec<usize> = (0..k).filter(|&j| sizes[j] == 0).collect();
        if !changed && empty.is_empty() {
            converged = true;
            break;
        }
        update_means(m, &labels, &mut centroids, &sizes);
        if !empty.is_empty() {
            reseed_empty(m, &mut centroids, &empty, &dists);
        }
    }
    if !converged {
        let (l, dists) = ensure_reachable(m, &mut centroids)?;
        labels = l;
        history.push(ksum(dists.iter().copied()));
    }
    let objective = *history.last().expect("at least one iteration");
    Ok(LloydRun {
        centroids,
        labels,
        trace: RestartTrace {
            seed,
            objective,
            iterations,
            converged,
            history,
        },
    })
}

pub(crate) fn fit(
    m: &Matrix,
    k: usize,
    iters: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusteringModel> {
    let runs: Vec<Result<LloydRun>> = restart_seeds(seed, restarts)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let init = kmeans_pp(m, k, &mut rng)?;
            lloyd(m, init, iters, s)
        })
        .collect();
    let runs: Vec<LloydRun> = runs.into_iter().collect::<Result<_>>()?;
    let best = best_index(runs.iter().map(|r| r.trace.objective));
    let traces = runs.iter().map(|r| r.trace.clone()).collect();
    let kept = runs.into_iter().nth(best).expect("non-empty");
    Ok(ClusteringModel {
        algorithm: Algorithm::Kmeans,
        k,
        seed,
        objective: kept.trace.objective,
        params: ClusterParams::Centroids {
            centroids: kept.centroids,
        },
        restarts: traces,
    })
}

/// Index of the minimum, ties to the first.
pub(crate) fn best_index(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}
