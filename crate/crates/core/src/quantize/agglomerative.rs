//! Ward-linkage hierarchical clustering via the nearest-neighbor chain.
//!
//! Cluster centroids and sizes are kept instead of a pairwise distance matrix,
//! so memory stays linear in the number of points.

use rayon::prelude::*;

use super::cluster::{ensure_reachable, Algorithm, ClusterParams, ClusteringModel, RestartTrace};
use crate::error::Result;
use crate::matrix::{ksum, sq_dist, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Merge {
    pub a: usize,
    pub b: usize,
    /// Increase in within-cluster sum of squares caused by the merge.
    pub cost: f64,
}

fn ward(ca: &[f64], sa: f64, cb: &[f64], sb: f64) -> f64 {
    sa * sb / (sa + sb) * sq_dist(ca, cb)
}

/// Full merge sequence, sorted by cost. Cluster `n + i` is created by merge `i`
/// of the returned list.
pub(crate) fn ward_merges(m: &Matrix) -> Vec<Merge> {
    let n = m.n_rows();
    let mut centroids: Vec<Vec<f64>> = m.rows().map(<[f64]>::to_vec).collect();
    let mut sizes: Vec<f64> = vec![1.0; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut chain: Vec<usize> = Vec::new();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while active.len() > 1 {
        if chain.is_empty() {
            chain.push(active[0]);
        }
        let a = *chain.last().unwrap();
        let prev = chain.len().checked_sub(2).map(|i| chain[i]);
        let (b, cost) = active
            .par_iter()
            .filter(|&&c| c != a)
            .map(|&c| (c, ward(&centroids[a], sizes[a], &centroids[c], sizes[c])))
            .reduce(
                || (usize::MAX, f64::INFINITY),
                |x, y| {
                    if y.1 < x.1 || (y.1 == x.1 && y.0 < x.0) {
                        y
                    } else {
                        x
                    }
                },
            );
        // Prefer the chain predecessor on ties so the chain terminates.
        let b = match prev {
            Some(p) if ward(&centroids[a], sizes[a], &centroids[p], sizes[p]) <= cost => p,
            _ => b,
        };
        if Some(b) == prev {
            chain.pop();
            chain.pop();
            let (sa, sb) = (sizes[a], sizes[b]);
            let merged: Vec<f64> = centroids[a]
                .iter()
                .zip(&centroids[b])
                .map(|(x, y)| (sa * x + sb * y) / (sa + sb))
                .collect();
            merges.push(Merge {
                a: a.min(b),
                b: a.max(b),
                cost: ward(&centroids[a], sa, &centroids[b], sb),
            });
            active.retain(|&c| c != a && c != b);
            active.push(centroids.len());
            centroids.push(merged);
            sizes.push(sa + sb);
        } else {
            chain.push(b);
        }
    }

    // Replay in cost order; children always precede their parent.
    let mut order: Vec<usize> = (0..merges.len()).collect();
    order.sort_by(|&x, &y| merges[x].cost.total_cmp(&merges[y].cost).then(x.cmp(&y)));
    let mut new_id = vec![0; n + merges.len()];
    (0..n).for_each(|i| new_id[i] = i);
    let mut sorted = Vec::with_capacity(merges.len());
    for (pos, &i) in order.iter().enumerate() {
        let mg = merges[i];
        let (a, b) = (new_id[mg.a], new_id[mg.b]);
        sorted.push(Merge {
            a: a.min(b),
            b: a.max(b),
            cost: mg.cost,
        });
        new_id[n + i] = n + pos;
    }
    sorted
}

/// Flat labels (first-appearance order) after applying the cheapest `n - k`
/// merges.
pub(crate) fn cut(n: usize, merges: &[Merge], k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut rep: Vec<usize> = (0..n).collect();
    for mg in merges.iter().take(n.saturating_sub(k)) {
        let (ra, rb) = (find(&mut parent, rep[mg.a]), find(&mut parent, rep[mg.b]));
        parent[rb] = ra;
        rep.push(ra);
    }
    let mut label_of = std::collections::HashMap::new();
    (0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            let next = label_of.len();
            *label_of.entry(r).or_insert(next)
        })
        .collect()
}

pub(crate) fn fit(m: &Matrix, k: usize, seed: u64) -> Result<ClusteringModel> {
    let merges = ward_merges(m);
    let labels = cut(m.n_rows(), &merges, k);
    let d = m.n_cols();
    let mut sums = vec![0.0; k * d];
    let mut sizes = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        for (s, x) in sums[l * d..(l + 1) * d].iter_mut().zip(m.row(i)) {
            *s += x;
        }
    }
    for (l, &s) in sizes.iter().enumerate() {
        sums[l * d..(l + 1) * d].iter_mut().for_each(|v| *v /= s as f64);
    }
    let mut centroids = Matrix::from_vec(k, d, sums)?;
    let (_, dists) = ensure_reachable(m, &mut centroids)?;
    let objective = ksum(dists);
    Ok(ClusteringModel {
        algorithm: Algorithm::Agglomerative,
        k,
        seed,
        objective,
        params: ClusterParams::Centroids { centroids },
        restarts: vec![RestartTrace {
            seed,
            objective,
            iterations: merges.len(),
            converged: true,
            history: vec![objective],
        }],
    })
}
