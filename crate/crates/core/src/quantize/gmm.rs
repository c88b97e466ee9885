//! Full-covariance Gaussian mixture fitted by EM.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cluster::{Algorithm, ClusterParams, ClusteringModel, RestartTrace};
use super::kmeans::{best_index, kmeans_pp, restart_seeds};
use crate::error::{Error, Result};
use crate::matrix::{ksum, Matrix};

pub const COVARIANCE_REG: f64 = 1e-6;
/// Stop when the mean per-point log-likelihood improves by less than this.
const TOL: f64 = 1e-9;

struct Component {
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

fn prepare(covariances: &[Matrix]) -> Result<Vec<Component>> {
    covariances
        .iter()
        .map(|c| {
            let d = c.n_rows();
            let m = DMatrix::from_row_slice(d, d, c.as_slice());
            let chol = Cholesky::new(m)
                .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
            Ok(Component { chol, log_norm })
        })
        .collect()
}

/// ln(w_j) + ln N(x | μ_j, Σ_j) for every component.
fn log_joint(x: &[f64], weights: &[f64], means: &Matrix, comps: &[Component]) -> Vec<f64> {
    comps
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let diff = DVector::from_iterator(x.len(), x.iter().zip(means.row(j)).map(|(a, b)| a - b));
            let y = c
                .chol
                .l_dirty()
                .solve_lower_triangular(&diff)
                .expect("cholesky factor is invertible");
            weights[j].ln() + c.log_norm - 0.5 * y.norm_squared()
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn covariance(m: &Matrix) -> Matrix {
    let (n, d) = (m.n_rows(), m.n_cols());
    let mut mean = vec![0.0; d];
    for r in m.rows() {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    for r in m.rows() {
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in 0..d {
                cov[a * d + b] += da * (r[b] - mean[b]) / n as f64;
            }
        }
    }
    for a in 0..d {
        cov[a * d + a] += COVARIANCE_REG;
    }
    Matrix::from_vec(d, d, cov).expect("square")
}

struct EmRun {
    weights: Vec<f64>,
    means: Matrix,
    covariances: Vec<Matrix>,
    trace: RestartTrace,
}

/// Returns per-point responsibilities and the total log-likelihood.
fn e_step(
    m: &Matrix,
    weights: &[f64],
    means: &Matrix,
    covs: &[Matrix],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let comps = prepare(covs)?;
    let rows: Vec<(Vec<f64>, f64)> = (0..m.n_rows())
        .into_par_iter()
        .map(|i| {
            let lj = log_joint(m.row(i), weights, means, &comps);
            let lse = log_sum_exp(&lj);
            (lj.iter().map(|v| (v - lse).exp()).collect(), lse)
        })
        .collect();
    let ll = ksum(rows.iter().map(|r| r.1));
    Ok((rows.into_iter().map(|r| r.0).collect(), ll))
}

fn m_step(
    m: &Matrix,
    resp: &[Vec<f64>],
    weights: &mut [f64],
    means: &mut Matrix,
    covs: &mut [Matrix],
) {
    let (n, d) = (m.n_rows(), m.n_cols());
    let k = weights.len();
    let updates: Vec<Option<(f64, Vec<f64>, Matrix)>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk < 1e-10 {
                return None;
            }
            let mut mu = vec![0.0; d];
            for (i, r) in resp.iter().enumerate() {
                for (a, x) in mu.iter_mut().zip(m.row(i)) {
                    *a += r[j] * x;
                }
            }
            mu.iter_mut().for_each(|v| *v /= nk);
            let mut cov = vec![0.0; d * d];
            let mut diff = vec![0.0; d];
            for (i, r) in resp.iter().enumerate() {
                let w = r[j];
                if w == 0.0 {
                    continue;
                }
                for ((df, x), mu) in diff.iter_mut().zip(m.row(i)).zip(&mu) {
                    *df = x - mu;
                }
                for a in 0..d {
                    let wa = w * diff[a];
                    for b in a..d {
                        cov[a * d + b] += wa * diff[b];
                    }
                }
            }
            for a in 0..d {
                for b in a..d {
                    let v = cov[a * d + b] / nk;
                    cov[a * d + b] = v;
                    cov[b * d + a] = v;
                }
                cov[a * d + a] += COVARIANCE_REG;
            }
            Some((nk / n as f64, mu, Matrix::from_vec(d, d, cov).expect("square")))
        })
        .collect();
    for (j, u) in updates.into_iter().enumerate() {
        if let Some((w, mu, cov)) = u {
            weights[j] = w;
            means.row_mut(j).copy_from_slice(&mu);
            covs[j] = cov;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
}

fn em(m: &Matrix, k: usize, iters: usize, seed: u64) -> Result<EmRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = kmeans_pp(m, k, &mut rng)?;
    let mut weights = vec![1.0 / k as f64; k];
    let mut covs = vec![covariance(m); k];
    let n = m.n_rows() as f64;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (resp, ll) = e_step(m, &weights, &means, &covs)?;
        if let Some(&prev) = history.last() {
            if (prev - (-ll)) / n < TOL {
                history.push(-ll);
                converged = true;
                break;
            }
        }
        history.push(-ll);
        if iterations == iters {
            break;
        }
        iterations += 1;
        m_step(m, &resp, &mut weights, &mut means, &mut covs);
    }
    Ok(EmRun {
        weights,
        means,
        covariances: covs,
        trace: RestartTrace {
            seed,
            objective: *history.last().expect("evaluated at least once"),
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
    let runs: Vec<EmRun> = restart_seeds(seed, restarts)
        .into_par_iter()
        .map(|s| em(m, k, iters, s))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let best = best_index(runs.iter().map(|r| r.trace.objective));
    let traces = runs.iter().map(|r| r.trace.clone()).collect();
    let kept = runs.into_iter().nth(best).expect("non-empty");
    Ok(ClusteringModel {
        algorithm: Algorithm::Gmm,
        k,
        seed,
        objective: kept.trace.objective,
        params: ClusterParams::Gaussian {
            weights: kept.weights,
            means: kept.means,
            covariances: kept.covariances,
        },
        restarts: traces,
    })
}

pub(crate) fn assign(
    m: &Matrix,
    weights: &[f64],
    means: &Matrix,
    covariances: &[Matrix],
) -> Result<Vec<usize>> {
    let comps = prepare(covariances)?;
    Ok((0..m.n_rows())
        .into_par_iter()
        .map(|i| {
            let lj = log_joint(m.row(i), weights, means, &comps);
            let mut best = (0, f64::NEG_INFINITY);
            for (j, v) in lj.into_iter().enumerate() {
                if v > best.1 {
                    best = (j, v);
                }
            }
            best.0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::cluster::{fit_clusters, ClusterConfig};
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cfg(k: usize) -> ClusterConfig {
        ClusterConfig {
            algorithm: Algorithm::Gmm,
            k,
            iters: 200,
            restarts: 3,
        }
    }

    fn blobs(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.0, 0.0], [12.0, 0.0], [0.0, 12.0]];
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = centers[i % 3];
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                vec![c[0] + a, c[1] + 0.5 * a + b]
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn log_density_matches_closed_form() {
        // 2-D Gaussian with known covariance, evaluated by hand
        let cov = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let comps = prepare(&[cov]).unwrap();
        let means = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let got = log_joint(&[2.0, 0.0], &[1.0], &means, &comps)[0];
        let det = 2.0 * 1.0 - 0.25;
        // inverse = [[1, -0.5], [-0.5, 2]] / det
        let (dx, dy) = (1.0, 1.0);
        let quad = (dx * dx * 1.0 - 2.0 * 0.5 * dx * dy + 2.0 * dy * dy) / det;
        let want = -0.5 * (2.0 * (2.0 * std::f64::consts::PI).ln() + f64::ln(det) + quad);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn recovers_separated_components() {
        let m = blobs(300, 1);
        let model = fit_clusters(&m, &cfg(3), 7).unwrap();
        let labels = model.assign(&m).unwrap();
        // points generated from the same center share a label
        for c in 0..3 {
            let first = labels[c];
            assert!((c..300).step_by(3).all(|i| labels[i] == first));
        }
        let mut distinct = labels[..3].to_vec();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn log_likelihood_never_decreases(seed in any::<u64>(), k in 2usize..5) {
            let m = blobs(90, seed);
            let model = fit_clusters(&m, &cfg(k), seed).unwrap();
            for r in &model.restarts {
                for w in r.history.windows(2) {
                    // history stores negative log-likelihood
                    prop_assert!(w[1] <= w[0] + 1e-8, "{} -> {}", w[0], w[1]);
                }
            }
        }
    }
}
