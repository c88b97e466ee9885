//! Real-vs-simulated linear probe: L2-regularized logistic regression trained
//! with L-BFGS on stratified splits.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::quantize::l2_normalize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub splits: usize,
    pub test_frac: f64,
    /// Inverse regularization strength: the objective is
    /// `½‖w‖² + C·Σ logloss`, intercept unpenalized.
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Scale embeddings to unit norm before fitting.
    pub normalize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            splits: 5,
            test_frac: 0.2,
            c: 1.0,
            tol: 1e-6,
            max_iter: 2000,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub split_seeds: Vec<u64>,
    pub c: f64,
    pub test_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> bool {
        dot(&self.w, x) + self.b > 0.0
    }
}

/// ln(1 + e^{-z}) without overflow.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Objective and gradient at `theta = [w; b]`.
fn objective(x: &Matrix, y: &[bool], rows: &[usize], c: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let d = x.n_cols();
    let (w, b) = (&theta[..d], theta[d]);
    let mut grad: Vec<f64> = w.to_vec();
    grad.push(0.0);
    let mut loss = 0.5 * dot(w, w);
    for &i in rows {
        let xi = x.row(i);
        let z = dot(w, xi) + b;
        let s = if y[i] { 1.0 } else { -1.0 };
        loss += c * softplus_neg(s * z);
        // d/dz of softplus(-s z) = -s σ(-s z)
        let g = -s * c * sigmoid(-s * z);
        for (gj, xj) in grad[..d].iter_mut().zip(xi) {
            *gj += g * xj;
        }
        grad[d] += g;
    }
    (loss, grad)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the regularized log-loss over `rows` until the largest gradient
/// component is below `tol`.
pub fn fit_logistic(
    x: &Matrix,
    y: &[bool],
    rows: &[usize],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LogisticModel> {
    if !(c > 0.0) {
        return Err(Error::invalid("regularization C must be positive"));
    }
    let d = x.n_cols();
    let mut theta = vec![0.0; d + 1];
    let (mut f, mut g) = objective(x, y, rows, c, &theta);
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while inf_norm(&g) > tol && iterations < max_iter {
        iterations += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, yv, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match mem.back() {
            Some((s, yv, _)) => dot(s, yv) / dot(yv, yv),
            None => 1.0 / inf_norm(&g).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, yv, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
            let beta = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - beta) * si);
        }
        let dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        let dir = if slope >= 0.0 {
            mem.clear();
            slope = -dot(&g, &g);
            g.iter().map(|v| -v).collect()
        } else {
            dir
        };
        // backtracking Armijo search
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, p)| t + step * p).collect();
            let (fc, gc) = objective(x, y, rows, c, &cand);
            if fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // no further decrease representable in floating point
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if mem.len() == 10 {
                mem.pop_front();
            }
            mem.push_back((s, yv, 1.0 / sy));
        }
        theta = cand;
        f = fc;
        g = gc;
    }
    let grad_norm = inf_norm(&g);
    let b = theta.pop().expect("intercept");
    Ok(LogisticModel {
        w: theta,
        b,
        iterations,
        grad_norm,
    })
}

/// Per class, `round(test_frac · n_c)` items (at least one, leaving at least
/// one for training) go to the test side.
pub fn stratified_split(
    classes: &[usize],
    test_frac: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let k = classes.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..k {
        let mut idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        let n_test = ((test_frac * idx.len() as f64).round() as usize).clamp(1, idx.len().max(2) - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains a classifier to tell real (positive) from simulated embeddings on
/// `splits` stratified random splits and reports held-out accuracy.
pub fn linear_probe(real: &Matrix, sim: &Matrix, config: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    if config.splits == 0 {
        return Err(Error::invalid("splits must be positive"));
    }
    if !(config.test_frac > 0.0 && config.test_frac < 1.0) {
        return Err(Error::invalid("test_frac must be in (0, 1)"));
    }
    for (name, m) in [("real", real), ("simulated", sim)] {
        if m.n_rows() < config.splits.max(2) {
            return Err(Error::invalid(format!(
                "{name} class has {} members, fewer than the {} splits",
                m.n_rows(),
                config.splits
            )));
        }
    }
    let mut x = real.vstack(sim)?;
    if config.normalize {
        x = l2_normalize(&x, None)?;
    }
    let y: Vec<bool> = (0..x.n_rows()).map(|i| i < real.n_rows()).collect();
    let classes: Vec<usize> = y.iter().map(|&b| usize::from(!b)).collect();
    let split_seeds = crate::quantize::restart_seeds(seed, config.splits);
    let accuracies: Vec<f64> = split_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (train, test) = stratified_split(&classes, config.test_frac, &mut rng);
            let model = fit_logistic(&x, &y, &train, config.c, config.tol, config.max_iter)?;
            let hits = test.iter().filter(|&&i| model.predict(x.row(i)) == y[i]).count();
            Ok(hits as f64 / test.len() as f64)
        })
        .collect::<Result<_>>()?;
    let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(ProbeResult {
        accuracies,
        mean_accuracy,
        split_seeds,
        c: config.c,
        test_frac: config.test_frac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gauss(n: usize, mean: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..8).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn converges_to_stationary_point() {
        let x = gauss(60, 0.0, 1).vstack(&gauss(60, 0.7, 2)).unwrap();
        let y: Vec<bool> = (0..120).map(|i| i < 60).collect();
        let rows: Vec<usize> = (0..120).collect();
        let m = fit_logistic(&x, &y, &rows, 1.0, 1e-6, 2000).unwrap();
        assert!(m.grad_norm <= 1e-6, "{}", m.grad_norm);
        // independent check of stationarity by central finite differences
        let mut theta = m.w.clone();
        theta.push(m.b);
        for j in 0..theta.len() {
            let h = 1e-5;
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (objective(&x, &y, &rows, 1.0, &a).0 - objective(&x, &y, &rows, 1.0, &b).0) / (2.0 * h);
            assert!(fd.abs() < 1e-4, "coord {j}: {fd}");
        }
    }

    #[test]
    fn stratified_split_preserves_ratio() {
        let classes: Vec<usize> = (0..150).map(|i| usize::from(i >= 100)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, test) = stratified_split(&classes, 0.2, &mut rng);
        assert_eq!(train.len() + test.len(), 150);
        assert_eq!(test.iter().filter(|&&i| classes[i] == 0).count(), 20);
        assert_eq!(test.iter().filter(|&&i| classes[i] == 1).count(), 10);
        let classes: Vec<usize> = (0..33).map(|i| usize::from(i >= 11)).collect();
        let (_, test) = stratified_split(&classes, 0.2, &mut rng);
        // 2.2 → 2 and 4.4 → 4
        assert_eq!(test.iter().filter(|&&i| classes[i] == 0).count(), 2);
        assert_eq!(test.iter().filter(|&&i| classes[i] == 1).count(), 4);
    }

    #[test]
    fn label_shuffled_data_is_not_separable() {
        let x = gauss(400, 0.0, 5);
        let real = x.slice_rows(0, 200);
        let sim = x.slice_rows(200, 400);
        let r = linear_probe(&real, &sim, &ProbeConfig::default(), 3).unwrap();
        assert!((r.mean_accuracy - 0.5).abs() <= 0.06, "{}", r.mean_accuracy);
        assert_eq!(r.accuracies.len(), 5);
    }

    #[test]
    fn tiny_classes_rejected() {
        let a = gauss(3, 0.0, 1);
        let b = gauss(30, 0.0, 2);
        assert!(linear_probe(&a, &b, &ProbeConfig::default(), 0).is_err());
    }
}
