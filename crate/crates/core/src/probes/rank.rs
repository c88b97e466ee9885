use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based ranks, ties receiving the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation is undefined for a constant vector"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks. Without ties this is
/// evaluated as `1 - 6·Σd² / (n(n²-1))`, which is exact for integer ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let untied = |r: &[f64]| r.iter().all(|v| v.fract() == 0.0) && {
        let mut s = r.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[0] != w[1])
    };
    if x.len() >= 2 && untied(&rx) && untied(&ry) {
        let n = x.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        return Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)));
    }
    pearson(&rx, &ry)
}

/// variant → dataset → simulator → metric value.
pub type AblationResults = BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub variants: Vec<String>,
    pub rho: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.variants.iter().position(|v| v == a)?;
        let j = self.variants.iter().position(|v| v == b)?;
        Some(self.rho[i][j])
    }
}

/// Population z-scores.
fn zscore(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::invalid("cannot z-score a constant metric column"));
    }
    Ok(v.iter().map(|x| (x - mean) / sd).collect())
}

/// Z-scores each variant's values within every dataset, concatenates datasets
/// (in name order, simulators in name order) and returns Spearman's ρ for each
/// pair of variants.
pub fn ablation_correlation(results: &AblationResults) -> Result<CorrelationMatrix> {
    if results.len() < 2 {
        return Err(Error::invalid("need at least two variants to correlate"));
    }
    let (first_name, first) = results.iter().next().expect("non-empty");
    let layout: Vec<(String, BTreeSet<String>)> = first
        .iter()
        .map(|(ds, sims)| (ds.clone(), sims.keys().cloned().collect()))
        .collect();
    if layout.is_empty() {
        return Err(Error::invalid(format!("variant {first_name} has no datasets")));
    }
    let mut columns = Vec::with_capacity(results.len());
    for (variant, datasets) in results {
        let names: BTreeSet<&String> = datasets.keys().collect();
        if names != layout.iter().map(|(d, _)| d).collect() {
            return Err(Error::invalid(format!(
                "variant {variant} covers different datasets than {first_name}"
            )));
        }
        let mut col = Vec::new();
        for (ds, sims) in &layout {
            let vals = &datasets[ds];
            let keys: BTreeSet<String> = vals.keys().cloned().collect();
            if &keys != sims {
                return Err(Error::invalid(format!(
                    "variant {variant}, dataset {ds}: simulator set differs from {first_name}"
                )));
            }
            let raw: Vec<f64> = sims.iter().map(|s| vals[s]).collect();
            col.extend(zscore(&raw)?);
        }
        columns.push(col);
    }
    let n = columns.len();
    let mut rho = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = spearman(&columns[i], &columns[j])?;
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        variants: results.keys().cloned().collect(),
        rho,
    })
}
