//! From embeddings to discrete behavior distributions: ℓ2 normalization, PCA,
//! clustering, assignment and smoothed histograms.

mod agglomerative;
mod cluster;
mod gmm;
mod kmeans;
mod pca;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_matrix, write_matrix, MatrixFile};
use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

pub use cluster::{
    assign, fit_clusters, Algorithm, ClusterConfig, ClusterParams, ClusteringModel, RestartTrace,
};
pub use gmm::COVARIANCE_REG;
pub(crate) use kmeans::restart_seeds;
pub use pca::{fit_pca, PcaModel, DEFAULT_TARGET_RATIO};

/// Scales every row to unit Euclidean norm. `ids` names rows in the error for
/// an all-zero row; indices are used when absent.
pub fn l2_normalize(m: &Matrix, ids: Option<&[String]>) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..m.n_rows() {
        let n = norm(m.row(i));
        if !(n > 0.0) || !n.is_finite() {
            let row = ids
                .and_then(|ids| ids.get(i).cloned())
                .unwrap_or_else(|| format!("#{i}"));
            return Err(Error::ZeroRow { row });
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorHistogram {
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
    pub alpha: f64,
}

impl BehaviorHistogram {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `probs[c] = (counts[c] + alpha) / (N + k·alpha)`.
pub fn histogram(labels: &[usize], k: usize, alpha: f64) -> Result<BehaviorHistogram> {
    if k == 0 {
        return Err(Error::invalid("histogram needs k ≥ 1"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be non-negative, got {alpha}")));
    }
    let mut counts = vec![0u64; k];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| {
            Error::invalid(format!("label {l} outside 0..{k}"))
        })? += 1;
    }
    let denom = labels.len() as f64 + k as f64 * alpha;
    if denom == 0.0 {
        return Err(Error::invalid("empty label list with alpha = 0 has no distribution"));
    }
    let probs = counts.iter().map(|&c| (c as f64 + alpha) / denom).collect();
    Ok(BehaviorHistogram {
        counts,
        probs,
        alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizeConfig {
    pub normalize: bool,
    /// Explained-variance target; `None` skips PCA.
    pub pca_target: Option<f64>,
    #[serde(flatten)]
    pub clusters: ClusterConfig,
    /// Laplace smoothing; `None` means 1/k.
    pub alpha: Option<f64>,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        QuantizeConfig {
            normalize: true,
            pca_target: Some(DEFAULT_TARGET_RATIO),
            clusters: ClusterConfig::default(),
            alpha: None,
        }
    }
}

impl QuantizeConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.0 / self.clusters.k as f64)
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.clusters.k = k;
        self
    }
}

/// Normalizer, PCA basis and clusterer fitted together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationModel {
    pub normalize: bool,
    pub pca: Option<PcaModel>,
    pub clusters: ClusteringModel,
}

impl QuantizationModel {
    /// Applies normalization and projection.
    pub fn project(&self, m: &Matrix) -> Result<Matrix> {
        let x = if self.normalize {
            l2_normalize(m, None)?
        } else {
            m.clone()
        };
        match &self.pca {
            Some(p) => p.transform(&x),
            None => Ok(x),
        }
    }

    pub fn assign(&self, m: &Matrix) -> Result<Vec<usize>> {
        self.clusters.assign(&self.project(m)?)
    }

    pub fn k(&self) -> usize {
        self.clusters.k
    }
}

/// Fits one model on several embedding sets stacked together.
pub fn fit_quantizer(sets: &[&Matrix], config: &QuantizeConfig, seed: u64) -> Result<QuantizationModel> {
    if sets.is_empty() || sets.iter().any(|m| m.is_empty()) {
        return Err(Error::invalid("every embedding set must be non-empty"));
    }
    let mut all = sets[0].clone();
    for m in &sets[1..] {
        all = all.vstack(m)?;
    }
    let x = if config.normalize {
        l2_normalize(&all, None)?
    } else {
        all
    };
    let pca = match config.pca_target {
        Some(t) => Some(fit_pca(&x, t)?),
        None => None,
    };
    let z = match &pca {
        Some(p) => p.transform(&x)?,
        None => x,
    };
    let clusters = fit_clusters(&z, &config.clusters, seed)?;
    Ok(QuantizationModel {
        normalize: config.normalize,
        pca,
        clusters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantized {
    pub model: QuantizationModel,
    /// Per input set, in input order.
    pub labels: Vec<Vec<usize>>,
    pub histograms: Vec<BehaviorHistogram>,
}

/// Pools any number of embedding sets, fits one quantizer, and returns one
/// histogram per set.
pub fn quantize_pooled(sets: &[&Matrix], config: &QuantizeConfig, seed: u64) -> Result<Quantized> {
    let model = fit_quantizer(sets, config, seed)?;
    let alpha = config.alpha();
    let mut labels = Vec::with_capacity(sets.len());
    let mut histograms = Vec::with_capacity(sets.len());
    for m in sets {
        let l = model.assign(m)?;
        histograms.push(histogram(&l, model.k(), alpha)?);
        labels.push(l);
    }
    Ok(Quantized {
        model,
        labels,
        histograms,
    })
}

/// Real and simulated sets quantized jointly: `histograms[0]` is real,
/// `histograms[1]` simulated.
pub fn quantize_pair(
    real: &Matrix,
    sim: &Matrix,
    config: &QuantizeConfig,
    seed: u64,
) -> Result<Quantized> {
    quantize_pooled(&[real, sim], config, seed)
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    normalize: bool,
    algorithm: Algorithm,
    k: usize,
    seed: u64,
    objective: f64,
    restarts: Vec<RestartTrace>,
    pca: Option<PcaHeader>,
    weights: Option<Vec<f64>>,
    payloads: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PcaHeader {
    target_ratio: f64,
    explained_variance_ratio: Vec<f64>,
}

fn payload(dir: &Path, stem: &str, name: &str, m: &Matrix) -> Result<String> {
    let file = format!("{stem}.{name}.bgm");
    let ids = (0..m.n_rows()).map(|i| i.to_string()).collect();
    write_matrix(&dir.join(&file), &MatrixFile::from_matrix(m, ids)?)?;
    Ok(file)
}

fn load_payload(dir: &Path, file: &str) -> Result<Matrix> {
    Ok(read_matrix(&dir.join(file))?.to_matrix())
}

impl QuantizationModel {
    /// Writes `<stem>.json` plus one matrix file per parameter block into
    /// `dir`, returning every written file name. Matrix payloads are stored
    /// as 32-bit floats.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<String>> {
        let mut payloads = Vec::new();
        if let Some(p) = &self.pca {
            let mean = Matrix::from_vec(1, p.mean.len(), p.mean.clone())?;
            payloads.push(payload(dir, stem, "pca_mean", &mean)?);
            payloads.push(payload(dir, stem, "pca_components", &p.components)?);
        }
        let weights = match &self.clusters.params {
            ClusterParams::Centroids { centroids } => {
                payloads.push(payload(dir, stem, "centroids", centroids)?);
                None
            }
            ClusterParams::Gaussian {
                weights,
                means,
                covariances,
            } => {
                payloads.push(payload(dir, stem, "means", means)?);
                let mut stacked = covariances[0].clone();
                for c in &covariances[1..] {
                    stacked = stacked.vstack(c)?;
                }
                payloads.push(payload(dir, stem, "covariances", &stacked)?);
                Some(weights.clone())
            }
        };
        let header = ModelHeader {
            normalize: self.normalize,
            algorithm: self.clusters.algorithm,
            k: self.clusters.k,
            seed: self.clusters.seed,
            objective: self.clusters.objective,
            restarts: self.clusters.restarts.clone(),
            pca: self.pca.as_ref().map(|p| PcaHeader {
                target_ratio: p.target_ratio,
                explained_variance_ratio: p.explained_variance_ratio.clone(),
            }),
            weights,
            payloads: payloads.clone(),
        };
        let file = format!("{stem}.json");
        let path = dir.join(&file);
        let body = serde_json::to_vec_pretty(&header).map_err(|e| Error::json("model header", e))?;
        fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        let mut all = vec![file];
        all.extend(payloads);
        Ok(all)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.json"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let h: ModelHeader =
            serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))?;
        let mut files = h.payloads.iter();
        let mut next = || -> Result<Matrix> {
            let f = files
                .next()
                .ok_or_else(|| Error::invalid("model header lists too few payloads"))?;
            load_payload(dir, f)
        };
        let pca = match &h.pca {
            Some(p) => {
                let mean = next()?;
                Some(PcaModel {
                    mean: mean.row(0).to_vec(),
                    components: next()?,
                    explained_variance_ratio: p.explained_variance_ratio.clone(),
                    target_ratio: p.target_ratio,
                })
            }
            None => None,
        };
        let params = match h.weights {
            None => ClusterParams::Centroids { centroids: next()? },
            Some(weights) => {
                let means = next()?;
                let stacked = next()?;
                let d = means.n_cols();
                let covariances = (0..h.k).map(|j| stacked.slice_rows(j * d, (j + 1) * d)).collect();
                ClusterParams::Gaussian {
                    weights,
                    means,
                    covariances,
                }
            }
        };
        Ok(QuantizationModel {
            normalize: h.normalize,
            pca,
            clusters: ClusteringModel {
                algorithm: h.algorithm,
                k: h.k,
                seed: h.seed,
                objective: h.objective,
                params,
                restarts: h.restarts,
            },
        })
    }
}
