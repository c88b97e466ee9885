//! Divergences between behavior histograms and embedding-level similarity.
//! All logarithms are natural.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, ksum, norm, Matrix};
use crate::quantize::{quantize_pair, QuantizeConfig, Quantized};

const SUM_TOL: f64 = 1e-9;

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::invalid("empty distribution"));
    }
    for (name, v) in [("p", p), ("q", q)] {
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid(format!("{name} has negative or non-finite entries")));
        }
        let s = ksum(v.iter().copied());
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!("{name} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Σ p ln(p/q), with 0·ln(0/q) = 0. Assumes validated input.
fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    ksum(p.iter().zip(q).map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 }))
}

/// Kullback–Leibler divergence KL(p‖q) in nats. `q` must be positive wherever
/// `p` is.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    if let Some(i) = (0..p.len()).find(|&i| p[i] > 0.0 && q[i] == 0.0) {
        return Err(Error::invalid(format!(
            "q[{i}] is zero where p is positive; smooth the histogram first"
        )));
    }
    Ok(kl_unchecked(p, q).max(0.0))
}

/// Jensen–Shannon divergence in nats, bounded by ln 2.
pub fn js(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let v = 0.5 * kl_unchecked(p, &m) + 0.5 * kl_unchecked(q, &m);
    Ok(v.clamp(0.0, std::f64::consts::LN_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MauveConfig {
    pub scale: f64,
    pub grid_size: usize,
}

impl Default for MauveConfig {
    fn default() -> Self {
        MauveConfig {
            scale: 5.0,
            grid_size: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCurve {
    pub mauve_scale: f64,
    pub lambdas: Vec<f64>,
    /// `(exp(-c·KL(q‖r_λ)), exp(-c·KL(p‖r_λ)))` for each λ, in grid order.
    pub points: Vec<(f64, f64)>,
}

impl DivergenceCurve {
    /// `lambda,x,y` rows; the two boundary points have an empty lambda.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,x,y\n");
        out.push_str("\"\",0,1\n");
        for (l, (x, y)) in self.lambdas.iter().zip(&self.points) {
            out.push_str(&format!("{l},{x},{y}\n"));
        }
        out.push_str("\"\",1,0\n");
        out
    }
}

/// Area under the divergence frontier between `p` and `q`.
pub fn mauve(p: &[f64], q: &[f64], config: &MauveConfig) -> Result<(f64, DivergenceCurve)> {
    check_pair(p, q)?;
    if !(config.scale > 0.0) {
        return Err(Error::invalid("mauve scale must be positive"));
    }
    if config.grid_size < 2 {
        return Err(Error::invalid("mauve grid needs at least 2 points"));
    }
    let c = config.scale;
    let g = config.grid_size;
    let lambdas: Vec<f64> = (1..=g).map(|i| i as f64 / (g + 1) as f64).collect();
    let points: Vec<(f64, f64)> = lambdas
        .iter()
        .map(|&l| {
            // equal coordinates stay exact so identical inputs score exactly 1
            let r: Vec<f64> = p
                .iter()
                .zip(q)
                .map(|(a, b)| if a == b { *a } else { l * a + (1.0 - l) * b })
                .collect();
            (
                (-c * kl_unchecked(q, &r).max(0.0)).exp(),
                (-c * kl_unchecked(p, &r).max(0.0)).exp(),
            )
        })
        .collect();
    let mut curve = points.clone();
    curve.push((0.0, 1.0));
    curve.push((1.0, 0.0));
    curve.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let area = ksum(curve.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[1].1 + w[0].1)));
    Ok((
        area.clamp(0.0, 1.0),
        DivergenceCurve {
            mauve_scale: c,
            lambdas,
            points,
        },
    ))
}

fn unit_rows(m: &Matrix, side: &str) -> Result<Vec<Vec<f64>>> {
    m.rows()
        .enumerate()
        .map(|(i, r)| {
            let n = norm(r);
            if !(n > 0.0) {
                return Err(Error::ZeroRow {
                    row: format!("{side}[{i}]"),
                });
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// Mean over real rows of the best cosine similarity to any simulated row.
pub fn nn_cosine(real: &Matrix, sim: &Matrix) -> Result<f64> {
    if real.is_empty() || sim.is_empty() {
        return Err(Error::invalid("both embedding sets must be non-empty"));
    }
    if real.n_cols() != sim.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: real.n_cols(),
            found: sim.n_cols(),
        });
    }
    let r = unit_rows(real, "real")?;
    let s = unit_rows(sim, "sim")?;
    let best: Vec<f64> = r
        .par_iter()
        .map(|a| {
            s.iter()
                .map(|b| dot(a, b))
                .fold(f64::NEG_INFINITY, f64::max)
                .clamp(-1.0, 1.0)
        })
        .collect();
    Ok(ksum(best) / real.n_rows() as f64)
}

/// The four histogram divergences for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    pub kl_fwd: f64,
    pub kl_bwd: f64,
    pub js: f64,
    pub mauve: f64,
}

/// `kl_fwd = KL(real‖sim)` (low recall), `kl_bwd = KL(sim‖real)` (low
/// precision).
pub fn divergences(real: &[f64], sim: &[f64], mauve_config: &MauveConfig) -> Result<Divergences> {
    Ok(Divergences {
        kl_fwd: kl(real, sim)?,
        kl_bwd: kl(sim, real)?,
        js: js(real, sim)?,
        mauve: mauve(real, sim, mauve_config)?.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub real: String,
    pub sim: String,
    pub kl_fwd: f64,
    pub kl_bwd: f64,
    pub js: f64,
    pub mauve: f64,
    pub nn_sim: f64,
    pub k: usize,
    pub alpha: f64,
    #[serde(default)]
    pub facet_subset: Vec<String>,
    pub seed: u64,
}

/// Everything produced while measuring one pair.
#[derive(Debug, Clone)]
pub struct GapAnalysis {
    pub report: GapReport,
    pub quantized: Quantized,
    pub curve: DivergenceCurve,
}

/// Quantizes the pair jointly and computes every metric. Histogram metrics use
/// the smoothed histograms; `nn_sim` uses the raw embeddings.
pub fn gap_analysis(
    real: &Matrix,
    sim: &Matrix,
    config: &QuantizeConfig,
    mauve_config: &MauveConfig,
    seed: u64,
) -> Result<GapAnalysis> {
    let quantized = quantize_pair(real, sim, config, seed)?;
    let (p, q) = (&quantized.histograms[0].probs, &quantized.histograms[1].probs);
    let (mauve_score, curve) = mauve(p, q, mauve_config)?;
    let report = GapReport {
        real: String::new(),
        sim: String::new(),
        kl_fwd: kl(p, q)?,
        kl_bwd: kl(q, p)?,
        js: js(p, q)?,
        mauve: mauve_score,
        nn_sim: nn_cosine(real, sim)?,
        k: quantized.model.k(),
        alpha: config.alpha(),
        facet_subset: Vec::new(),
        seed,
    };
    Ok(GapAnalysis {
        report,
        quantized,
        curve,
    })
}

pub fn gap_report(real: &Matrix, sim: &Matrix, config: &QuantizeConfig, seed: u64) -> Result<GapReport> {
    Ok(gap_analysis(real, sim, config, &MauveConfig::default(), seed)?.report)
}
