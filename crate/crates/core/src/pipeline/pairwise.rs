use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{corpus_name, prepare, write_json, write_text, RunConfig, Workspace};
use crate::corpus::CorpusKind;
use crate::error::{Error, Result};
use crate::metrics::js;
use crate::quantize::quantize_pooled;

/// Symmetric JS divergences between simulated corpora under one shared
/// quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub names: Vec<String>,
    pub js: Vec<Vec<f64>>,
    pub k: usize,
    pub seed: u64,
}

impl PairwiseMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.js[i][j])
    }

    /// Header `,name1,name2,...`, then one row per corpus.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for n in &self.names {
            s.push(',');
            s.push_str(&csv_field(n));
        }
        s.push('\n');
        for (n, row) in self.names.iter().zip(&self.js) {
            s.push_str(&csv_field(n));
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Share of ordered off-diagonal pairs with JS strictly below `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let n = self.names.len();
        if n < 2 {
            return 0.0;
        }
        let hits = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .filter(|&(i, j)| self.js[i][j] < threshold)
            .count();
        hits as f64 / (n * (n - 1)) as f64
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Unique labels from file stems, suffixing repeats with their position.
fn labels(cfg: &RunConfig) -> Vec<String> {
    let mut seen = BTreeSet::new();
    cfg.corpora
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let base = corpus_name(p);
            if seen.insert(base.clone()) {
                base
            } else {
                let l = format!("{base}-{i}");
                seen.insert(l.clone());
                l
            }
        })
        .collect()
}

/// Describes and embeds every corpus in `cfg.corpora`, fits one quantizer on
/// their union and writes `pairwise.csv` and `pairwise.json`.
pub fn run_pairwise(cfg: &RunConfig) -> Result<PairwiseMatrix> {
    cfg.validate()?;
    if cfg.corpora.len() < 2 {
        return Err(Error::invalid("pairwise comparison needs at least two corpora"));
    }
    let providers = cfg.providers()?;
    let mut ws = Workspace::open(&cfg.out)?;
    let names = labels(cfg);
    let mut prepared = Vec::with_capacity(names.len());
    for (name, path) in names.iter().zip(&cfg.corpora) {
        prepared.push(prepare(
            &mut ws,
            name,
            path,
            CorpusKind::Simulated,
            cfg,
            &providers,
            &cfg.facets,
        )?);
    }
    let sets: Vec<_> = prepared.iter().map(|p| &p.embeddings).collect();
    let q = quantize_pooled(&sets, &cfg.quantize, cfg.seed)?;
    let n = names.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = js(&q.histograms[i].probs, &q.histograms[j].probs)?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    let out = PairwiseMatrix {
        names,
        js: m,
        k: q.model.k(),
        seed: cfg.seed,
    };
    write_text(&ws.path("pairwise.csv"), &out.to_csv())?;
    write_json(&ws.path("pairwise.json"), &out)?;
    write_json(&ws.path("pairwise_histograms.json"), &q.histograms)?;
    ws.record(
        "pairwise",
        &["pairwise.csv", "pairwise.json", "pairwise_histograms.json"],
        crate::hashing::json_hash(&prepared.iter().map(|p| &p.embedding_hash).collect::<Vec<_>>()),
        crate::hashing::json_hash(&cfg.quantize),
        cfg.seed,
    )?;
    Ok(out)
}
