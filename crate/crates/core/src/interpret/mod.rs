//! Which behaviors a simulator captures, misses or hallucinates: clusters are
//! categorized by their real-vs-simulated composition, then contrastive TF-IDF
//! surfaces distinctive terms for each category.

mod tfidf;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatModel};

pub use tfidf::{contrastive_tfidf, tokenize, TermLists, TermScore, TfidfConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    WellCaptured,
    Missed,
    Hallucinated,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::WellCaptured, Category::Missed, Category::Hallucinated];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::WellCaptured => "well_captured",
            Category::Missed => "missed",
            Category::Hallucinated => "hallucinated",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lo: 1.0 / 3.0,
            hi: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCategory {
    pub cluster: usize,
    pub n_real: u64,
    pub n_sim: u64,
    /// `(n_real/N_real) / (n_real/N_real + n_sim/N_sim)`.
    pub real_share: f64,
    pub category: Category,
}

/// Categorizes every non-empty cluster: missed when `real_share ≥ hi`,
/// hallucinated when `real_share ≤ lo`, well-captured otherwise.
pub fn categorize_clusters(
    counts_real: &[u64],
    counts_sim: &[u64],
    n_real: u64,
    n_sim: u64,
    thresholds: Thresholds,
) -> Result<Vec<ClusterCategory>> {
    if counts_real.len() != counts_sim.len() {
        return Err(Error::DimensionMismatch {
            expected: counts_real.len(),
            found: counts_sim.len(),
        });
    }
    if n_real == 0 || n_sim == 0 {
        return Err(Error::invalid("corpus totals must be positive"));
    }
    if !(0.0 <= thresholds.lo && thresholds.lo < thresholds.hi && thresholds.hi <= 1.0) {
        return Err(Error::invalid("thresholds must satisfy 0 ≤ lo < hi ≤ 1"));
    }
    Ok(counts_real
        .iter()
        .zip(counts_sim)
        .enumerate()
        .filter(|(_, (r, s))| **r + **s > 0)
        .map(|(cluster, (&r, &s))| {
            let fr = r as f64 / n_real as f64;
            let fs = s as f64 / n_sim as f64;
            let real_share = fr / (fr + fs);
            let category = if real_share >= thresholds.hi {
                Category::Missed
            } else if real_share <= thresholds.lo {
                Category::Hallucinated
            } else {
                Category::WellCaptured
            };
            ClusterCategory {
                cluster,
                n_real: r,
                n_sim: s,
                real_share,
                category,
            }
        })
        .collect())
}

/// Documents of the `top_clusters` largest clusters (by document count) in
/// each category, indexed by [`Category::index`].
pub fn select_documents(
    labels: &[usize],
    descriptions: &[String],
    categories: &[ClusterCategory],
    top_clusters: usize,
) -> Result<[Vec<String>; 3]> {
    if labels.len() != descriptions.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: descriptions.len(),
        });
    }
    let mut by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_cluster.entry(l).or_default().push(i);
    }
    let mut out: [Vec<String>; 3] = Default::default();
    for cat in Category::ALL {
        let mut members: Vec<(usize, &Vec<usize>)> = categories
            .iter()
            .filter(|c| c.category == cat)
            .filter_map(|c| by_cluster.get(&c.cluster).map(|m| (c.cluster, m)))
            .collect();
        members.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        for (_, docs) in members.into_iter().take(top_clusters) {
            out[cat.index()].extend(docs.iter().map(|&i| descriptions[i].clone()));
        }
    }
    Ok(out)
}

/// Lowercase terms (unigrams or space-joined bigrams) excluded from term
/// lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stoplist {
    terms: HashSet<String>,
}

const ENGLISH: &str = include_str!("../../assets/stopwords_en.txt");

impl Stoplist {
    pub fn english() -> Self {
        Stoplist {
            terms: ENGLISH
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        }
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(term)
    }

    pub fn extend<I: IntoIterator<Item = String>>(&mut self, terms: I) {
        self.terms
            .extend(terms.into_iter().map(|t| t.trim().to_lowercase()));
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// A term is dropped when listed, or when it is a bigram of two listed
    /// words.
    pub fn blocks(&self, term: &str) -> bool {
        if self.contains(term) {
            return true;
        }
        match term.split_once(' ') {
            Some((a, b)) => self.contains(a) && self.contains(b),
            None => false,
        }
    }
}

const FILTER_PROMPT: &str = "The following terms were extracted from descriptions of how users behave in conversations with an AI assistant. List the terms that carry no meaning on their own (for example fragments such as \"does respond\" or generic filler). Reply with a JSON array of the flagged terms, copied exactly, and nothing else. Reply with [] if none qualify.\n\nTerms:\n";

/// Asks a model which terms are semantically empty. Only terms from the input
/// are returned; any failure yields no additions.
pub fn llm_term_filter(terms: &[String], chat: &dyn ChatModel) -> Vec<String> {
    if terms.is_empty() {
        return Vec::new();
    }
    let prompt = format!("{FILTER_PROMPT}{}", terms.join("\n"));
    let reply = match chat.chat("", &[ChatMessage::user(prompt)]) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("term filter request failed, stoplist unchanged: {e}");
            return Vec::new();
        }
    };
    let parsed: Option<Vec<String>> = reply
        .find('[')
        .zip(reply.rfind(']'))
        .and_then(|(a, b)| serde_json::from_str(&reply[a..=b]).ok());
    let Some(flagged) = parsed else {
        log::warn!("term filter reply is not a JSON list, stoplist unchanged");
        return Vec::new();
    };
    let known: HashSet<&str> = terms.iter().map(String::as_str).collect();
    let mut out: Vec<String> = flagged
        .into_iter()
        .map(|t| t.trim().to_lowercase())
        .filter(|t| known.contains(t.as_str()))
        .collect();
    out.sort();
    out.dedup();
    out
}
