use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Category, Stoplist};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfConfig {
    pub min_df: usize,
    /// Length of each returned list; `None` returns every surviving term.
    pub top_n: Option<usize>,
    /// Keep each term only in the category where it scores highest.
    pub exclusive: bool,
    /// Largest clusters per category whose documents enter the analysis.
    pub top_clusters: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            min_df: 50,
            top_n: Some(50),
            exclusive: false,
            top_clusters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub term: String,
    pub category: Category,
    pub score: f64,
    pub df: usize,
}

/// Ranked terms per category, highest score first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermLists {
    pub well_captured: Vec<TermScore>,
    pub missed: Vec<TermScore>,
    pub hallucinated: Vec<TermScore>,
}

impl TermLists {
    pub fn get(&self, c: Category) -> &[TermScore] {
        match c {
            Category::WellCaptured => &self.well_captured,
            Category::Missed => &self.missed,
            Category::Hallucinated => &self.hallucinated,
        }
    }

    fn get_mut(&mut self, c: Category) -> &mut Vec<TermScore> {
        match c {
            Category::WellCaptured => &mut self.well_captured,
            Category::Missed => &mut self.missed,
            Category::Hallucinated => &mut self.hallucinated,
        }
    }

    /// `category,term,score,df` rows for word-cloud tools.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category", "term", "score", "df"])
            .map_err(|e| Error::invalid(e.to_string()))?;
        for c in Category::ALL {
            for t in self.get(c) {
                w.write_record([c.as_str(), &t.term, &t.score.to_string(), &t.df.to_string()])
                    .map_err(|e| Error::invalid(e.to_string()))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Lowercase alphanumeric words followed by the bigrams of adjacent words.
pub fn tokenize(text: &str) -> Vec<String> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let mut out = words.clone();
    out.extend(words.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

/// Term frequencies normalized by the number of terms in the document.
fn term_frequencies(doc: &str) -> HashMap<String, f64> {
    let toks = tokenize(doc);
    let len = toks.len() as f64;
    let mut tf: HashMap<String, f64> = HashMap::new();
    for t in toks {
        *tf.entry(t).or_insert(0.0) += 1.0;
    }
    tf.values_mut().for_each(|v| *v /= len);
    tf
}

/// Scores every term by its mean TF-IDF in the target category minus the
/// average of its means in the other two. `docs` is indexed by
/// [`Category::index`]. IDF is `ln((1+D)/(1+df)) + 1` over all documents.
pub fn contrastive_tfidf(
    docs: &[Vec<String>; 3],
    stoplist: &Stoplist,
    config: &TfidfConfig,
) -> Result<TermLists> {
    for c in Category::ALL {
        if docs[c.index()].is_empty() {
            return Err(Error::invalid(format!("category {} has no documents", c.as_str())));
        }
    }
    let tfs: [Vec<HashMap<String, f64>>; 3] =
        docs.each_ref().map(|ds| ds.par_iter().map(|d| term_frequencies(d)).collect());
    let total_docs: usize = docs.iter().map(Vec::len).sum();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for set in &tfs {
        for tf in set {
            for t in tf.keys() {
                *df.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    let idf = |d: usize| ((1.0 + total_docs as f64) / (1.0 + d as f64)).ln() + 1.0;
    // mean TF-IDF per category; sums taken in document order
    let mut means: BTreeMap<&str, [f64; 3]> = df.keys().map(|t| (*t, [0.0; 3])).collect();
    for (ci, set) in tfs.iter().enumerate() {
        let n = set.len() as f64;
        for tf in set {
            let mut terms: Vec<(&String, &f64)> = tf.iter().collect();
            terms.sort_by(|a, b| a.0.cmp(b.0));
            for (t, v) in terms {
                means.get_mut(t.as_str()).expect("counted")[ci] += v * idf(df[t.as_str()]);
            }
        }
        means.values_mut().for_each(|m| m[ci] /= n);
    }
    let mut lists = TermLists::default();
    let mut surviving = 0usize;
    for (term, m) in &means {
        let d = df[term];
        if d < config.min_df || stoplist.blocks(term) {
            continue;
        }
        surviving += 1;
        let scores: Vec<f64> = (0..3)
            .map(|t| {
                let others: f64 = (0..3).filter(|&o| o != t).map(|o| m[o]).sum();
                m[t] - others / 2.0
            })
            .collect();
        let best = (0..3).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        for c in Category::ALL {
            if config.exclusive && c.index() != best {
                continue;
            }
            lists.get_mut(c).push(TermScore {
                term: term.to_string(),
                category: c,
                score: scores[c.index()],
                df: d,
            });
        }
    }
    if surviving == 0 {
        return Err(Error::invalid("no term survives the stoplist and min_df filters"));
    }
    for c in Category::ALL {
        let l = lists.get_mut(c);
        l.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.term.cmp(&b.term)));
        if let Some(n) = config.top_n {
            l.truncate(n);
        }
    }
    Ok(lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn all_terms(min_df: usize) -> TfidfConfig {
        TfidfConfig {
            min_df,
            top_n: None,
            ..Default::default()
        }
    }

    fn score(l: &TermLists, c: Category, term: &str) -> Option<f64> {
        l.get(c).iter().find(|t| t.term == term).map(|t| t.score)
    }

    #[test]
    fn tokenizer_emits_unigrams_then_bigrams() {
        assert_eq!(tokenize("Fix, the BUG"), s(&["fix", "the", "bug", "fix the", "the bug"]));
    }

    #[test]
    fn toy_corpus_matches_hand_computation() {
        // six two-word documents, two per category
        let docs = [
            s(&["alpha beta", "alpha gamma"]),
            s(&["beta gamma", "delta beta"]),
            s(&["gamma delta", "alpha delta"]),
        ];
        let got = contrastive_tfidf(&docs, &Stoplist::default(), &all_terms(1)).unwrap();

        // Every document has 3 terms (2 words + 1 bigram): tf = 1/3.
        // D = 6; df(alpha)=3, df(beta)=3, df(gamma)=3, df(delta)=3, every bigram 1.
        let idf = |df: f64| (7.0 / (1.0 + df)).ln() + 1.0;
        let tf = 1.0 / 3.0;
        // mean over the two documents of a category
        let alpha = [2.0 * tf * idf(3.0) / 2.0, 0.0, tf * idf(3.0) / 2.0];
        let want_alpha_wc = alpha[0] - (alpha[1] + alpha[2]) / 2.0;
        let want_alpha_h = alpha[2] - (alpha[0] + alpha[1]) / 2.0;
        let bigram = tf * idf(1.0) / 2.0; // "alpha beta": one document in well_captured
        let want_bigram_wc = bigram;
        let want_bigram_m = -bigram / 2.0;
        let checks = [
            (Category::WellCaptured, "alpha", want_alpha_wc),
            (Category::Hallucinated, "alpha", want_alpha_h),
            (Category::WellCaptured, "alpha beta", want_bigram_wc),
            (Category::Missed, "alpha beta", want_bigram_m),
        ];
        for (c, term, want) in checks {
            let g = score(&got, c, term).unwrap();
            assert!((g - want).abs() <= 1e-12, "{term} in {c:?}: {g} vs {want}");
        }
        // beta: 1 doc in wc, 2 in missed, 0 in hallucinated
        let beta = [tf * idf(3.0) / 2.0, 2.0 * tf * idf(3.0) / 2.0, 0.0];
        let g = score(&got, Category::Missed, "beta").unwrap();
        assert!((g - (beta[1] - (beta[0] + beta[2]) / 2.0)).abs() <= 1e-12);
    }

    #[test]
    fn one_sided_term_scores_positive_and_uniform_term_zero() {
        let docs = [
            s(&["shared python", "shared code"]),
            s(&["shared essay", "shared poem"]),
            s(&["shared story", "shared plot"]),
        ];
        let got = contrastive_tfidf(&docs, &Stoplist::default(), &all_terms(1)).unwrap();
        assert!(score(&got, Category::WellCaptured, "python").unwrap() > 0.0);
        for c in Category::ALL {
            assert!(score(&got, c, "shared").unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn filters_and_exclusivity() {
        let docs = [
            s(&["the python code", "python code"]),
            s(&["the essay", "essay draft"]),
            s(&["the story", "story plot"]),
        ];
        let got = contrastive_tfidf(&docs, &Stoplist::english(), &all_terms(2)).unwrap();
        for c in Category::ALL {
            for t in got.get(c) {
                assert!(t.df >= 2);
                assert_ne!(t.term, "the");
            }
        }
        let excl = TfidfConfig {
            exclusive: true,
            ..all_terms(1)
        };
        let got = contrastive_tfidf(&docs, &Stoplist::english(), &excl).unwrap();
        assert!(score(&got, Category::WellCaptured, "python").is_some());
        assert!(score(&got, Category::Missed, "python").is_none());
        assert!(got.to_csv().unwrap().starts_with("category,term,score,df\n"));
    }

    #[test]
    fn empty_category_or_vocabulary_rejected() {
        let docs = [s(&["a b"]), vec![], s(&["c d"])];
        assert!(contrastive_tfidf(&docs, &Stoplist::default(), &all_terms(1)).is_err());
        let docs = [s(&["a"]), s(&["b"]), s(&["c"])];
        assert!(contrastive_tfidf(&docs, &Stoplist::default(), &all_terms(5)).is_err());
    }

    fn corpus() -> impl Strategy<Value = [Vec<String>; 3]> {
        let word = proptest::sample::select(vec!["red", "blue", "green", "code", "poem", "bug", "plan", "the"]);
        let doc = proptest::collection::vec(word, 1..6).prop_map(|w| w.join(" "));
        let cat = proptest::collection::vec(doc, 1..8);
        (cat.clone(), cat.clone(), cat).prop_map(|(a, b, c)| [a, b, c])
    }

    proptest! {
        #[test]
        fn raising_min_df_never_adds_terms(docs in corpus(), lo in 1usize..4, extra in 1usize..4) {
            let stop = Stoplist::english();
            let a = contrastive_tfidf(&docs, &stop, &all_terms(lo));
            let b = contrastive_tfidf(&docs, &stop, &all_terms(lo + extra));
            if let Ok(b) = b {
                let a = a.unwrap();
                for c in Category::ALL {
                    for t in b.get(c) {
                        prop_assert!(a.get(c).iter().any(|x| x.term == t.term));
                        prop_assert!(t.df >= lo + extra);
                    }
                }
            }
        }
    }
}
