use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletItem {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub id: String,
    pub items: [TripletItem; 3],
    /// Position of the item from the other cluster.
    pub answer_index: usize,
    pub same_cluster: usize,
    pub odd_cluster: usize,
}

/// What annotators see: the items without the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindTriplet {
    pub id: String,
    pub items: [TripletItem; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub triplet_id: String,
    pub answer_index: usize,
    pub same_cluster: usize,
    pub odd_cluster: usize,
}

impl Triplet {
    pub fn blind(&self) -> BlindTriplet {
        BlindTriplet {
            id: self.id.clone(),
            items: self.items.clone(),
        }
    }

    pub fn key(&self) -> AnswerKey {
        AnswerKey {
            triplet_id: self.id.clone(),
            answer_index: self.answer_index,
            same_cluster: self.same_cluster,
            odd_cluster: self.odd_cluster,
        }
    }
}

/// Draws `n` odd-one-out triplets: a cluster with at least two members
/// (uniform over such clusters), two distinct members of it, and one item from
/// any other cluster (uniform over those items), in shuffled order.
pub fn sample_triplets(
    labels: &[usize],
    ids: &[String],
    descriptions: &[String],
    n: usize,
    seed: u64,
) -> Result<Vec<Triplet>> {
    if labels.len() != ids.len() || labels.len() != descriptions.len() {
        return Err(Error::invalid("labels, ids and descriptions differ in length"));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let eligible: Vec<usize> = members
        .iter()
        .filter(|(_, m)| m.len() >= 2)
        .map(|(&c, _)| c)
        .collect();
    if eligible.is_empty() || members.len() < 2 {
        return Err(Error::invalid(
            "triplets need a cluster with two members and another non-empty cluster",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let item = |i: usize| TripletItem {
        id: ids[i].clone(),
        text: descriptions[i].clone(),
    };
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let same = eligible[rng.random_range(0..eligible.len())];
        let pool = &members[&same];
        let pair: Vec<usize> = pool.choose_multiple(&mut rng, 2).copied().collect();
        let others = labels.len() - pool.len();
        let r = rng.random_range(0..others);
        let odd = (0..labels.len())
            .filter(|&i| labels[i] != same)
            .nth(r)
            .expect("index within range");
        let mut order = [(pair[0], false), (pair[1], false), (odd, true)];
        order.shuffle(&mut rng);
        let answer_index = order.iter().position(|(_, o)| *o).expect("odd item placed");
        out.push(Triplet {
            id: format!("t{t:04}"),
            items: [item(order[0].0), item(order[1].0), item(order[2].0)],
            answer_index,
            same_cluster: same,
            odd_cluster: labels[odd],
        });
    }
    Ok(out)
}

/// One annotator's choice for one triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub triplet_id: String,
    pub annotator_id: String,
    pub choice: usize,
}

/// Reads `triplet_id,annotator_id,choice` rows (with header).
pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let a: Annotation = row.map_err(|e| {
            Error::invalid(format!("{} row {}: {e}", path.display(), i + 2))
        })?;
        out.push(a);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::invalid(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationScore {
    pub accuracy: f64,
    pub kappa: f64,
    pub triplets: usize,
    pub annotators: usize,
}

/// Fleiss' κ from per-subject category counts. Every subject must have the
/// same number of ratings (at least two). When all ratings fall in one
/// category the agreement is perfect and κ = 1.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    let cats = counts[0].len();
    let n: usize = counts[0].iter().sum();
    if n < 2 {
        return Err(Error::invalid("Fleiss' kappa needs at least two ratings per subject"));
    }
    if counts.iter().any(|c| c.len() != cats || c.iter().sum::<usize>() != n) {
        return Err(Error::invalid("every subject needs the same number of ratings"));
    }
    let subjects = counts.len() as f64;
    let nf = n as f64;
    let p_bar = counts
        .iter()
        .map(|c| {
            let sq: f64 = c.iter().map(|&x| (x * x) as f64).sum();
            (sq - nf) / (nf * (nf - 1.0))
        })
        .sum::<f64>()
        / subjects;
    let pe: f64 = (0..cats)
        .map(|j| {
            let pj = counts.iter().map(|c| c[j] as f64).sum::<f64>() / (subjects * nf);
            pj * pj
        })
        .sum();
    if (1.0 - pe).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - pe) / (1.0 - pe))
}

/// Accuracy against the answer keys and Fleiss' κ over the three positions.
pub fn score_annotations(keys: &[AnswerKey], sheet: &[Annotation]) -> Result<AnnotationScore> {
    if keys.is_empty() {
        return Err(Error::invalid("no triplets to score"));
    }
    let key_of: HashMap<&str, usize> = keys
        .iter()
        .map(|k| (k.triplet_id.as_str(), k.answer_index))
        .collect();
    let mut annotators: Vec<&str> = sheet.iter().map(|a| a.annotator_id.as_str()).collect();
    annotators.sort();
    annotators.dedup();
    let mut cell: HashMap<(&str, &str), usize> = HashMap::new();
    for a in sheet {
        if a.choice > 2 {
            return Err(Error::invalid(format!(
                "annotator {} chose {} for {}; choices are 0..2",
                a.annotator_id, a.choice, a.triplet_id
            )));
        }
        if !key_of.contains_key(a.triplet_id.as_str()) {
            return Err(Error::invalid(format!("unknown triplet {}", a.triplet_id)));
        }
        if cell
            .insert((a.triplet_id.as_str(), a.annotator_id.as_str()), a.choice)
            .is_some()
        {
            return Err(Error::invalid(format!(
                "duplicate rating of {} by {}",
                a.triplet_id, a.annotator_id
            )));
        }
    }
    let mut correct = 0usize;
    let mut counts = Vec::with_capacity(keys.len());
    for k in keys {
        let mut c = vec![0usize; 3];
        for who in &annotators {
            let choice = *cell.get(&(k.triplet_id.as_str(), *who)).ok_or_else(|| {
                Error::invalid(format!("missing rating of {} by {who}", k.triplet_id))
            })?;
            c[choice] += 1;
            if choice == k.answer_index {
                correct += 1;
            }
        }
        counts.push(c);
    }
    Ok(AnnotationScore {
        accuracy: correct as f64 / (keys.len() * annotators.len()) as f64,
        kappa: fleiss_kappa(&counts)?,
        triplets: keys.len(),
        annotators: annotators.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn forced_structure() {
        let ts = sample_triplets(&[0, 0, 1], &strings(3, "c"), &strings(3, "d"), 10, 1).unwrap();
        for t in ts {
            assert_eq!(t.items[t.answer_index].id, "c2");
            assert_eq!((t.same_cluster, t.odd_cluster), (0, 1));
        }
    }

    #[test]
    fn ineligible_labelings_rejected() {
        assert!(sample_triplets(&[0, 1, 2], &strings(3, "c"), &strings(3, "d"), 1, 0).is_err());
        assert!(sample_triplets(&[4, 4, 4], &strings(3, "c"), &strings(3, "d"), 1, 0).is_err());
    }

    #[test]
    fn answer_positions_are_uniform() {
        let labels: Vec<usize> = (0..2000).map(|i| i % 500).collect();
        let ts = sample_triplets(&labels, &strings(2000, "c"), &strings(2000, "d"), 10_000, 7).unwrap();
        let mut obs = [0f64; 3];
        for t in &ts {
            obs[t.answer_index] += 1.0;
        }
        let e = 10_000.0 / 3.0;
        let chi2: f64 = obs.iter().map(|o| (o - e).powi(2) / e).sum();
        // χ² with 2 dof: p > 0.01 ⇔ statistic < 9.21
        assert!(chi2 < 9.21, "{obs:?} χ²={chi2}");
    }

    proptest! {
        #[test]
        fn two_plus_one_structure(
            labels in proptest::collection::vec(0usize..6, 3..40),
            seed in any::<u64>(),
        ) {
            let n = labels.len();
            let res = sample_triplets(&labels, &strings(n, "c"), &strings(n, "d"), 25, seed);
            let mut sizes = std::collections::HashMap::new();
            for l in &labels { *sizes.entry(*l).or_insert(0) += 1; }
            let ok = sizes.len() >= 2 && sizes.values().any(|&s| s >= 2);
            prop_assert_eq!(res.is_ok(), ok);
            if let Ok(ts) = res {
                prop_assert_eq!(ts.len(), 25);
                for t in ts {
                    let lab: Vec<usize> = t.items.iter()
                        .map(|it| labels[it.id[1..].parse::<usize>().unwrap()])
                        .collect();
                    prop_assert_ne!(t.same_cluster, t.odd_cluster);
                    prop_assert_eq!(lab[t.answer_index], t.odd_cluster);
                    prop_assert_eq!(lab.iter().filter(|&&l| l == t.same_cluster).count(), 2);
                    prop_assert_ne!(&t.items[0].id, &t.items[1].id);
                    prop_assert_ne!(&t.items[0].id, &t.items[2].id);
                    prop_assert_ne!(&t.items[1].id, &t.items[2].id);
                }
            }
        }
    }

    #[test]
    fn kappa_hand_case() {
        // (AAA), (AAB) over categories {A, B}
        let k = fleiss_kappa(&[vec![3, 0], vec![2, 1]]).unwrap();
        assert!((k + 0.2).abs() < 1e-12, "{k}");
    }

    #[test]
    fn kappa_is_invariant_to_relabeling_positions() {
        let a = fleiss_kappa(&[vec![3, 1, 0], vec![0, 2, 2], vec![1, 1, 2]]).unwrap();
        let b = fleiss_kappa(&[vec![0, 1, 3], vec![2, 2, 0], vec![2, 1, 1]]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    fn keys(answers: &[usize]) -> Vec<AnswerKey> {
        answers
            .iter()
            .enumerate()
            .map(|(i, &a)| AnswerKey {
                triplet_id: format!("t{i}"),
                answer_index: a,
                same_cluster: 0,
                odd_cluster: 1,
            })
            .collect()
    }

    fn sheet(choices: &[Vec<usize>]) -> Vec<Annotation> {
        let mut out = Vec::new();
        for (t, row) in choices.iter().enumerate() {
            for (a, &c) in row.iter().enumerate() {
                out.push(Annotation {
                    triplet_id: format!("t{t}"),
                    annotator_id: format!("a{a}"),
                    choice: c,
                });
            }
        }
        out
    }

    #[test]
    fn perfect_annotators() {
        let k = keys(&[0, 1, 2, 1]);
        let s = sheet(&[vec![0; 5], vec![1; 5], vec![2; 5], vec![1; 5]]);
        let r = score_annotations(&k, &s).unwrap();
        assert_eq!((r.accuracy, r.kappa), (1.0, 1.0));
        assert_eq!((r.triplets, r.annotators), (4, 5));
    }

    #[test]
    fn unanimous_identical_ratings_score_kappa_one() {
        let k = keys(&[0, 1]);
        let s = sheet(&[vec![2; 3], vec![2; 3]]);
        let r = score_annotations(&k, &s).unwrap();
        assert_eq!((r.accuracy, r.kappa), (0.0, 1.0));
    }

    #[test]
    fn full_scale_sheet_scores() {
        // 25 triplets × 15 annotators with 325 of 375 choices correct (86.7%)
        let answers: Vec<usize> = (0..25).map(|i| i % 3).collect();
        let mut wrong = 50;
        let choices: Vec<Vec<usize>> = answers
            .iter()
            .map(|&a| {
                (0..15)
                    .map(|_| {
                        if wrong > 0 {
                            wrong -= 1;
                            (a + 1) % 3
                        } else {
                            a
                        }
                    })
                    .collect()
            })
            .collect();
        let r = score_annotations(&keys(&answers), &sheet(&choices)).unwrap();
        assert!((r.accuracy - 325.0 / 375.0).abs() < 1e-12);
        assert!((r.accuracy - 0.867).abs() < 5e-4);
        assert!(r.kappa > 0.0 && r.kappa < 1.0);
    }

    #[test]
    fn missing_and_bad_cells_rejected() {
        let k = keys(&[0, 1]);
        let mut s = sheet(&[vec![0, 0], vec![1, 1]]);
        s.pop();
        assert!(score_annotations(&k, &s).is_err());
        let bad = sheet(&[vec![3, 0], vec![1, 1]]);
        assert!(score_annotations(&k, &bad).is_err());
    }

    #[test]
    fn annotation_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("annotations.csv");
        std::fs::write(&p, "triplet_id,annotator_id,choice\nt0,a0,2\nt0,\"a,1\",1\n").unwrap();
        let rows = read_annotations(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].annotator_id, "a,1");
        std::fs::write(&p, "triplet_id,annotator_id,choice\nt0,a0,x\n").unwrap();
        let err = read_annotations(&p).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }
}
