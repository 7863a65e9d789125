//! Keyword labels for clusters from the documents attached to their items.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::cluster::ClusterAssignment;
use crate::data::{id_index, TextCorpus};
use crate::error::{LdpoError, Result};

const MIN_TERM_LEN: usize = 3;

/// Lowercased alphabetic runs of at least three characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| t.chars().count() >= MIN_TERM_LEN)
        .map(str::to_lowercase)
        .collect()
}

/// How terms shared by all clusters are detected and dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CommonTermRule {
    /// Drop terms found in every cluster's top list.
    TopListIntersection,
    /// Drop terms occurring in at least this fraction of nonempty clusters.
    ClusterFrequency { min_fraction: f64 },
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordOptions {
    pub top_n: usize,
    pub stoplist: HashSet<String>,
    pub common_terms: CommonTermRule,
}

impl Default for KeywordOptions {
    fn default() -> Self {
        KeywordOptions {
            top_n: 10,
            stoplist: HashSet::new(),
            common_terms: CommonTermRule::TopListIntersection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCount {
    pub term: String,
    pub count: usize,
}

/// Ranked keywords, one list per cluster index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterKeywords {
    pub clusters: Vec<Vec<TermCount>>,
}

impl Serialize for ClusterKeywords {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.clusters.len()))?;
        for (c, terms) in self.clusters.iter().enumerate() {
            map.serialize_entry(&c.to_string(), terms)?;
        }
        map.end()
    }
}

impl ClusterKeywords {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("keywords serialize")
    }
}

fn ranked(counts: &HashMap<&str, usize>) -> Vec<TermCount> {
    let mut v: Vec<TermCount> = counts
        .iter()
        .map(|(t, &c)| TermCount {
            term: (*t).to_owned(),
            count: c,
        })
        .collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.term.cmp(&b.term)));
    v
}

/// Counts terms per cluster over the documents of its items, ranks them by
/// count (ties alphabetical) and returns at most `top_n` per cluster after
/// dropping stoplisted and common terms. `ids[i]` is the id of item `i` in
/// `assignment`; documents for unknown ids are an error.
pub fn extract_keywords(
    corpus: &TextCorpus,
    ids: &[String],
    assignment: &ClusterAssignment,
    options: &KeywordOptions,
) -> Result<ClusterKeywords> {
    if ids.len() != assignment.len() {
        return Err(LdpoError::DimensionMismatch {
            expected: assignment.len(),
            found: ids.len(),
        });
    }
    let index = id_index(ids);
    let k = assignment.k();
    let mut counts: Vec<HashMap<&str, usize>> = vec![HashMap::new(); k];
    for (id, tokens) in &corpus.documents {
        let item = *index.get(id.as_str()).ok_or_else(|| LdpoError::MissingId(id.clone()))?;
        let cluster = &mut counts[assignment.labels()[item]];
        for t in tokens {
            if !options.stoplist.contains(t) {
                *cluster.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let full: Vec<Vec<TermCount>> = counts.iter().map(ranked).collect();

    let removed: HashSet<String> = if k < 2 {
        HashSet::new()
    } else {
        match options.common_terms {
            CommonTermRule::Off => HashSet::new(),
            CommonTermRule::TopListIntersection => {
                let mut lists = full
                    .iter()
                    .map(|l| l.iter().take(options.top_n).map(|tc| tc.term.clone()).collect::<HashSet<_>>());
                let first = lists.next().unwrap_or_default();
                lists.fold(first, |acc, s| acc.intersection(&s).cloned().collect())
            }
            CommonTermRule::ClusterFrequency { min_fraction } => {
                let nonempty = counts.iter().filter(|c| !c.is_empty()).count();
                let mut spread: BTreeMap<&str, usize> = BTreeMap::new();
                for c in &counts {
                    for t in c.keys() {
                        *spread.entry(t).or_default() += 1;
                    }
                }
                spread
                    .into_iter()
                    .filter(|&(_, n)| nonempty > 0 && n as f64 >= min_fraction * nonempty as f64)
                    .map(|(t, _)| t.to_owned())
                    .collect()
            }
        }
    };

    let clusters = full
        .into_iter()
        .map(|l| {
            l.into_iter()
                .filter(|tc| !removed.contains(&tc.term))
                .take(options.top_n)
                .collect()
        })
        .collect();
    Ok(ClusterKeywords { clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    fn tc(term: &str, count: usize) -> TermCount {
        TermCount {
            term: term.into(),
            count,
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Left-lung MASS, 3cm; no  ok"), vec!["left", "lung", "mass"]);
        assert!(tokenize("a b 12 ..").is_empty());
    }

    #[test]
    fn common_term_removed() {
        let corpus = TextCorpus::from_texts([("d0", "mass mass lung"), ("d1", "lung"), ("d2", "bone bone lung")]);
        let a = ClusterAssignment::new(vec![0, 0, 1], 2).unwrap();
        let kw = extract_keywords(&corpus, &ids(3), &a, &KeywordOptions::default()).unwrap();
        assert_eq!(kw.clusters, vec![vec![tc("mass", 2)], vec![tc("bone", 2)]]);
        assert_eq!(
            serde_json::to_value(&kw).unwrap(),
            serde_json::json!({"0": [{"term": "mass", "count": 2}], "1": [{"term": "bone", "count": 2}]})
        );
    }

    #[test]
    fn single_cluster_keeps_everything() {
        let corpus = TextCorpus::from_texts([("d0", "mass mass lung"), ("d1", "lung")]);
        let a = ClusterAssignment::new(vec![0, 0], 1).unwrap();
        let kw = extract_keywords(&corpus, &ids(2), &a, &KeywordOptions::default()).unwrap();
        assert_eq!(kw.clusters, vec![vec![tc("lung", 2), tc("mass", 2)]]);
    }

    #[test]
    fn empty_documents_give_empty_lists() {
        let corpus = TextCorpus::from_texts([("d0", ""), ("d1", "")]);
        let a = ClusterAssignment::new(vec![0, 1], 2).unwrap();
        let kw = extract_keywords(&corpus, &ids(2), &a, &KeywordOptions::default()).unwrap();
        assert!(kw.clusters.iter().all(Vec::is_empty));
    }

    #[test]
    fn unknown_id_rejected() {
        let corpus = TextCorpus::from_texts([("zz", "mass")]);
        let a = ClusterAssignment::new(vec![0], 1).unwrap();
        let err = extract_keywords(&corpus, &ids(1), &a, &KeywordOptions::default()).unwrap_err();
        assert!(matches!(err, LdpoError::MissingId(id) if id == "zz"));
    }

    #[test]
    fn stoplist_and_backfill() {
        let corpus = TextCorpus::from_texts([("d0", "the the the cyst lung lung"), ("d1", "lung rib rib")]);
        let a = ClusterAssignment::new(vec![0, 1], 2).unwrap();
        let opts = KeywordOptions {
            top_n: 1,
            stoplist: ["the".to_owned()].into(),
            ..Default::default()
        };
        let kw = extract_keywords(&corpus, &ids(2), &a, &opts).unwrap();
        // lung tops cluster 0 but is only second in cluster 1, so it stays
        assert_eq!(kw.clusters, vec![vec![tc("lung", 2)], vec![tc("rib", 2)]]);

        let opts2 = KeywordOptions {
            top_n: 2,
            ..opts
        };
        let kw = extract_keywords(&corpus, &ids(2), &a, &opts2).unwrap();
        assert_eq!(kw.clusters, vec![vec![tc("cyst", 1)], vec![tc("rib", 2)]]);
    }

    #[test]
    fn cluster_frequency_rule() {
        let corpus = TextCorpus::from_texts([("d0", "mass lung"), ("d1", "bone lung"), ("d2", "lung")]);
        let a = ClusterAssignment::new(vec![0, 1, 2], 3).unwrap();
        let opts = KeywordOptions {
            common_terms: CommonTermRule::ClusterFrequency { min_fraction: 1.0 },
            ..Default::default()
        };
        let kw = extract_keywords(&corpus, &ids(3), &a, &opts).unwrap();
        assert_eq!(kw.clusters, vec![vec![tc("mass", 1)], vec![tc("bone", 1)], vec![]]);
    }

    const VOCAB: [&str; 6] = ["alpha", "beta", "gamma", "delta", "omega", "sigma"];

    fn corpus_strategy() -> impl Strategy<Value = (Vec<Vec<usize>>, Vec<usize>, usize)> {
        (2usize..10, 1usize..4).prop_flat_map(|(n, k)| {
            (
                prop::collection::vec(prop::collection::vec(0usize..VOCAB.len(), 0..8), n),
                prop::collection::vec(0..k, n),
                1usize..6,
            )
        })
    }

    proptest! {
        #[test]
        fn counts_match_brute_force((docs, labels, top_n) in corpus_strategy()) {
            let n = docs.len();
            let texts: Vec<(String, String)> = docs
                .iter()
                .enumerate()
                .map(|(i, d)| (format!("d{i}"), d.iter().map(|&w| VOCAB[w]).collect::<Vec<_>>().join(" ")))
                .collect();
            let corpus = TextCorpus::from_texts(texts);
            let a = ClusterAssignment::from_labels(labels.clone());
            let opts = KeywordOptions { top_n, ..Default::default() };
            let kw = extract_keywords(&corpus, &ids(n), &a, &opts).unwrap();
            let again = extract_keywords(&corpus, &ids(n), &a, &opts).unwrap();
            prop_assert_eq!(&kw, &again);

            // brute-force tally and pre-removal top lists
            let mut tops = Vec::new();
            for c in 0..a.k() {
                let mut tally = [0usize; VOCAB.len()];
                for (d, &l) in docs.iter().zip(&labels) {
                    if l == c {
                        for &w in d {
                            tally[w] += 1;
                        }
                    }
                }
                for t in &kw.clusters[c] {
                    let w = VOCAB.iter().position(|v| *v == t.term).unwrap();
                    prop_assert_eq!(t.count, tally[w]);
                    prop_assert!(t.count > 0);
                }
                for w in kw.clusters[c].windows(2) {
                    prop_assert!(w[0].count >= w[1].count);
                }
                let mut order: Vec<usize> = (0..VOCAB.len()).filter(|&w| tally[w] > 0).collect();
                order.sort_by(|&x, &y| tally[y].cmp(&tally[x]).then(VOCAB[x].cmp(VOCAB[y])));
                tops.push(order.into_iter().take(top_n).map(|w| VOCAB[w]).collect::<HashSet<_>>());
            }
            // a pre-removal top term is dropped exactly when it tops every cluster
            for c in 0..a.k() {
                for w in &tops[c] {
                    let everywhere = a.k() >= 2 && tops.iter().all(|t| t.contains(w));
                    let kept = kw.clusters[c].iter().any(|t| t.term == *w);
                    prop_assert_eq!(kept, !everywhere);
                }
            }
        }
    }
}
