//! Word-to-value projection.
//!
//! Each context document carries a value activation vector. A word's relevance
//! to value k is the TF-IDF-weighted mean of the activations of the documents
//! it appears in:
//!
//! ```text
//! S(w, k) = Σ_i t(w,i) · a_k(i) / (Σ_i t(w,i) + ε)
//! ```
//!
//! TF-IDF variant: tf = count / document length (after stop-word removal),
//! idf = ln((1 + N) / (1 + df)) + 1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::domain::{canonical_order, ValueActivation, ValueDimension, NUM_VALUES};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const TFIDF_VARIANT: &str = "tf=count/len;idf=ln((1+N)/(1+df))+1";

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en_v1.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LexicalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{activations} activations for {documents} documents")]
    LengthMismatch { documents: usize, activations: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords {
    words: HashSet<String>,
    pub version: String,
}

impl StopWords {
    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_STOPWORDS, "en-v1")
    }

    pub fn none() -> Self {
        StopWords {
            words: HashSet::new(),
            version: "none".into(),
        }
    }

    /// One word per line; `#` starts a comment line.
    pub fn from_text(text: &str, version: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        StopWords {
            words,
            version: version.to_string(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCorpus {
    /// Documents with stop words removed.
    pub documents: Vec<Vec<String>>,
    /// Sorted vocabulary of every remaining token.
    pub vocabulary: Vec<String>,
    /// Per document: vocabulary index → t(w, i). Absent entries are zero.
    weights: Vec<BTreeMap<usize, f64>>,
}

impl WeightedCorpus {
    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.vocabulary.binary_search_by(|w| w.as_str().cmp(word)).ok()
    }

    pub fn weight(&self, word: &str, doc: usize) -> f64 {
        self.word_index(word)
            .and_then(|w| self.weights.get(doc)?.get(&w).copied())
            .unwrap_or(0.0)
    }

    pub fn doc_weights(&self, doc: usize) -> &BTreeMap<usize, f64> {
        &self.weights[doc]
    }
}

pub fn tfidf_weights<S: AsRef<str>>(corpus: &[Vec<S>], stopwords: &StopWords) -> Result<WeightedCorpus, LexicalError> {
    if corpus.is_empty() {
        return Err(LexicalError::EmptyCorpus);
    }
    let documents: Vec<Vec<String>> = corpus
        .iter()
        .map(|doc| {
            doc.iter()
                .map(|t| t.as_ref().to_lowercase())
                .filter(|t| !stopwords.contains(t))
                .collect()
        })
        .collect();

    let mut vocabulary: Vec<String> = documents.iter().flatten().cloned().collect();
    vocabulary.sort();
    vocabulary.dedup();
    let index: HashMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();

    let counts: Vec<BTreeMap<usize, usize>> = documents
        .iter()
        .map(|doc| {
            let mut c = BTreeMap::new();
            for t in doc {
                *c.entry(index[t.as_str()]).or_insert(0) += 1;
            }
            c
        })
        .collect();
    let mut df = vec![0usize; vocabulary.len()];
    for c in &counts {
        for &w in c.keys() {
            df[w] += 1;
        }
    }
    let n = documents.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
    let weights = counts
        .iter()
        .zip(&documents)
        .map(|(c, doc)| {
            let len = doc.len() as f64;
            c.iter().map(|(&w, &count)| (w, count as f64 / len * idf[w])).collect()
        })
        .collect();
    Ok(WeightedCorpus {
        documents,
        vocabulary,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix {
    pub words: Vec<String>,
    pub raw: Vec<[f64; NUM_VALUES]>,
    /// Row-wise min-max normalized scores, once `row_normalize` has run.
    pub normalized: Option<Vec<[f64; NUM_VALUES]>>,
    /// Rows whose raw scores are all equal; their normalized row is all zeros.
    pub constant_rows: Vec<bool>,
}

impl RelevanceMatrix {
    pub fn from_raw(words: Vec<String>, raw: Vec<[f64; NUM_VALUES]>) -> Self {
        let n = raw.len();
        RelevanceMatrix {
            words,
            raw,
            normalized: None,
            constant_rows: vec![false; n],
        }
    }

    pub fn row(&self, word: &str) -> Option<&[f64; NUM_VALUES]> {
        let i = self.words.iter().position(|w| w == word)?;
        Some(&self.raw[i])
    }
}

pub fn relevance(
    weighted: &WeightedCorpus,
    activations: &[ValueActivation],
    epsilon: f64,
) -> Result<RelevanceMatrix, LexicalError> {
    if activations.len() != weighted.num_documents() {
        return Err(LexicalError::LengthMismatch {
            documents: weighted.num_documents(),
            activations: activations.len(),
        });
    }
    let v = weighted.vocabulary.len();
    let mut numer = vec![[0.0; NUM_VALUES]; v];
    let mut denom = vec![0.0; v];
    for (doc, act) in weighted.weights.iter().zip(activations) {
        for (&w, &t) in doc {
            denom[w] += t;
            for (k, a) in act.weights().iter().enumerate() {
                numer[w][k] += t * a;
            }
        }
    }
    let raw = numer
        .into_iter()
        .zip(denom)
        .map(|(row, d)| row.map(|x| x / (d + epsilon)))
        .collect();
    Ok(RelevanceMatrix::from_raw(weighted.vocabulary.clone(), raw))
}

pub fn row_normalize(m: &RelevanceMatrix) -> RelevanceMatrix {
    let mut constant_rows = Vec::with_capacity(m.raw.len());
    let normalized = m
        .raw
        .iter()
        .map(|row| {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = max - min;
            constant_rows.push(span <= 0.0);
            if span <= 0.0 {
                [0.0; NUM_VALUES]
            } else {
                row.map(|s| ((s - min) / span).clamp(0.0, 1.0))
            }
        })
        .collect();
    RelevanceMatrix {
        words: m.words.clone(),
        raw: m.raw.clone(),
        normalized: Some(normalized),
        constant_rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopWords {
    pub words: Vec<(String, f64)>,
    /// Set when k exceeded the vocabulary and the full ranking was returned.
    pub k_too_large: bool,
}

/// Top-k words by unnormalized score for one value; ties go to the
/// lexicographically smaller word.
pub fn top_words(m: &RelevanceMatrix, dim: ValueDimension, k: usize) -> Result<TopWords, LexicalError> {
    if k == 0 {
        return Err(LexicalError::InvalidK);
    }
    let mut ranked: Vec<(String, f64)> = m
        .words
        .iter()
        .zip(&m.raw)
        .map(|(w, row)| (w.clone(), row[dim.index()]))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let k_too_large = k > ranked.len();
    ranked.truncate(k);
    Ok(TopWords {
        words: ranked,
        k_too_large,
    })
}

/// Per-group arithmetic mean of activation vectors.
pub fn group_activation<S: AsRef<str>>(
    records: &[(S, ValueActivation)],
) -> Result<BTreeMap<String, ValueActivation>, LexicalError> {
    if records.is_empty() {
        return Err(LexicalError::EmptyInput);
    }
    let mut sums: BTreeMap<String, ([f64; NUM_VALUES], usize)> = BTreeMap::new();
    for (key, act) in records {
        let entry = sums.entry(key.as_ref().to_string()).or_insert(([0.0; NUM_VALUES], 0));
        for (s, a) in entry.0.iter_mut().zip(act.weights()) {
            *s += a;
        }
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (sum, n))| {
            let mean = sum.map(|s| (s / n as f64).clamp(0.0, 1.0));
            (
                k,
                ValueActivation::new(&mean).expect("mean of activations is an activation"),
            )
        })
        .collect())
}

fn primary_dimension(row: &[f64; NUM_VALUES]) -> usize {
    let mut best = 0;
    for k in 1..NUM_VALUES {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Tab-separated heatmap: word, ten normalized columns, primary value.
/// Rows are grouped by primary value in circumplex order, then by
/// descending raw score on that value; constant rows come last.
pub fn heatmap_tsv(m: &RelevanceMatrix) -> String {
    let normed = match &m.normalized {
        Some(_) => m.clone(),
        None => row_normalize(m),
    };
    let norm = normed.normalized.as_ref().expect("normalized above");
    let mut order: Vec<usize> = (0..m.words.len()).collect();
    let key = |i: usize| -> (usize, f64) {
        if normed.constant_rows[i] {
            (NUM_VALUES, 0.0)
        } else {
            let p = primary_dimension(&m.raw[i]);
            (p, m.raw[i][p])
        }
    };
    order.sort_by(|&a, &b| {
        let (pa, sa) = key(a);
        let (pb, sb) = key(b);
        pa.cmp(&pb)
            .then(sb.total_cmp(&sa))
            .then_with(|| m.words[a].cmp(&m.words[b]))
    });

    let mut out = String::from("word");
    for d in canonical_order() {
        let _ = write!(out, "\t{d}");
    }
    out.push_str("\tprimary\n");
    for i in order {
        out.push_str(&m.words[i]);
        for v in norm[i] {
            let _ = write!(out, "\t{v:.6}");
        }
        let primary = if normed.constant_rows[i] {
            "-".to_string()
        } else {
            canonical_order()[primary_dimension(&m.raw[i])].to_string()
        };
        let _ = writeln!(out, "\t{primary}");
    }
    out
}

/// Tab-separated word-cloud data: value, word, raw score; top `k` per value.
pub fn wordcloud_tsv(m: &RelevanceMatrix, k: usize) -> Result<String, LexicalError> {
    let mut out = String::from("value\tword\tscore\n");
    for d in canonical_order() {
        for (w, s) in top_words(m, d, k)?.words {
            let _ = writeln!(out, "{d}\t{w}\t{s:.6}");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(k: usize, v: f64) -> ValueActivation {
        let mut w = [0.0; NUM_VALUES];
        w[k] = v;
        ValueActivation::new(&w).unwrap()
    }

    fn docs(list: &[&[&str]]) -> Vec<Vec<String>> {
        list.iter().map(|d| d.iter().map(|s| s.to_string()).collect()).collect()
    }

    #[test]
    fn tfidf_single_document() {
        let c = tfidf_weights(&docs(&[&["apple", "apple", "pear", "plum"]]), &StopWords::none()).unwrap();
        // tf = 2/4, idf = ln(2/2) + 1 = 1.
        assert_eq!(c.weight("apple", 0), 0.5);
        assert_eq!(c.weight("kiwi", 0), 0.0);
    }

    #[test]
    fn tfidf_absent_word_and_stopwords() {
        let c = tfidf_weights(&docs(&[&["the", "cat"], &["dog"]]), &StopWords::bundled()).unwrap();
        assert_eq!(c.weight("cat", 1), 0.0);
        assert!(c.word_index("the").is_none());
        assert_eq!(c.vocabulary, vec!["cat", "dog"]);
        // the cat doc has length 1 after removal; idf = ln(3/2)+1.
        assert!((c.weight("cat", 0) - ((1.5f64).ln() + 1.0)).abs() < 1e-15);
        assert!(tfidf_weights::<String>(&[], &StopWords::none()).is_err());
    }

    #[test]
    fn relevance_examples() {
        // One document with t = 1: tf = 1/1, idf = ln(2/2)+1 = 1.
        let c = tfidf_weights(&docs(&[&["w"]]), &StopWords::none()).unwrap();
        let m = relevance(&c, &[act(2, 0.7)], 0.0).unwrap();
        assert!((m.row("w").unwrap()[2] - 0.7).abs() < 1e-15);

        let c = tfidf_weights(&docs(&[&["w"], &["w"]]), &StopWords::none()).unwrap();
        let m = relevance(&c, &[act(2, 0.2), act(2, 0.8)], 0.0).unwrap();
        assert!((m.row("w").unwrap()[2] - 0.5).abs() < 1e-15);

        assert!(matches!(
            relevance(&c, &[act(0, 0.1)], 0.0),
            Err(LexicalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_weight_word_scores_zero() {
        let c = WeightedCorpus {
            documents: vec![vec!["w".into()]],
            vocabulary: vec!["w".into()],
            weights: vec![BTreeMap::from([(0, 0.0)])],
        };
        let m = relevance(&c, &[act(1, 0.9)], 1e-8).unwrap();
        assert_eq!(m.raw[0], [0.0; NUM_VALUES]);
    }

    #[test]
    fn normalization_cases() {
        let mut row = [0.2; NUM_VALUES];
        row[1] = 0.4;
        row[2] = 0.6;
        let m = RelevanceMatrix::from_raw(vec!["a".into(), "c".into()], vec![row, [0.3; NUM_VALUES]]);
        let n = row_normalize(&m);
        let norm = n.normalized.as_ref().unwrap();
        assert_eq!(norm[0][0], 0.0);
        assert!((norm[0][1] - 0.5).abs() < 1e-12);
        assert_eq!(norm[0][2], 1.0);
        assert_eq!(norm[1], [0.0; NUM_VALUES]);
        assert_eq!(n.constant_rows, vec![false, true]);

        // Idempotent on a row that already spans [0, 1].
        let again = row_normalize(&RelevanceMatrix::from_raw(vec!["a".into()], vec![norm[0]]));
        assert_eq!(again.normalized.unwrap()[0], norm[0]);
    }

    #[test]
    fn top_words_ordering() {
        let mut hi = [0.0; NUM_VALUES];
        hi[0] = 0.9;
        let mut lo = [0.0; NUM_VALUES];
        lo[0] = 0.1;
        let m = RelevanceMatrix::from_raw(vec!["lo".into(), "hi".into()], vec![lo, hi]);
        let t = top_words(&m, ValueDimension::SelfDirection, 1).unwrap();
        assert_eq!(t.words, vec![("hi".to_string(), 0.9)]);
        assert!(!t.k_too_large);

        let mut tie = [0.0; NUM_VALUES];
        tie[0] = 0.5;
        let m = RelevanceMatrix::from_raw(vec!["zebra".into(), "apple".into()], vec![tie, tie]);
        let t = top_words(&m, ValueDimension::SelfDirection, 1).unwrap();
        assert_eq!(t.words[0].0, "apple");

        let t = top_words(&m, ValueDimension::SelfDirection, 5).unwrap();
        assert_eq!(t.words.len(), 2);
        assert!(t.k_too_large);
        assert_eq!(
            top_words(&m, ValueDimension::SelfDirection, 0),
            Err(LexicalError::InvalidK)
        );
    }

    #[test]
    fn group_activation_means() {
        let g = group_activation(&[("cmv", act(3, 0.2)), ("cmv", act(3, 0.8))]).unwrap();
        assert!((g["cmv"].weights()[3] - 0.5).abs() < 1e-15);
        let g = group_activation(&[("eli5", act(1, 0.4))]).unwrap();
        assert_eq!(g["eli5"], act(1, 0.4));
        assert!(group_activation::<&str>(&[]).is_err());
    }

    #[test]
    fn heatmap_sorted_by_primary_value() {
        let mut a = [0.0; NUM_VALUES];
        a[4] = 0.9;
        let mut b = [0.0; NUM_VALUES];
        b[1] = 0.5;
        let mut c = [0.0; NUM_VALUES];
        c[1] = 0.7;
        let m = RelevanceMatrix::from_raw(
            vec!["power".into(), "thrill".into(), "novel".into(), "flat".into()],
            vec![a, b, c, [0.1; NUM_VALUES]],
        );
        let tsv = heatmap_tsv(&m);
        let words: Vec<&str> = tsv.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(words, vec!["novel", "thrill", "power", "flat"]);
        assert!(tsv.lines().next().unwrap().starts_with("word\tSelf-Direction"));
        assert!(tsv.lines().last().unwrap().ends_with("\t-"));
    }
}
