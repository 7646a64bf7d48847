//! BM25 retrieval over an agent's own interaction history.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::InteractionRecord;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25 {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25 {
    fn default() -> Self {
        Bm25 { k1: 1.2, b: 0.75 }
    }
}

/// BM25 score of each document against the query, with the non-negative
/// idf `ln(1 + (N - df + 0.5) / (df + 0.5))`. Repeated query terms count once.
pub fn bm25_scores<S: AsRef<str>>(docs: &[S], query: &str, params: Bm25) -> Vec<f64> {
    let n = docs.len();
    if n == 0 {
        return Vec::new();
    }
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d.as_ref())).collect();
    let avgdl = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();

    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &tokenized {
        let uniq: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
        for t in uniq {
            if terms.contains(t) {
                *df.entry(t).or_default() += 1;
            }
        }
    }

    tokenized
        .iter()
        .map(|doc| {
            let dl = doc.len() as f64;
            let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
            terms
                .iter()
                .map(|t| {
                    let f = doc.iter().filter(|w| *w == t).count() as f64;
                    if f == 0.0 {
                        return 0.0;
                    }
                    let d = df[t.as_str()] as f64;
                    let idf = (1.0 + (n as f64 - d + 0.5) / (d + 0.5)).ln();
                    idf * f * (params.k1 + 1.0) / (f + params.k1 * (1.0 - params.b + params.b * norm))
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryBundle {
    /// The current thread or day, verbatim.
    pub working: String,
    /// Retrieved history, best match first.
    pub longterm: Vec<InteractionRecord>,
}

fn history_text(r: &InteractionRecord) -> String {
    let mut s = format!("{} {}", r.context_text, r.action_text);
    if let Some(p) = &r.poi_category {
        s.push(' ');
        s.push_str(p);
    }
    s
}

/// Working memory is the query itself; long-term memory is the `limit`
/// history records that score highest under BM25. Ties go to the more recent
/// record (missing timestamps count as oldest), then to the smaller record id.
pub fn construct_memory(history: &[InteractionRecord], query: &str, limit: usize) -> MemoryBundle {
    let docs: Vec<String> = history.iter().map(history_text).collect();
    let scores = bm25_scores(&docs, query, Bm25::default());
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| match (history[a].timestamp, history[b].timestamp) {
                (Some(x), Some(y)) => y.cmp(&x),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            })
            .then_with(|| history[a].record_id.cmp(&history[b].record_id))
    });
    MemoryBundle {
        working: query.to_string(),
        longterm: order.into_iter().take(limit).map(|i| history[i].clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainKind;

    fn rec(id: &str, text: &str, ts: Option<i64>) -> InteractionRecord {
        InteractionRecord {
            record_id: id.into(),
            user_id: "u".into(),
            domain: DomainKind::Conversation,
            context_text: text.into(),
            action_text: String::new(),
            rating: None,
            sentiment: None,
            attitude: None,
            poi_category: None,
            stay_minutes: None,
            group_key: None,
            timestamp: ts,
        }
    }

    #[test]
    fn empty_and_zero_limit() {
        assert!(construct_memory(&[], "q", 5).longterm.is_empty());
        let h = vec![rec("a", "x", None)];
        assert!(construct_memory(&h, "x", 0).longterm.is_empty());
        assert_eq!(construct_memory(&h, "x", 0).working, "x");
    }

    #[test]
    fn hand_computed_scores() {
        // N = 3, avgdl = 2. Query "apple": df = 1, idf = ln(1 + 2.5/1.5).
        let docs = ["apple pie", "banana split", "cherry tart"];
        let s = bm25_scores(&docs, "apple", Bm25::default());
        let idf = (1.0_f64 + 2.5 / 1.5).ln();
        let expected = idf * 1.0 * 2.2 / (1.0 + 1.2);
        assert!((s[0] - expected).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn ties_by_recency_then_id() {
        let h = vec![
            rec("b", "same", Some(1)),
            rec("a", "same", Some(1)),
            rec("c", "same", Some(5)),
            rec("d", "same", None),
        ];
        let ids: Vec<_> = construct_memory(&h, "same", 4)
            .longterm
            .into_iter()
            .map(|r| r.record_id)
            .collect();
        assert_eq!(ids, vec!["c", "a", "b", "d"]);
    }
}
