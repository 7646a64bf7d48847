use crate::domain::{DomainKind, EmpiricalDistribution};
use crate::text::{split_sentences, tokenize, PosTag, PosTagger};

use super::{ttr, wasserstein1, MetricReport, MetricsError};

/// Report keys, in table order: document length, mean sentence length,
/// type-token ratio, then adjective/adverb/noun/verb proportions.
pub const LINGUISTIC_KEYS: [&str; 7] = [
    "wd.doc_len",
    "wd.avg_len",
    "wd.ttr",
    "wd.adj",
    "wd.adv",
    "wd.noun",
    "wd.verb",
];

/// Per-document statistics. Everything except `doc_len` is undefined for a
/// document with no tokens and is left out of the distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentStats {
    pub doc_len: f64,
    pub avg_len: Option<f64>,
    pub ttr: Option<f64>,
    /// Adj, Adv, Noun, Verb proportions of all tokens.
    pub pos: Option<[f64; 4]>,
}

pub fn document_stats(doc: &str, tagger: &dyn PosTagger) -> DocumentStats {
    let tokens = tokenize(doc);
    if tokens.is_empty() {
        return DocumentStats {
            doc_len: 0.0,
            avg_len: None,
            ttr: None,
            pos: None,
        };
    }
    let sentence_lens: Vec<usize> = split_sentences(doc)
        .into_iter()
        .map(|s| tokenize(s).len())
        .filter(|&n| n > 0)
        .collect();
    let avg_len = sentence_lens.iter().sum::<usize>() as f64 / sentence_lens.len() as f64;

    let mut counts = [0usize; 4];
    for t in &tokens {
        match tagger.tag(t) {
            PosTag::Adj => counts[0] += 1,
            PosTag::Adv => counts[1] += 1,
            PosTag::Noun => counts[2] += 1,
            PosTag::Verb => counts[3] += 1,
            PosTag::Other => {}
        }
    }
    let n = tokens.len() as f64;
    DocumentStats {
        doc_len: n,
        avg_len: Some(avg_len),
        ttr: ttr(&tokens).ok(),
        pos: Some(counts.map(|c| c as f64 / n)),
    }
}

fn columns(stats: &[DocumentStats]) -> [Vec<f64>; 7] {
    let mut cols: [Vec<f64>; 7] = Default::default();
    for s in stats {
        cols[0].push(s.doc_len);
        if let Some(v) = s.avg_len {
            cols[1].push(v);
        }
        if let Some(v) = s.ttr {
            cols[2].push(v);
        }
        if let Some(p) = s.pos {
            for k in 0..4 {
                cols[3 + k].push(p[k]);
            }
        }
    }
    cols
}

/// Wasserstein-1 distance between generated and real per-document
/// distributions of the seven linguistic statistics.
pub fn linguistic_suite<S: AsRef<str>>(
    generated: &[S],
    real: &[S],
    tagger: &dyn PosTagger,
    domain: DomainKind,
) -> Result<MetricReport, MetricsError> {
    if generated.is_empty() || real.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let stats =
        |docs: &[S]| -> Vec<DocumentStats> { docs.iter().map(|d| document_stats(d.as_ref(), tagger)).collect() };
    let gen_cols = columns(&stats(generated));
    let real_cols = columns(&stats(real));

    let mut report = MetricReport::new(domain, generated.len());
    report.metadata.insert("tagger".into(), tagger.identity());
    report
        .metadata
        .insert("tokenizer".into(), "unicode-words-lowercase-v1".into());
    for ((key, g), r) in LINGUISTIC_KEYS.iter().zip(gen_cols).zip(real_cols) {
        let g = EmpiricalDistribution::new(g).map_err(|_| MetricsError::EmptyCorpus)?;
        let r = EmpiricalDistribution::new(r).map_err(|_| MetricsError::EmptyCorpus)?;
        report.insert(*key, wasserstein1(&g, &r));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::LexiconTagger;

    #[test]
    fn identical_corpora_give_zero() {
        let docs = ["The food was great. Very tasty!", "I went there again today."];
        let r = linguistic_suite(&docs, &docs, &LexiconTagger::default(), DomainKind::MediaReview).unwrap();
        for k in LINGUISTIC_KEYS {
            assert_eq!(r.get(k), Some(0.0), "{k}");
        }
        assert_eq!(r.metadata["tagger"], "lexicon-suffix-v1");
    }

    #[test]
    fn doc_len_single_point() {
        let r = linguistic_suite(
            &["a b."],
            &["a b c d."],
            &LexiconTagger::default(),
            DomainKind::MediaReview,
        )
        .unwrap();
        assert_eq!(r.get("wd.doc_len"), Some(2.0));
    }

    #[test]
    fn empty_corpus_is_error() {
        let empty: [&str; 0] = [];
        assert_eq!(
            linguistic_suite(&empty, &["x"], &LexiconTagger::default(), DomainKind::Conversation),
            Err(MetricsError::EmptyCorpus)
        );
    }

    #[test]
    fn document_stats_values() {
        let s = document_stats("Good food. Good food is good!", &LexiconTagger::default());
        assert_eq!(s.doc_len, 6.0);
        assert_eq!(s.avg_len, Some(3.0));
        assert_eq!(s.ttr, Some(0.5));
        // good ×3 adj, food ×2 noun, is verb.
        assert_eq!(s.pos, Some([0.5, 0.0, 2.0 / 6.0, 1.0 / 6.0]));
    }
}
