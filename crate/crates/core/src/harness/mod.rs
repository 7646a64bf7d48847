//! Agent decision protocols and preference-data construction.
//!
//! Two protocols drive a text generator:
//!
//! - [`reasoning_loop`]: one initial generation, then `T` rounds that pool the
//!   current best with `K - 1` fresh candidates and keep the argmax under a
//!   scorer.
//! - [`generate_then_select`]: `N` candidates in one batch, scored once.
//!
//! Ties always go to the earliest candidate in generation order.

mod memory;
mod mock;
mod prompt;
pub mod wire;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CandidateSet, InteractionRecord, PreferencePair, ValueProfile};
use crate::seed;
use crate::text::tokenize;
use crate::verifier::{self, TextEncoder, VerifierParams};

pub use memory::{bm25_scores, construct_memory, Bm25, MemoryBundle};
pub use mock::{latent_of, BiasedScorer, LengthScorer, MockGenerator, ScriptedGenerator, DEFAULT_BIAS_TARGET};
pub use prompt::{
    format_hours, parse_completion, parse_rating, parse_sentinels, parse_stay_minutes, render_completion,
    render_prompt, Prediction, SentinelError, VALUE_TAG,
};

pub const DPO_CANDIDATES: usize = 10;
pub const VERIFIER_CANDIDATES: usize = 5;
pub const PAIR_TEMPERATURE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    pub retry_after_ms: Option<u64>,
}

impl BackendError {
    pub fn new(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retry_after_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("backend failure in round {round}: {source}")]
    BackendFailure { round: usize, source: BackendError },
    #[error("record {record_id} lacks field {field}")]
    MissingField { record_id: String, field: &'static str },
}

/// What a backend declares about itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol_version: u32,
    pub deterministic: bool,
    pub max_inflight: u32,
}

pub const PROTOCOL_VERSION: u32 = 1;

impl Default for Handshake {
    fn default() -> Self {
        Handshake {
            protocol_version: PROTOCOL_VERSION,
            deterministic: true,
            max_inflight: 64,
        }
    }
}

pub trait GeneratorBackend: Send + Sync {
    fn generate(
        &self,
        context: &str,
        profile: &ValueProfile,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<CandidateSet, BackendError>;

    fn handshake(&self) -> Result<Handshake, BackendError> {
        Ok(Handshake::default())
    }
}

pub trait ScorerBackend: Send + Sync {
    fn score(&self, action: &str, context: &str, profile: &ValueProfile) -> Result<f64, BackendError>;
}

/// Scores with a trained verifier and a text encoder of matching width.
pub struct VerifierScorer<E: TextEncoder> {
    pub params: VerifierParams,
    pub encoder: E,
}

impl<E: TextEncoder> ScorerBackend for VerifierScorer<E> {
    fn score(&self, action: &str, context: &str, profile: &ValueProfile) -> Result<f64, BackendError> {
        verifier::score(&self.params, &self.encoder, action, context, profile)
            .map(|s| s.score)
            .map_err(|e| BackendError::new(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// K: pool size per reasoning round.
    pub candidates: usize,
    /// T: reasoning rounds.
    pub rounds: usize,
    /// N: batch size for generate-then-select.
    pub cva_candidates: usize,
    pub temperature: f64,
    pub seed: u64,
    pub retrieval_limit: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            candidates: 3,
            rounds: 0,
            cva_candidates: 5,
            temperature: 0.8,
            seed: 0,
            retrieval_limit: 5,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.candidates == 0 {
            return Err(HarnessError::InvalidConfig("candidates must be at least 1".into()));
        }
        if self.cva_candidates == 0 {
            return Err(HarnessError::InvalidConfig("cva candidates must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(HarnessError::InvalidConfig(
                "temperature must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One agent decision: the prompt shown to the generator, the raw context the
/// scorer sees, and the agent's value profile.
#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub prompt: &'a str,
    pub context: &'a str,
    pub profile: &'a ValueProfile,
}

/// Seed for generation round `round` of an agent. Round 0 is the initial
/// generation, so a run with more rounds extends a run with fewer.
pub fn round_seed(agent_seed: u64, round: usize) -> u64 {
    seed::derive(agent_seed, &format!("round:{round}"))
}

/// Upper bound on how long a retry hint may stall a call.
pub const MAX_RETRY_WAIT_MS: u64 = 10_000;

/// Calls `f`, retrying once on failure after the backend's retry hint (capped).
pub fn with_retry<T>(mut f: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
    match f() {
        Ok(v) => Ok(v),
        Err(first) => {
            log::warn!("backend call failed, retrying once: {first}");
            if let Some(ms) = first.retry_after_ms {
                std::thread::sleep(std::time::Duration::from_millis(ms.min(MAX_RETRY_WAIT_MS)));
            }
            f()
        }
    }
}

fn generate_exact(
    gen: &dyn GeneratorBackend,
    task: &Task,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<String>, BackendError> {
    let set = with_retry(|| gen.generate(task.prompt, task.profile, n, temperature, seed))?;
    if set.len() != n {
        return Err(BackendError::new(format!(
            "asked for {n} candidates, backend returned {}",
            set.len()
        )));
    }
    Ok(set.into_candidates())
}

fn score_all(scorer: &dyn ScorerBackend, pool: &[String], task: &Task) -> Result<Vec<f64>, BackendError> {
    pool.iter()
        .map(|a| {
            let s = with_retry(|| scorer.score(a, task.context, task.profile))?;
            if s.is_nan() {
                return Err(BackendError::new("scorer returned NaN"));
            }
            Ok(s)
        })
        .collect()
}

/// Index of the largest score; the earliest wins ties.
pub fn select_argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// The single initial generation used by the reasoning loop.
pub fn bare_generation(
    gen: &dyn GeneratorBackend,
    task: &Task,
    cfg: &SimulationConfig,
) -> Result<String, HarnessError> {
    let mut out = generate_exact(gen, task, 1, cfg.temperature, round_seed(cfg.seed, 0))
        .map_err(|source| HarnessError::BackendFailure { round: 0, source })?;
    Ok(out.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub round: usize,
    /// Previous best first, then the new candidates in generation order.
    pub pool: Vec<String>,
    pub scores: Vec<f64>,
    pub best_index: usize,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningOutcome {
    pub initial: String,
    pub action: String,
    pub rounds: Vec<RoundAudit>,
}

pub fn reasoning_loop(
    gen: &dyn GeneratorBackend,
    scorer: &dyn ScorerBackend,
    task: &Task,
    cfg: &SimulationConfig,
) -> Result<ReasoningOutcome, HarnessError> {
    cfg.validate()?;
    let initial = bare_generation(gen, task, cfg)?;
    let mut best = initial.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let fail = |source| HarnessError::BackendFailure { round, source };
        let mut pool = vec![best.clone()];
        if cfg.candidates > 1 {
            pool.extend(
                generate_exact(
                    gen,
                    task,
                    cfg.candidates - 1,
                    cfg.temperature,
                    round_seed(cfg.seed, round),
                )
                .map_err(fail)?,
            );
        }
        let scores = score_all(scorer, &pool, task).map_err(fail)?;
        let best_index = select_argmax(&scores).expect("pool is non-empty");
        best = pool[best_index].clone();
        rounds.push(RoundAudit {
            round,
            best_score: scores[best_index],
            pool,
            scores,
            best_index,
        });
    }
    Ok(ReasoningOutcome {
        initial,
        action: best,
        rounds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub action: String,
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
}

pub fn generate_then_select(
    gen: &dyn GeneratorBackend,
    scorer: &dyn ScorerBackend,
    task: &Task,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<Selection, HarnessError> {
    if n == 0 {
        return Err(HarnessError::InvalidConfig("n must be at least 1".into()));
    }
    let fail = |source| HarnessError::BackendFailure { round: 0, source };
    let candidates = generate_exact(gen, task, n, temperature, seed).map_err(fail)?;
    let scores = score_all(scorer, &candidates, task).map_err(fail)?;
    let index = select_argmax(&scores).expect("n >= 1");
    Ok(Selection {
        index,
        action: candidates[index].clone(),
        candidates,
        scores,
    })
}

/// Similarity between a candidate and the ground truth.
pub type SimilarityFn = dyn Fn(&str, &str) -> f64 + Sync;

/// F1 of the token multisets of the two texts. Two empty texts are identical.
pub fn unigram_f1(candidate: &str, truth: &str) -> f64 {
    let count = |text: &str| {
        let mut m: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokenize(text) {
            *m.entry(t).or_default() += 1;
        }
        m
    };
    let (c, t) = (count(candidate), count(truth));
    let (nc, nt) = (c.values().sum::<usize>(), t.values().sum::<usize>());
    if nc == 0 && nt == 0 {
        return 1.0;
    }
    let overlap: usize = c.iter().map(|(w, &k)| k.min(t.get(w).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / nc as f64;
    let r = overlap as f64 / nt as f64;
    2.0 * p * r / (p + r)
}

/// Chosen = most similar, rejected = least similar, earliest on ties.
pub fn pick_pair(candidates: &[String], similarity: &[f64]) -> (usize, usize, bool) {
    let mut hi = 0;
    let mut lo = 0;
    for i in 1..similarity.len() {
        if similarity[i] > similarity[hi] {
            hi = i;
        }
        if similarity[i] < similarity[lo] {
            lo = i;
        }
    }
    let degenerate = similarity[hi] == similarity[lo] || candidates[hi] == candidates[lo];
    (hi, lo, degenerate)
}

/// A record prepared for pair construction.
#[derive(Debug, Clone)]
pub struct PairSource<'a> {
    pub record: &'a InteractionRecord,
    pub profile: &'a ValueProfile,
    pub prompt: String,
    /// Ground-truth completion the candidates are compared against.
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Pair(PreferencePair),
    Skipped { record_id: String, reason: String },
}

/// Sample `k` candidates per record and keep the most and least similar to
/// the reference. Backend failures (after one retry) skip the record.
pub fn build_preference_pairs(
    gen: &dyn GeneratorBackend,
    similarity: &SimilarityFn,
    sources: &[PairSource],
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<PairOutcome>, HarnessError> {
    if k == 0 {
        return Err(HarnessError::InvalidConfig("k must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(sources.len());
    for src in sources {
        let task = Task {
            prompt: &src.prompt,
            context: &src.record.context_text,
            profile: src.profile,
        };
        let rseed = seed::derive(seed, &format!("pairs:{}", src.record.record_id));
        match generate_exact(gen, &task, k, temperature, rseed) {
            Ok(cands) => {
                let sims: Vec<f64> = cands.iter().map(|c| similarity(c, &src.reference)).collect();
                let (hi, lo, degenerate) = pick_pair(&cands, &sims);
                if degenerate {
                    log::info!("record {}: all candidates equally similar", src.record.record_id);
                }
                out.push(PairOutcome::Pair(PreferencePair {
                    record_id: src.record.record_id.clone(),
                    context_text: src.record.context_text.clone(),
                    value_profile: *src.profile,
                    chosen: cands[hi].clone(),
                    rejected: cands[lo].clone(),
                    chosen_score: sims[hi],
                    rejected_score: sims[lo],
                    degenerate,
                }));
            }
            Err(e) => {
                log::warn!("record {} skipped: {e}", src.record.record_id);
                out.push(PairOutcome::Skipped {
                    record_id: src.record.record_id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub fn build_dpo_pairs(
    gen: &dyn GeneratorBackend,
    similarity: &SimilarityFn,
    sources: &[PairSource],
    seed: u64,
) -> Result<Vec<PairOutcome>, HarnessError> {
    build_preference_pairs(gen, similarity, sources, DPO_CANDIDATES, PAIR_TEMPERATURE, seed)
}

pub fn build_verifier_pairs(
    gen: &dyn GeneratorBackend,
    similarity: &SimilarityFn,
    sources: &[PairSource],
    seed: u64,
) -> Result<Vec<PairOutcome>, HarnessError> {
    build_preference_pairs(gen, similarity, sources, VERIFIER_CANDIDATES, PAIR_TEMPERATURE, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainKind;

    fn task<'a>(profile: &'a ValueProfile) -> Task<'a> {
        Task {
            prompt: "p",
            context: "c",
            profile,
        }
    }

    #[test]
    fn argmax_earliest_tie() {
        assert_eq!(select_argmax(&[0.2, 0.9, 0.9]), Some(1));
        assert_eq!(select_argmax(&[]), None);
        assert_eq!(select_argmax(&[f64::NEG_INFINITY]), Some(0));
    }

    #[test]
    fn zero_rounds_is_bare_generation() {
        let gen = MockGenerator::default();
        let prof = ValueProfile::neutral();
        let cfg = SimulationConfig {
            rounds: 0,
            seed: 3,
            ..Default::default()
        };
        let out = reasoning_loop(&gen, &BiasedScorer::default(), &task(&prof), &cfg).unwrap();
        assert_eq!(out.action, bare_generation(&gen, &task(&prof), &cfg).unwrap());
        assert!(out.rounds.is_empty());
    }

    #[test]
    fn one_round_picks_longest() {
        let gen = ScriptedGenerator::new(vec![vec!["ab".into()], vec!["abcd".into(), "abc".into()]]);
        let prof = ValueProfile::neutral();
        let cfg = SimulationConfig {
            rounds: 1,
            candidates: 3,
            ..Default::default()
        };
        let out = reasoning_loop(&gen, &LengthScorer, &task(&prof), &cfg).unwrap();
        assert_eq!(out.action, "abcd");
        assert_eq!(out.rounds[0].pool, vec!["ab", "abcd", "abc"]);
        assert_eq!(out.rounds[0].scores, vec![2.0, 4.0, 3.0]);
    }

    #[test]
    fn select_single_and_ties() {
        let prof = ValueProfile::neutral();
        let gen = ScriptedGenerator::new(vec![vec!["only".into()]]);
        let s = generate_then_select(&gen, &LengthScorer, &task(&prof), 1, 0.8, 0).unwrap();
        assert_eq!(s.action, "only");
        let gen = ScriptedGenerator::new(vec![vec!["xx".into(), "yyyy".into(), "zzzz".into()]]);
        let s = generate_then_select(&gen, &LengthScorer, &task(&prof), 3, 0.8, 0).unwrap();
        assert_eq!(s.index, 1);
    }

    #[test]
    fn f1_values() {
        assert_eq!(unigram_f1("a b c", "a b c"), 1.0);
        assert_eq!(unigram_f1("x y", "a b"), 0.0);
        // overlap 1, p = 1/2, r = 1/3
        assert!((unigram_f1("a x", "a b c") - 0.4).abs() < 1e-15);
        assert_eq!(unigram_f1("", ""), 1.0);
        assert_eq!(unigram_f1("", "a"), 0.0);
    }

    #[test]
    fn pair_extremes_and_degenerate() {
        let c: Vec<String> = vec!["the pasta was great".into(), "zebra".into()];
        let sims: Vec<f64> = c.iter().map(|x| unigram_f1(x, "the pasta was great")).collect();
        assert_eq!(pick_pair(&c, &sims), (0, 1, false));
        let same: Vec<String> = vec!["a".into(); 4];
        assert!(pick_pair(&same, &[0.5; 4]).2);
    }

    #[test]
    fn pairs_from_scripted_generator() {
        let rec = InteractionRecord {
            record_id: "r1".into(),
            user_id: "u".into(),
            domain: DomainKind::Conversation,
            context_text: "ctx".into(),
            action_text: "good coffee here".into(),
            rating: None,
            sentiment: None,
            attitude: None,
            poi_category: None,
            stay_minutes: None,
            group_key: None,
            timestamp: None,
        };
        let prof = ValueProfile::neutral();
        // F1 against "good coffee here": 2/3·2/3 → 2/3, 1/2·1/3 → 0.4, 1.0, 0.
        let cands = vec![
            "good tea here".to_string(),
            "bad coffee".into(),
            "good coffee here".into(),
            "no".into(),
        ];
        let gen = ScriptedGenerator::new(vec![cands]);
        let src = PairSource {
            record: &rec,
            profile: &prof,
            prompt: "p".into(),
            reference: rec.action_text.clone(),
        };
        let out = build_preference_pairs(&gen, &unigram_f1, &[src], 4, 0.8, 1).unwrap();
        match &out[0] {
            PairOutcome::Pair(p) => {
                assert_eq!(p.chosen, "good coffee here");
                assert_eq!(p.rejected, "no");
                assert_eq!(p.chosen_score, 1.0);
                assert!(!p.degenerate);
            }
            other => panic!("{other:?}"),
        }
    }

    struct Flaky(std::sync::atomic::AtomicUsize);
    impl GeneratorBackend for Flaky {
        fn generate(&self, _: &str, _: &ValueProfile, n: usize, t: f64, s: u64) -> Result<CandidateSet, BackendError> {
            if self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
                return Err(BackendError::new("transient"));
            }
            Ok(CandidateSet::new(
                vec!["ok".into(); n],
                crate::domain::Provenance {
                    seed: s,
                    temperature: t,
                },
            )
            .unwrap())
        }
    }

    #[test]
    fn one_retry_then_success() {
        let prof = ValueProfile::neutral();
        let gen = Flaky(Default::default());
        let cfg = SimulationConfig::default();
        assert_eq!(bare_generation(&gen, &task(&prof), &cfg).unwrap(), "ok");
    }
}
