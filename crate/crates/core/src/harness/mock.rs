//! In-process backends for tests and offline runs.

use std::sync::Mutex;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{CandidateSet, DomainKind, Provenance, ValueProfile};
use crate::seed;

use super::prompt::{format_hours, parse_sentinels, VALUE_TAG};
use super::{BackendError, GeneratorBackend, Handshake, ScorerBackend};

pub const DEFAULT_BIAS_TARGET: f64 = 0.9;

const OPENERS: [&str; 6] = [
    "Honestly",
    "Overall",
    "For what it is worth",
    "In my experience",
    "To be fair",
    "Looking back",
];
const POSITIVE: [&str; 5] = [
    "this was a great choice and I would do it again",
    "everything felt thoughtful and well run",
    "the people were kind and the place felt welcoming",
    "it matched what I care about",
    "I left in a good mood",
];
const NEUTRAL: [&str; 4] = [
    "it was fine but nothing special",
    "some parts worked and some did not",
    "I have mixed feelings about it",
    "it was about what I expected",
];
const NEGATIVE: [&str; 4] = [
    "it went against what I value",
    "I would not recommend it to friends",
    "the whole thing felt careless",
    "I regret spending time on it",
];
const PLACES: [&str; 8] = [
    "Coffee Shop",
    "Park",
    "Office",
    "Gym",
    "Restaurant",
    "Library",
    "Museum",
    "Grocery Store",
];

/// Seeded template generator. Each candidate carries a planted value score
/// `clamp(mean(profile) + temperature * spread * z, -1, 1)` in a `<|value|>`
/// sentinel, so selection effects on the value distribution can be measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockGenerator {
    pub spread: f64,
}

impl Default for MockGenerator {
    fn default() -> Self {
        MockGenerator { spread: 0.5 }
    }
}

fn detect_domain(prompt: &str) -> DomainKind {
    if prompt.contains("<|review|>") {
        DomainKind::MediaReview
    } else if prompt.contains("<|place|>") {
        DomainKind::Mobility
    } else {
        DomainKind::Conversation
    }
}

impl MockGenerator {
    pub fn latent(&self, profile: &ValueProfile, temperature: f64, seed: u64, index: usize) -> f64 {
        let mut rng = seed::rng(seed, &format!("candidate:{index}"));
        let z: f64 = StandardNormal.sample(&mut rng);
        (profile.mean() + temperature * self.spread * z).clamp(-1.0, 1.0)
    }

    fn candidate(
        &self,
        domain: DomainKind,
        profile: &ValueProfile,
        temperature: f64,
        seed: u64,
        index: usize,
    ) -> String {
        let latent = self.latent(profile, temperature, seed, index);
        let mut rng = seed::rng(seed, &format!("text:{index}"));
        let bank: &[&str] = if latent > 0.33 {
            &POSITIVE
        } else if latent < -0.33 {
            &NEGATIVE
        } else {
            &NEUTRAL
        };
        let sentence = format!(
            "{}, {}.",
            OPENERS[rng.random_range(0..OPENERS.len())],
            bank[rng.random_range(0..bank.len())]
        );
        let value = format!("<|{VALUE_TAG}|>{latent}<|{VALUE_TAG}|>");
        match domain {
            DomainKind::MediaReview => {
                let rating = (3.0 + 2.0 * latent).round().clamp(1.0, 5.0) as u8;
                format!("<|review|>{sentence}<|review|>\n<|rating|>{rating}<|rating|>\n{value}")
            }
            DomainKind::Conversation => format!("<|Comment|>{sentence}<|Comment|>\n{value}"),
            DomainKind::Mobility => {
                let place = PLACES[rng.random_range(0..PLACES.len())];
                let minutes = 15.0 * rng.random_range(1..=16) as f64;
                format!(
                    "<|place|>{place}<|place|>, and stay for <|time|>{}<|time|> hours.\n{value}",
                    format_hours(minutes)
                )
            }
        }
    }
}

impl GeneratorBackend for MockGenerator {
    fn generate(
        &self,
        context: &str,
        profile: &ValueProfile,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<CandidateSet, BackendError> {
        let domain = detect_domain(context);
        let cands = (0..n)
            .map(|i| self.candidate(domain, profile, temperature, seed, i))
            .collect();
        CandidateSet::new(cands, Provenance { seed, temperature }).map_err(|e| BackendError::new(e.to_string()))
    }
}

/// Planted value score of a mock candidate.
pub fn latent_of(action: &str) -> Option<f64> {
    parse_sentinels(action, VALUE_TAG).ok()?.parse().ok()
}

/// Prefers candidates whose planted value score is near a fixed target,
/// regardless of the agent's own profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasedScorer {
    pub target: f64,
}

impl Default for BiasedScorer {
    fn default() -> Self {
        BiasedScorer {
            target: DEFAULT_BIAS_TARGET,
        }
    }
}

impl ScorerBackend for BiasedScorer {
    fn score(&self, action: &str, _context: &str, _profile: &ValueProfile) -> Result<f64, BackendError> {
        let latent = latent_of(action).ok_or_else(|| BackendError::new("candidate has no planted value score"))?;
        Ok(-(latent - self.target).abs())
    }
}

/// Score = character count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LengthScorer;

impl ScorerBackend for LengthScorer {
    fn score(&self, action: &str, _context: &str, _profile: &ValueProfile) -> Result<f64, BackendError> {
        Ok(action.chars().count() as f64)
    }
}

/// Replays fixed candidate batches in call order, ignoring seeds.
#[derive(Debug)]
pub struct ScriptedGenerator {
    batches: Mutex<std::collections::VecDeque<Vec<String>>>,
}

impl ScriptedGenerator {
    pub fn new(batches: Vec<Vec<String>>) -> Self {
        ScriptedGenerator {
            batches: Mutex::new(batches.into()),
        }
    }
}

impl GeneratorBackend for ScriptedGenerator {
    fn generate(
        &self,
        _context: &str,
        _profile: &ValueProfile,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<CandidateSet, BackendError> {
        let batch = self
            .batches
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or_else(|| BackendError::new("script exhausted"))?;
        if batch.len() != n {
            return Err(BackendError::new(format!(
                "script batch has {} candidates, {n} requested",
                batch.len()
            )));
        }
        CandidateSet::new(batch, Provenance { seed, temperature }).map_err(|e| BackendError::new(e.to_string()))
    }

    fn handshake(&self) -> Result<Handshake, BackendError> {
        Ok(Handshake {
            max_inflight: 1,
            ..Handshake::default()
        })
    }
}
