//! Dataset files, user-level holdout splits and synthetic fixtures.
//!
//! A dataset is a JSON-lines file. The first non-blank line is the header;
//! later lines are user profiles or interaction records:
//!
//! ```text
//! {"type":"header","schema_version":1,"domain":"MediaReview","vocabularies":{"sentiment":["negative","positive"]}}
//! {"type":"profile","user_id":"u1","scores":[0.1, ...],"intro":"..."}
//! {"type":"record","record_id":"r1","user_id":"u1","domain":"MediaReview","context_text":"...","action_text":"...","rating":4}
//! ```
//!
//! Saving writes the header, profiles sorted by user id, then records in
//! their original order, so a saved file loads and saves back byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_profile, DomainKind, InteractionRecord, ValueProfile, NUM_VALUES};
use crate::seed;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: not valid JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error in field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: value {value:?} of `{field}` is outside the declared vocabulary")]
    Vocabulary { line: usize, field: String, value: String },
    #[error("need at least 2 distinct users to split, found {0}")]
    TooFewUsers(usize),
    #[error("holdout fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
}

/// Closed label sets for the categorical fields. An absent vocabulary leaves
/// that field unconstrained.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocabularies {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attitude: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi_category: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub domain: DomainKind,
    #[serde(default)]
    pub vocabularies: Vocabularies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub scores: ValueProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intro: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(Header),
    Profile(UserProfile),
    Record(InteractionRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Header,
    pub profiles: BTreeMap<String, UserProfile>,
    pub records: Vec<InteractionRecord>,
}

fn schema_field(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "?".to_string())
}

fn check_vocab(line: usize, field: &str, value: &Option<String>, vocab: &Option<Vec<String>>) -> Result<(), DataError> {
    if let (Some(v), Some(allowed)) = (value, vocab) {
        if !allowed.contains(v) {
            return Err(DataError::Vocabulary {
                line,
                field: field.into(),
                value: v.clone(),
            });
        }
    }
    Ok(())
}

impl Dataset {
    pub fn new(domain: DomainKind) -> Self {
        Dataset {
            header: Header {
                schema_version: SCHEMA_VERSION,
                domain,
                vocabularies: Vocabularies::default(),
            },
            profiles: BTreeMap::new(),
            records: Vec::new(),
        }
    }

    pub fn domain(&self) -> DomainKind {
        self.header.domain
    }

    /// Distinct user ids across records, sorted.
    pub fn users(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.user_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn profile(&self, user_id: &str) -> Option<&UserProfile> {
        self.profiles.get(user_id)
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut header: Option<Header> = None;
        let mut profiles = BTreeMap::new();
        let mut records = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| DataError::Parse {
                line,
                message: e.to_string(),
            })?;
            let schema = |field: &str, message: String| DataError::Schema {
                line,
                field: field.into(),
                message,
            };
            let parsed: Line = serde_json::from_value(value).map_err(|e| {
                let m = e.to_string();
                schema(&schema_field(&m), m)
            })?;
            match (parsed, &header) {
                (Line::Header(h), None) => {
                    if h.schema_version != SCHEMA_VERSION {
                        return Err(schema(
                            "schema_version",
                            format!("unsupported version {}", h.schema_version),
                        ));
                    }
                    header = Some(h);
                }
                (Line::Header(_), Some(_)) => return Err(schema("type", "second header".into())),
                (_, None) => return Err(schema("type", "the first line must be the header".into())),
                (Line::Profile(p), Some(_)) => {
                    if profiles.contains_key(&p.user_id) {
                        return Err(schema("user_id", format!("duplicate profile for {}", p.user_id)));
                    }
                    profiles.insert(p.user_id.clone(), p);
                }
                (Line::Record(r), Some(h)) => {
                    if r.domain != h.domain {
                        return Err(schema(
                            "domain",
                            format!("record is {} but the file is {}", r.domain, h.domain),
                        ));
                    }
                    if let Some(rating) = r.rating {
                        if !(1..=5).contains(&rating) {
                            return Err(DataError::Vocabulary {
                                line,
                                field: "rating".into(),
                                value: rating.to_string(),
                            });
                        }
                    }
                    check_vocab(line, "sentiment", &r.sentiment, &h.vocabularies.sentiment)?;
                    check_vocab(line, "attitude", &r.attitude, &h.vocabularies.attitude)?;
                    check_vocab(line, "poi_category", &r.poi_category, &h.vocabularies.poi_category)?;
                    r.validate().map_err(|e| schema("record", e.to_string()))?;
                    if !ids.insert(r.record_id.clone()) {
                        return Err(schema("record_id", format!("duplicate record id {}", r.record_id)));
                    }
                    records.push(r);
                }
            }
        }
        let header = header.ok_or_else(|| DataError::Schema {
            line: 1,
            field: "header".into(),
            message: "missing header".into(),
        })?;
        Ok(Dataset {
            header,
            profiles,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Dataset::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |l: &Line| {
            out.push_str(&serde_json::to_string(l).expect("dataset lines serialize"));
            out.push('\n');
        };
        push(&Line::Header(self.header.clone()));
        for p in self.profiles.values() {
            push(&Line::Profile(p.clone()));
        }
        for r in &self.records {
            push(&Line::Record(r.clone()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_jsonl()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn subset(&self, users: &BTreeSet<String>) -> Dataset {
        Dataset {
            header: self.header.clone(),
            profiles: self
                .profiles
                .iter()
                .filter(|(u, _)| users.contains(*u))
                .map(|(u, p)| (u.clone(), p.clone()))
                .collect(),
            records: self
                .records
                .iter()
                .filter(|r| users.contains(&r.user_id))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            holdout_fraction: 0.10,
            seed: 0,
        }
    }
}

/// Number of held-out users: `ceil(fraction * users)`, kept within
/// `1..users` so both sides are non-empty. A small tolerance stops products
/// like `0.1 * 30 = 3.0000000000000004` from rounding up.
pub fn holdout_count(fraction: f64, users: usize) -> usize {
    let raw = (fraction * users as f64 - 1e-9).ceil() as usize;
    raw.clamp(1, users - 1)
}

/// Partition by user: shuffle the sorted user ids with the seed and hold out
/// the first `holdout_count` of them. Returns `(train, eval)`.
pub fn split_users(d: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    if !(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0) {
        return Err(DataError::BadFraction(spec.holdout_fraction));
    }
    let mut users = d.users();
    if users.len() < 2 {
        return Err(DataError::TooFewUsers(users.len()));
    }
    let k = holdout_count(spec.holdout_fraction, users.len());
    users.shuffle(&mut seed::rng(spec.seed, "split-users"));
    let eval: BTreeSet<String> = users[..k].iter().cloned().collect();
    let train: BTreeSet<String> = users[k..].iter().cloned().collect();
    Ok((d.subset(&train), d.subset(&eval)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    /// Population mean of each value dimension.
    pub value_mean: [f64; NUM_VALUES],
    /// Population standard deviation of each value dimension.
    pub value_std: f64,
    pub min_records: usize,
    pub max_records: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            value_mean: [0.0; NUM_VALUES],
            value_std: 0.2,
            min_records: 3,
            max_records: 5,
        }
    }
}

/// `n` normal draws, shifted and rescaled so the population mean and variance
/// equal the targets exactly (for `n >= 2`).
pub fn planted_scores(n: usize, mean: f64, variance: f64, seed: u64) -> Vec<f64> {
    assert!(
        variance.is_finite() && variance >= 0.0,
        "variance must be finite and non-negative"
    );
    let mut rng = seed::rng(seed, "planted-scores");
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    if n < 2 {
        return vec![mean; n];
    }
    let m = z.iter().sum::<f64>() / n as f64;
    let sd = (z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if sd > 0.0 { variance.sqrt() / sd } else { 0.0 };
    z.iter().map(|x| mean + (x - m) * scale).collect()
}

const BUSINESSES: [&str; 6] = [
    "Corner Bistro, French, downtown",
    "Green Leaf Cafe, vegetarian, riverside",
    "Iron Gym, fitness, north side",
    "Old Town Books, bookstore, historic district",
    "Sunset Sushi, Japanese, harbor",
    "Family Hardware, home goods, suburbs",
];
const REVIEW_OPENERS: [&str; 4] = ["Loved it", "It was okay", "Not for me", "Pleasant surprise"];
const REVIEW_BODIES: [&str; 5] = [
    "the staff treated everyone with respect",
    "prices felt fair for the quality",
    "the place was loud and crowded",
    "they clearly care about tradition",
    "service was slow but friendly",
];
const THREADS: [(&str, &str); 4] = [
    ("personalfinance", "Should I pay off my loan early or invest the money?"),
    ("cooking", "What is your go-to dish when friends come over?"),
    ("science", "New study suggests bees can count to four."),
    ("travel", "Is it worth visiting the capital in winter?"),
];
const REPLIES: [&str; 5] = [
    "I would play it safe and keep an emergency fund first.",
    "Honestly just try it and see what happens.",
    "My grandmother always made soup and it never fails.",
    "Fascinating, nature keeps surprising us.",
    "Depends on what you value most in a trip.",
];
const SENTIMENTS: [&str; 3] = ["negative", "neutral", "positive"];
const ATTITUDES: [&str; 3] = ["against", "neutral", "support"];
const POI: [&str; 6] = ["Coffee Shop", "Park", "Office", "Gym", "Restaurant", "Library"];

/// Deterministic synthetic dataset. Profile scores are drawn per dimension
/// from `Normal(value_mean, value_std)` and clipped to [-1, 1].
pub fn synth_fixtures(domain: DomainKind, n_users: usize, seed: u64) -> Dataset {
    synth_with(domain, n_users, seed, &SynthOptions::default())
}

pub fn synth_with(domain: DomainKind, n_users: usize, seed: u64, opts: &SynthOptions) -> Dataset {
    let mut d = Dataset::new(domain);
    match domain {
        DomainKind::MediaReview => {
            d.header.vocabularies.sentiment = Some(SENTIMENTS.iter().map(|s| s.to_string()).collect());
        }
        DomainKind::Conversation => {
            d.header.vocabularies.attitude = Some(ATTITUDES.iter().map(|s| s.to_string()).collect());
        }
        DomainKind::Mobility => {
            d.header.vocabularies.poi_category = Some(POI.iter().map(|s| s.to_string()).collect());
        }
    }
    let width = n_users.max(1).to_string().len();
    for u in 0..n_users {
        let user_id = format!("user-{u:0width$}");
        let mut rng = seed::rng(seed, &format!("synth:{user_id}"));
        let scores: Vec<f64> = opts
            .value_mean
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (m + opts.value_std * z).clamp(-1.0, 1.0)
            })
            .collect();
        d.profiles.insert(
            user_id.clone(),
            UserProfile {
                user_id: user_id.clone(),
                scores: validate_profile(&scores).expect("clipped scores are valid"),
                intro: Some(format!("I am {user_id}, a regular in this city.")),
            },
        );
        let n = rng.random_range(opts.min_records..=opts.max_records.max(opts.min_records));
        let mut ts: i64 = 1_700_000_000 + rng.random_range(0..86_400 * 30);
        for j in 0..n {
            ts += rng.random_range(3_600..86_400);
            let record_id = format!("{user_id}-{j}");
            let mut rec = InteractionRecord {
                record_id,
                user_id: user_id.clone(),
                domain,
                context_text: String::new(),
                action_text: String::new(),
                rating: None,
                sentiment: None,
                attitude: None,
                poi_category: None,
                stay_minutes: None,
                group_key: None,
                timestamp: Some(ts),
            };
            match domain {
                DomainKind::MediaReview => {
                    let rating: u8 = rng.random_range(1..=5);
                    rec.context_text = BUSINESSES[rng.random_range(0..BUSINESSES.len())].to_string();
                    rec.action_text = format!(
                        "{}, {}.",
                        REVIEW_OPENERS[rng.random_range(0..REVIEW_OPENERS.len())],
                        REVIEW_BODIES[rng.random_range(0..REVIEW_BODIES.len())]
                    );
                    rec.rating = Some(rating);
                    rec.sentiment = Some(SENTIMENTS[((rating as usize) - 1) / 2].to_string());
                }
                DomainKind::Conversation => {
                    let (group, post) = THREADS[rng.random_range(0..THREADS.len())];
                    rec.context_text = post.to_string();
                    rec.action_text = REPLIES[rng.random_range(0..REPLIES.len())].to_string();
                    rec.attitude = Some(ATTITUDES[rng.random_range(0..ATTITUDES.len())].to_string());
                    rec.group_key = Some(group.to_string());
                }
                DomainKind::Mobility => {
                    let place = POI[rng.random_range(0..POI.len())];
                    let prev = POI[rng.random_range(0..POI.len())];
                    rec.context_text = format!("This morning I went to the {prev}.");
                    rec.action_text = place.to_string();
                    rec.poi_category = Some(place.to_string());
                    rec.stay_minutes = Some(15.0 * rng.random_range(1..=16) as f64);
                }
            }
            d.records.push(rec);
        }
    }
    d
}
