//! Domain prompt templates and sentinel-delimited completions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{canonical_order, DomainKind, InteractionRecord, ValueProfile};

use super::{HarnessError, MemoryBundle};

/// Extra sentinel emitted by the bundled mock generator carrying its planted
/// value score. Real backends do not produce it.
pub const VALUE_TAG: &str = "value";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SentinelError {
    #[error("no <|{0}|> marker")]
    MissingSentinel(String),
    #[error("<|{0}|> is opened but never closed")]
    UnbalancedSentinel(String),
    #[error("<|{tag}|> holds {value:?}, which is not a valid {expected}")]
    TypeError {
        tag: String,
        value: String,
        expected: &'static str,
    },
}

fn marker(tag: &str) -> String {
    format!("<|{tag}|>")
}

/// Text between the first pair of `<|tag|>` markers, trimmed. Later pairs are
/// ignored with a log line.
pub fn parse_sentinels(text: &str, tag: &str) -> Result<String, SentinelError> {
    let m = marker(tag);
    let start = text
        .find(&m)
        .ok_or_else(|| SentinelError::MissingSentinel(tag.into()))?
        + m.len();
    let len = text[start..]
        .find(&m)
        .ok_or_else(|| SentinelError::UnbalancedSentinel(tag.into()))?;
    let rest = &text[start + len + m.len()..];
    if rest.contains(&m) {
        log::debug!("extra <|{tag}|> pairs ignored");
    }
    Ok(text[start..start + len].trim().to_string())
}

pub fn parse_rating(text: &str) -> Result<u8, SentinelError> {
    let raw = parse_sentinels(text, "rating")?;
    let bad = || SentinelError::TypeError {
        tag: "rating".into(),
        value: raw.clone(),
        expected: "rating in 1..5",
    };
    let r: u8 = raw.parse().map_err(|_| bad())?;
    if (1..=5).contains(&r) {
        Ok(r)
    } else {
        Err(bad())
    }
}

/// Stay time is written in hours and stored in minutes.
pub fn parse_stay_minutes(text: &str) -> Result<f64, SentinelError> {
    let raw = parse_sentinels(text, "time")?;
    let num = ["hours", "hour", "hrs", "h"]
        .iter()
        .find_map(|s| raw.strip_suffix(s))
        .unwrap_or(&raw)
        .trim();
    match num.parse::<f64>() {
        Ok(h) if h.is_finite() && h >= 0.0 => Ok(h * 60.0),
        _ => Err(SentinelError::TypeError {
            tag: "time".into(),
            value: raw.clone(),
            expected: "non-negative number of hours",
        }),
    }
}

pub fn format_hours(minutes: f64) -> String {
    format!("{}", minutes / 60.0)
}

fn action_tag(domain: DomainKind) -> &'static str {
    match domain {
        DomainKind::MediaReview => "review",
        DomainKind::Conversation => "Comment",
        DomainKind::Mobility => "place",
    }
}

fn missing(record: &InteractionRecord, field: &'static str) -> HarnessError {
    HarnessError::MissingField {
        record_id: record.record_id.clone(),
        field,
    }
}

fn value_block(profile: &ValueProfile) -> String {
    canonical_order()
        .iter()
        .map(|d| format!("{}: {}", d.name(), profile.get(*d)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn clock(ts: i64) -> String {
    let secs = ts.rem_euclid(86_400);
    format!("{:02}:{:02}", secs / 3600, (secs % 3600) / 60)
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none)"
    } else {
        s
    }
}

/// Fill the domain's system and user template. `intro` is the agent's
/// self-introduction, which only the media template shows.
pub fn render_prompt(
    record: &InteractionRecord,
    memory: &MemoryBundle,
    profile: &ValueProfile,
    intro: Option<&str>,
) -> Result<String, HarnessError> {
    let values = value_block(profile);
    let mut p = String::new();
    p.push_str("[System]\n");
    match record.domain {
        DomainKind::MediaReview => {
            let _ = write!(
                p,
                "You are going to role-play a user of a media platform.\n\
                 Your value preference ([-1, 1] represents from inconsistency to consistency):\n\
                 {values}\n\
                 Based on your self-introduction, your past reviews of businesses, and the current business you are reviewing, generate a review (between two <|review|> tokens) and rating (between two <|rating|> tokens) for the current business.\n\
                 \n[User]\n\
                 ## My Self-introduction:\n{}\n\
                 \n## My Past Reviews:\n",
                or_none(intro.unwrap_or(""))
            );
            if memory.longterm.is_empty() {
                p.push_str("(none)\n");
            }
            for (i, h) in memory.longterm.iter().enumerate() {
                let rating = h.rating.ok_or_else(|| missing(h, "rating"))?;
                let _ = write!(
                    p,
                    "{}) {}\nMy review is: \"{}\"\nMy rating is: {}\n",
                    i + 1,
                    h.context_text,
                    h.action_text,
                    rating
                );
            }
            let _ = write!(
                p,
                "\nCurrently I am reviewing this business:\n{}\n\nMy review and rating are as follows:\n",
                record.context_text
            );
        }
        DomainKind::Conversation => {
            let _ = write!(
                p,
                "You are going to role-play a user of reddit.\n\
                 Your value preference ([-1, 1] represents from inconsistency to consistency):\n\
                 {values}\n\
                 Based on your past comments and the conversation history, generate the response (between two <|Comment|> tokens) to the current conversation.\n\
                 \n[User]\n\
                 ## My Past Comments:\n"
            );
            if memory.longterm.is_empty() {
                p.push_str("(none)\n");
            }
            for (i, h) in memory.longterm.iter().enumerate() {
                let _ = writeln!(p, "{}) {}", i + 1, h.action_text);
            }
            let _ = write!(
                p,
                "\n## Current Conversation:\n{}\n\nAccording to my past comments and the current conversation, I'm going to reply that:\n",
                or_none(&memory.working)
            );
        }
        DomainKind::Mobility => {
            let ts = record.timestamp.ok_or_else(|| missing(record, "timestamp"))?;
            let _ = write!(
                p,
                "You are going to role-play a citizen living in a city.\n\
                 Your value preference ([-1, 1] represents from inconsistency to consistency):\n\
                 {values}\n\
                 Based on your self-introduction, your diaries, and the places you went today, plan the place (between two <|place|> tokens) and stay time (between two <|time|> tokens) of your next activity.\n\
                 \n[User]\n\
                 ### My Diaries:\n"
            );
            if memory.longterm.is_empty() {
                p.push_str("(none)\n");
            }
            for (i, h) in memory.longterm.iter().enumerate() {
                let place = h.poi_category.as_deref().ok_or_else(|| missing(h, "poi_category"))?;
                let mins = h.stay_minutes.ok_or_else(|| missing(h, "stay_minutes"))?;
                let _ = writeln!(
                    p,
                    "{}) {} I went to {} and stayed for {} hours.",
                    i + 1,
                    h.context_text,
                    place,
                    format_hours(mins)
                );
            }
            let _ = write!(
                p,
                "\n### Today's Activities:\n{}\n\nCurrently it is {}, I am planning to go to ...\n",
                or_none(&memory.working),
                clock(ts)
            );
        }
    }
    Ok(p)
}

/// The assistant turn the template expects, filled with the record's
/// ground-truth fields.
pub fn render_completion(record: &InteractionRecord) -> Result<String, HarnessError> {
    Ok(match record.domain {
        DomainKind::MediaReview => format!(
            "<|review|>{}<|review|>\n<|rating|>{}<|rating|>",
            record.action_text,
            record.rating.ok_or_else(|| missing(record, "rating"))?
        ),
        DomainKind::Conversation => format!("<|Comment|>{}<|Comment|>", record.action_text),
        DomainKind::Mobility => format!(
            "<|place|>{}<|place|>, and stay for <|time|>{}<|time|> hours.",
            record
                .poi_category
                .as_deref()
                .ok_or_else(|| missing(record, "poi_category"))?,
            format_hours(record.stay_minutes.ok_or_else(|| missing(record, "stay_minutes"))?)
        ),
    })
}

/// Fields recovered from a completion.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub action_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attitude: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stay_minutes: Option<f64>,
    /// Planted value score, when the backend reports one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<f64>,
    /// Measured value scores of the generated behaviour, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_scores: Option<Vec<f64>>,
}

pub fn parse_completion(domain: DomainKind, record_id: &str, text: &str) -> Result<Prediction, SentinelError> {
    let mut p = Prediction {
        record_id: record_id.to_string(),
        action_text: parse_sentinels(text, action_tag(domain))?,
        ..Default::default()
    };
    match domain {
        DomainKind::MediaReview => p.rating = Some(parse_rating(text)?),
        DomainKind::Conversation => {}
        DomainKind::Mobility => {
            p.poi_category = Some(p.action_text.clone());
            p.stay_minutes = Some(parse_stay_minutes(text)?);
        }
    }
    p.latent = parse_sentinels(text, VALUE_TAG).ok().and_then(|v| v.parse().ok());
    Ok(p)
}
