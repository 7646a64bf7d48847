//! Domain types shared by every module: the ten Schwartz value dimensions,
//! value profiles and activations, interaction records, empirical
//! distributions, candidate sets and preference pairs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of Schwartz value dimensions.
pub const NUM_VALUES: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("expected {expected} entries, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("entry {index} = {value} is outside the allowed range")]
    OutOfRange { index: usize, value: f64 },
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("unknown value dimension `{0}`")]
    UnknownDimension(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("record {record_id}: {reason}")]
    InvalidRecord { record_id: String, reason: String },
}

/// The ten basic values, declared in circumplex order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ValueDimension {
    #[serde(rename = "Self-Direction")]
    SelfDirection,
    Stimulation,
    Hedonism,
    Achievement,
    Power,
    Security,
    Conformity,
    Tradition,
    Benevolence,
    Universalism,
}

const CANONICAL: [ValueDimension; NUM_VALUES] = [
    ValueDimension::SelfDirection,
    ValueDimension::Stimulation,
    ValueDimension::Hedonism,
    ValueDimension::Achievement,
    ValueDimension::Power,
    ValueDimension::Security,
    ValueDimension::Conformity,
    ValueDimension::Tradition,
    ValueDimension::Benevolence,
    ValueDimension::Universalism,
];

/// The ten dimensions in circumplex order. This is the ground-truth circular
/// sequence used by the topology module.
pub fn canonical_order() -> [ValueDimension; NUM_VALUES] {
    CANONICAL
}

impl ValueDimension {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        CANONICAL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueDimension::SelfDirection => "Self-Direction",
            ValueDimension::Stimulation => "Stimulation",
            ValueDimension::Hedonism => "Hedonism",
            ValueDimension::Achievement => "Achievement",
            ValueDimension::Power => "Power",
            ValueDimension::Security => "Security",
            ValueDimension::Conformity => "Conformity",
            ValueDimension::Tradition => "Tradition",
            ValueDimension::Benevolence => "Benevolence",
            ValueDimension::Universalism => "Universalism",
        }
    }
}

impl fmt::Display for ValueDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ValueDimension {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        CANONICAL
            .iter()
            .copied()
            .find(|d| {
                let name: String = d.name().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
                name.eq_ignore_ascii_case(&wanted)
            })
            .ok_or_else(|| DomainError::UnknownDimension(s.to_string()))
    }
}

/// An agent's static preference over the ten values, each in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ValueProfile([f64; NUM_VALUES]);

/// Accepts exactly the finite vectors of length 10 with every entry in [-1, 1].
pub fn validate_profile(raw: &[f64]) -> Result<ValueProfile, DomainError> {
    if raw.len() != NUM_VALUES {
        return Err(DomainError::WrongArity {
            expected: NUM_VALUES,
            got: raw.len(),
        });
    }
    let mut scores = [0.0; NUM_VALUES];
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() {
            return Err(DomainError::NonFinite { index });
        }
        if !(-1.0..=1.0).contains(&value) {
            return Err(DomainError::OutOfRange { index, value });
        }
        scores[index] = value;
    }
    Ok(ValueProfile(scores))
}

impl ValueProfile {
    pub fn neutral() -> Self {
        ValueProfile([0.0; NUM_VALUES])
    }

    pub fn scores(&self) -> &[f64; NUM_VALUES] {
        &self.0
    }

    pub fn get(&self, dim: ValueDimension) -> f64 {
        self.0[dim.index()]
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / NUM_VALUES as f64
    }
}

impl TryFrom<Vec<f64>> for ValueProfile {
    type Error = DomainError;

    fn try_from(raw: Vec<f64>) -> Result<Self, Self::Error> {
        validate_profile(&raw)
    }
}

impl From<ValueProfile> for Vec<f64> {
    fn from(p: ValueProfile) -> Self {
        p.0.to_vec()
    }
}

/// Per-context activation weights over the ten values, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ValueActivation([f64; NUM_VALUES]);

impl ValueActivation {
    pub fn new(raw: &[f64]) -> Result<Self, DomainError> {
        if raw.len() != NUM_VALUES {
            return Err(DomainError::WrongArity {
                expected: NUM_VALUES,
                got: raw.len(),
            });
        }
        let mut weights = [0.0; NUM_VALUES];
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(DomainError::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(DomainError::OutOfRange { index, value });
            }
            weights[index] = value;
        }
        Ok(ValueActivation(weights))
    }

    pub fn weights(&self) -> &[f64; NUM_VALUES] {
        &self.0
    }

    pub fn get(&self, dim: ValueDimension) -> f64 {
        self.0[dim.index()]
    }
}

impl TryFrom<Vec<f64>> for ValueActivation {
    type Error = DomainError;

    fn try_from(raw: Vec<f64>) -> Result<Self, Self::Error> {
        ValueActivation::new(&raw)
    }
}

impl From<ValueActivation> for Vec<f64> {
    fn from(a: ValueActivation) -> Self {
        a.0.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DomainKind {
    MediaReview,
    Conversation,
    Mobility,
}

impl DomainKind {
    pub const ALL: [DomainKind; 3] = [DomainKind::MediaReview, DomainKind::Conversation, DomainKind::Mobility];

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::MediaReview => "MediaReview",
            DomainKind::Conversation => "Conversation",
            DomainKind::Mobility => "Mobility",
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mediareview" | "media" | "review" => Ok(DomainKind::MediaReview),
            "conversation" | "reddit" => Ok(DomainKind::Conversation),
            "mobility" | "travel" => Ok(DomainKind::Mobility),
            _ => Err(DomainError::UnknownDomain(s.to_string())),
        }
    }
}

/// One (context, ground-truth action, metadata) trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub record_id: String,
    pub user_id: String,
    pub domain: DomainKind,
    pub context_text: String,
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
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl InteractionRecord {
    /// Checks the range and domain-presence invariants.
    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |reason: &str| DomainError::InvalidRecord {
            record_id: self.record_id.clone(),
            reason: reason.to_string(),
        };
        if let Some(r) = self.rating {
            if !(1..=5).contains(&r) {
                return Err(fail("rating must be in 1..=5"));
            }
        }
        if let Some(m) = self.stay_minutes {
            if !m.is_finite() || m < 0.0 {
                return Err(fail("stay_minutes must be finite and non-negative"));
            }
        }
        match self.domain {
            DomainKind::MediaReview if self.rating.is_none() => Err(fail("media records require a rating")),
            DomainKind::Mobility if self.poi_category.is_none() || self.stay_minutes.is_none() => {
                Err(fail("mobility records require poi_category and stay_minutes"))
            }
            _ => Ok(()),
        }
    }
}

/// A finite sorted sample; supports quantile queries for transport distances.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self, DomainError> {
        if samples.is_empty() {
            return Err(DomainError::EmptyInput);
        }
        if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
            return Err(DomainError::NonFinite { index });
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Left-continuous quantile function F⁻¹(u) for u in (0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.samples.len();
        let idx = ((u * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.samples[idx]
    }

    /// Fraction of samples ≤ x.
    pub fn cdf(&self, x: f64) -> f64 {
        let count = self.samples.partition_point(|&s| s <= x);
        count as f64 / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub temperature: f64,
}

/// Candidate actions in generation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    candidates: Vec<String>,
    pub provenance: Provenance,
}

impl CandidateSet {
    pub fn new(candidates: Vec<String>, provenance: Provenance) -> Result<Self, DomainError> {
        if candidates.is_empty() {
            return Err(DomainError::EmptyInput);
        }
        Ok(CandidateSet { candidates, provenance })
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn into_candidates(self) -> Vec<String> {
        self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A chosen/rejected action pair for ranking or DPO training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    #[serde(default)]
    pub record_id: String,
    pub context_text: String,
    pub value_profile: ValueProfile,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
    /// Set when every candidate scored the same, so chosen and rejected carry no signal.
    #[serde(default)]
    pub degenerate: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_the_circumplex() {
        let order = canonical_order();
        assert_eq!(order.len(), 10);
        assert_eq!(order[0], ValueDimension::SelfDirection);
        assert_eq!(order[9], ValueDimension::Universalism);
        assert_eq!(order, canonical_order());
        for (i, d) in order.iter().enumerate() {
            assert_eq!(d.index(), i);
            assert_eq!(ValueDimension::from_index(i), Some(*d));
        }
    }

    #[test]
    fn dimension_names_parse_back() {
        for d in canonical_order() {
            assert_eq!(d.name().parse::<ValueDimension>().unwrap(), d);
        }
        assert_eq!(
            "self_direction".parse::<ValueDimension>().unwrap(),
            ValueDimension::SelfDirection
        );
        assert!("Openness".parse::<ValueDimension>().is_err());
    }

    #[test]
    fn validate_profile_cases() {
        assert!(validate_profile(&[0.0; 10]).is_ok());
        assert_eq!(
            validate_profile(&[0.0; 9]),
            Err(DomainError::WrongArity { expected: 10, got: 9 })
        );
        let mut raw = [0.0; 10];
        raw[3] = 1.2;
        assert_eq!(
            validate_profile(&raw),
            Err(DomainError::OutOfRange { index: 3, value: 1.2 })
        );
        raw[3] = f64::NAN;
        assert_eq!(validate_profile(&raw), Err(DomainError::NonFinite { index: 3 }));
        raw[3] = -1.0;
        assert!(validate_profile(&raw).is_ok());
    }

    #[test]
    fn profile_serde_rejects_out_of_range() {
        let ok: ValueProfile = serde_json::from_str("[0,0,0,0,0,0,0,0,0,1]").unwrap();
        assert_eq!(ok.get(ValueDimension::Universalism), 1.0);
        assert!(serde_json::from_str::<ValueProfile>("[0,0,0,0,0,0,0,0,0,2]").is_err());
    }

    #[test]
    fn record_invariants() {
        let mut r = InteractionRecord {
            record_id: "r1".into(),
            user_id: "u1".into(),
            domain: DomainKind::MediaReview,
            context_text: "a cafe".into(),
            action_text: "nice".into(),
            rating: Some(4),
            sentiment: None,
            attitude: None,
            poi_category: None,
            stay_minutes: None,
            group_key: None,
            timestamp: None,
        };
        assert!(r.validate().is_ok());
        r.rating = Some(7);
        assert!(r.validate().is_err());
        r.rating = None;
        assert!(r.validate().is_err());
        r.domain = DomainKind::Mobility;
        r.poi_category = Some("Cafe".into());
        r.stay_minutes = Some(-1.0);
        assert!(r.validate().is_err());
        r.stay_minutes = Some(30.0);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn empirical_distribution_sorts_and_queries() {
        let d = EmpiricalDistribution::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(d.samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.quantile(0.2), 1.0);
        assert_eq!(d.quantile(0.5), 2.0);
        assert_eq!(d.quantile(1.0), 3.0);
        assert!((d.cdf(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(EmpiricalDistribution::new(vec![]).is_err());
        assert!(EmpiricalDistribution::new(vec![f64::INFINITY]).is_err());
    }
}
