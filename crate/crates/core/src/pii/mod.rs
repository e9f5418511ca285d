//! Private-information entity detection in recognized text.
//!
//! Recognizers are declared in a TOML spec (see `data/recognizers.toml`):
//! regex patterns with base scores, gazetteer lookups for names and places,
//! context words that raise a match's score, and validators that veto
//! matches. [`analyze`] runs a recognizer set over one text and returns
//! non-overlapping spans sorted by start offset. Offsets count Unicode scalar
//! values, not bytes.

mod analyzer;
mod recognizer;
mod text;

pub use analyzer::{analyze, AnalyzerConfig};
pub use recognizer::{
    load_recognizers, PatternSpec, Recognizer, RecognizerFile, RecognizerKind, RecognizerSet, RecognizerSpec,
    Validator,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PiiError {
    #[error("recognizer {recognizer:?}, pattern {index}: invalid regex: {message}")]
    BadRegex {
        recognizer: String,
        index: usize,
        message: String,
    },
    #[error("recognizer {recognizer:?}: {message}")]
    BadSpec { recognizer: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("recognizer spec: {0}")]
    Parse(String),
    #[error("score threshold {0} outside [0, 1]")]
    Threshold(f64),
}

/// Entity category. The four audited types plus any custom type a spec declares.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum EntityType {
    Name,
    Location,
    DateTime,
    PhoneNumber,
    Custom(String),
}

impl EntityType {
    pub const AUDITED: [EntityType; 4] = [
        EntityType::Name,
        EntityType::Location,
        EntityType::PhoneNumber,
        EntityType::DateTime,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            EntityType::Name => "NAME",
            EntityType::Location => "LOCATION",
            EntityType::DateTime => "DATE_TIME",
            EntityType::PhoneNumber => "PHONE_NUMBER",
            EntityType::Custom(s) => s,
        }
    }

    pub fn is_audited(&self) -> bool {
        !matches!(self, EntityType::Custom(_))
    }
}

impl From<String> for EntityType {
    fn from(s: String) -> Self {
        match s.as_str() {
            "NAME" => EntityType::Name,
            "LOCATION" => EntityType::Location,
            "DATE_TIME" => EntityType::DateTime,
            "PHONE_NUMBER" => EntityType::PhoneNumber,
            _ => EntityType::Custom(s),
        }
    }
}

impl From<EntityType> for String {
    fn from(t: EntityType) -> Self {
        t.as_str().to_string()
    }
}

impl FromStr for EntityType {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(EntityType::from(s.to_string()))
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed match. `start..end` is a half-open character range of the analyzed text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub entity_type: EntityType,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub score: f64,
    pub recognizer: String,
}

fn only(ty: EntityType, text: &str) -> Vec<EntitySpan> {
    let set = RecognizerSet::default_set().restricted_to(&ty);
    analyze(text, &set, &AnalyzerConfig::default())
}

/// Dates, times and combined stamps using the default recognizers.
pub fn recognize_datetime(text: &str) -> Vec<EntitySpan> {
    only(EntityType::DateTime, text)
}

pub fn recognize_phone(text: &str) -> Vec<EntitySpan> {
    only(EntityType::PhoneNumber, text)
}

/// Gazetteer names with the given word lists, default scores and context words.
pub fn recognize_name(
    text: &str,
    given_names: &[&str],
    surnames: &[&str],
) -> Vec<EntitySpan> {
    let spec = RecognizerSpec {
        id: "person_name".into(),
        entity_type: EntityType::Name,
        kind: RecognizerKind::Name,
        gazetteer_entries: Some(given_names.iter().map(|s| s.to_lowercase()).collect()),
        surname_entries: Some(surnames.iter().map(|s| s.to_lowercase()).collect()),
        base_score: Some(0.5),
        extended_score: Some(0.7),
        context_words: ["baby", "mom", "mother", "dr", "name", "patient"]
            .map(String::from)
            .to_vec(),
        ..RecognizerSpec::default()
    };
    let set = RecognizerSet::from_specs(vec![spec]).expect("static spec is valid");
    analyze(text, &set, &AnalyzerConfig::default())
}

/// Places from `places` plus the default street-address pattern.
pub fn recognize_location(text: &str, places: &[&str]) -> Vec<EntitySpan> {
    let default = RecognizerSet::default_set();
    let mut specs: Vec<RecognizerSpec> = default
        .recognizers()
        .iter()
        .filter(|r| r.id() == "street_address")
        .map(|r| r.spec().clone())
        .collect();
    specs.push(RecognizerSpec {
        id: "place_name".into(),
        entity_type: EntityType::Location,
        kind: RecognizerKind::Gazetteer,
        gazetteer_entries: Some(places.iter().map(|s| s.to_lowercase()).collect()),
        base_score: Some(0.5),
        context_words: ["at", "hospital", "clinic", "center"].map(String::from).to_vec(),
        ..RecognizerSpec::default()
    });
    let set = RecognizerSet::from_specs(specs).expect("static spec is valid");
    analyze(text, &set, &AnalyzerConfig::default())
}
