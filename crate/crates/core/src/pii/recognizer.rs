use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::text::Token;
use super::{EntityType, PiiError};
use crate::cluster::parse_word_list;

const DEFAULT_SPEC: &str = include_str!("../../data/recognizers.toml");
const GIVEN_NAMES: &str = include_str!("../../data/gazetteers/given_names.txt");
const SURNAMES: &str = include_str!("../../data/gazetteers/surnames.txt");
const PLACES: &str = include_str!("../../data/gazetteers/places.txt");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecognizerKind {
    /// Regular expressions with per-pattern scores.
    #[default]
    Pattern,
    /// Capitalized given name from a gazetteer, optionally extended by a surname.
    Name,
    /// Capitalized word sequence found in a gazetteer.
    Gazetteer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub regex: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Validator {
    /// Inclusive bounds on the number of ASCII digits in the match.
    #[serde(default)]
    pub digit_count: Option<[usize; 2]>,
}

impl Validator {
    pub fn accepts(&self, matched: &str) -> bool {
        match self.digit_count {
            Some([lo, hi]) => {
                let n = matched.chars().filter(char::is_ascii_digit).count();
                lo <= n && n <= hi
            }
            None => true,
        }
    }
}

fn default_true() -> bool {
    true
}

/// One recognizer as declared in a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizerSpec {
    pub id: String,
    pub entity_type: EntityType,
    #[serde(default)]
    pub kind: RecognizerKind,
    #[serde(default)]
    pub patterns: Vec<PatternSpec>,
    /// Word-list path, relative to the spec file.
    #[serde(default)]
    pub gazetteer: Option<String>,
    #[serde(default)]
    pub surnames: Option<String>,
    #[serde(default)]
    pub base_score: Option<f64>,
    #[serde(default)]
    pub extended_score: Option<f64>,
    #[serde(default)]
    pub context_words: Vec<String>,
    #[serde(default)]
    pub validator: Option<Validator>,
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Resolved gazetteer entries, lowercase.
    #[serde(skip)]
    pub gazetteer_entries: Option<Vec<String>>,
    #[serde(skip)]
    pub surname_entries: Option<Vec<String>>,
}

impl Default for RecognizerSpec {
    fn default() -> Self {
        Self {
            id: String::new(),
            entity_type: EntityType::Custom(String::new()),
            kind: RecognizerKind::Pattern,
            patterns: Vec::new(),
            gazetteer: None,
            surnames: None,
            base_score: None,
            extended_score: None,
            context_words: Vec::new(),
            validator: None,
            enabled: true,
            gazetteer_entries: None,
            surname_entries: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecognizerFile {
    #[serde(default)]
    pub recognizer: Vec<RecognizerSpec>,
}

/// A raw match before scoring adjustments. Byte offsets.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Candidate {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
enum Matcher {
    Patterns(Vec<(Regex, f64)>),
    Name {
        given: HashSet<String>,
        surnames: HashSet<String>,
        base: f64,
        extended: f64,
    },
    Gazetteer {
        entries: HashSet<String>,
        max_words: usize,
        base: f64,
    },
}

/// A compiled recognizer.
#[derive(Debug, Clone)]
pub struct Recognizer {
    spec: RecognizerSpec,
    context: HashSet<String>,
    matcher: Matcher,
}

fn check_score(id: &str, what: &str, s: f64) -> Result<f64, PiiError> {
    if (0.0..=1.0).contains(&s) {
        Ok(s)
    } else {
        Err(PiiError::BadSpec {
            recognizer: id.to_string(),
            message: format!("{what} {s} outside [0, 1]"),
        })
    }
}

fn normalize_entry(e: &str) -> String {
    e.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Recognizer {
    pub fn compile(spec: RecognizerSpec) -> Result<Self, PiiError> {
        let id = spec.id.clone();
        let bad = |message: String| PiiError::BadSpec {
            recognizer: id.clone(),
            message,
        };
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let entries = |list: &Option<Vec<String>>, what: &str| -> Result<HashSet<String>, PiiError> {
            list.as_ref()
                .map(|v| v.iter().map(|e| normalize_entry(e)).filter(|e| !e.is_empty()).collect())
                .ok_or_else(|| bad(format!("{what} gazetteer not resolved")))
        };
        let matcher = match spec.kind {
            RecognizerKind::Pattern => {
                if spec.patterns.is_empty() {
                    return Err(bad("pattern recognizer without patterns".into()));
                }
                let mut compiled = Vec::with_capacity(spec.patterns.len());
                for (index, p) in spec.patterns.iter().enumerate() {
                    let re = Regex::new(&p.regex).map_err(|e| PiiError::BadRegex {
                        recognizer: id.clone(),
                        index,
                        message: e.to_string(),
                    })?;
                    compiled.push((re, check_score(&id, "pattern score", p.score)?));
                }
                Matcher::Patterns(compiled)
            }
            RecognizerKind::Name => {
                let base = check_score(&id, "base_score", spec.base_score.unwrap_or(0.5))?;
                Matcher::Name {
                    given: entries(&spec.gazetteer_entries, "given-name")?,
                    surnames: match &spec.surname_entries {
                        Some(_) => entries(&spec.surname_entries, "surname")?,
                        None => HashSet::new(),
                    },
                    base,
                    extended: check_score(&id, "extended_score", spec.extended_score.unwrap_or(base))?,
                }
            }
            RecognizerKind::Gazetteer => {
                let entries = entries(&spec.gazetteer_entries, "place")?;
                let max_words = entries
                    .iter()
                    .map(|e| e.split(' ').count())
                    .max()
                    .unwrap_or(0);
                Matcher::Gazetteer {
                    entries,
                    max_words,
                    base: check_score(&id, "base_score", spec.base_score.unwrap_or(0.5))?,
                }
            }
        };
        let context = spec.context_words.iter().map(|w| w.to_lowercase()).collect();
        Ok(Self {
            spec,
            context,
            matcher,
        })
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn entity_type(&self) -> &EntityType {
        &self.spec.entity_type
    }

    pub fn spec(&self) -> &RecognizerSpec {
        &self.spec
    }

    pub(crate) fn is_context_word(&self, lower: &str) -> bool {
        self.context.contains(lower)
    }

    pub(crate) fn validates(&self, matched: &str) -> bool {
        self.spec.validator.as_ref().is_none_or(|v| v.accepts(matched))
    }

    pub(crate) fn candidates(&self, text: &str, toks: &[Token]) -> Vec<Candidate> {
        match &self.matcher {
            Matcher::Patterns(res) => {
                let mut out = Vec::new();
                for (re, score) in res {
                    out.extend(
                        re.find_iter(text)
                            .filter(|m| !m.is_empty())
                            .map(|m| Candidate {
                                start: m.start(),
                                end: m.end(),
                                score: *score,
                            }),
                    );
                }
                out
            }
            Matcher::Name {
                given,
                surnames,
                base,
                extended,
            } => {
                let mut out = Vec::new();
                for (i, t) in toks.iter().enumerate() {
                    if !t.is_capitalized(text) || !given.contains(&t.as_str(text).to_lowercase()) {
                        continue;
                    }
                    let next = toks.get(i + 1).filter(|n| {
                        n.is_capitalized(text)
                            && separated_by_space(text, t, n)
                            && surnames.contains(&n.as_str(text).to_lowercase())
                    });
                    out.push(match next {
                        Some(n) => Candidate {
                            start: t.start,
                            end: n.end,
                            score: *extended,
                        },
                        None => Candidate {
                            start: t.start,
                            end: t.end,
                            score: *base,
                        },
                    });
                }
                out
            }
            Matcher::Gazetteer {
                entries,
                max_words,
                base,
            } => {
                let mut out = Vec::new();
                for i in 0..toks.len() {
                    if !toks[i].is_capitalized(text) {
                        continue;
                    }
                    let mut key = String::new();
                    let mut best = None;
                    for j in i..toks.len().min(i + max_words) {
                        if j > i {
                            if !separated_by_space(text, &toks[j - 1], &toks[j]) {
                                break;
                            }
                            key.push(' ');
                        }
                        key.push_str(&toks[j].as_str(text).to_lowercase());
                        if entries.contains(&key) {
                            best = Some(j);
                        }
                    }
                    if let Some(j) = best {
                        out.push(Candidate {
                            start: toks[i].start,
                            end: toks[j].end,
                            score: *base,
                        });
                    }
                }
                out
            }
        }
    }
}

fn separated_by_space(text: &str, a: &Token, b: &Token) -> bool {
    let gap = &text[a.end..b.start];
    !gap.is_empty() && gap.chars().all(char::is_whitespace)
}

/// An ordered collection of compiled, enabled recognizers.
#[derive(Debug, Clone, Default)]
pub struct RecognizerSet {
    recognizers: Vec<Recognizer>,
}

impl RecognizerSet {
    /// Compiles every enabled spec. Gazetteer entries must already be resolved.
    pub fn from_specs(specs: Vec<RecognizerSpec>) -> Result<Self, PiiError> {
        let mut seen = HashSet::new();
        let mut recognizers = Vec::new();
        for spec in specs {
            if !seen.insert(spec.id.clone()) {
                return Err(PiiError::BadSpec {
                    recognizer: spec.id,
                    message: "duplicate id".into(),
                });
            }
            if spec.enabled {
                recognizers.push(Recognizer::compile(spec)?);
            }
        }
        Ok(Self { recognizers })
    }

    /// Parses a spec document; `read_list` maps a gazetteer path to its contents.
    pub fn from_toml<F>(text: &str, mut read_list: F) -> Result<Self, PiiError>
    where
        F: FnMut(&str) -> Result<String, PiiError>,
    {
        let file: RecognizerFile = toml::from_str(text).map_err(|e| PiiError::Parse(e.to_string()))?;
        let mut specs = file.recognizer;
        for spec in &mut specs {
            if !spec.enabled {
                continue;
            }
            if let Some(path) = &spec.gazetteer {
                spec.gazetteer_entries = Some(sorted(parse_word_list(&read_list(path)?)));
            }
            if let Some(path) = &spec.surnames {
                spec.surname_entries = Some(sorted(parse_word_list(&read_list(path)?)));
            }
        }
        Self::from_specs(specs)
    }

    /// The bundled recognizers for names, places, dates and times, and phone numbers.
    pub fn default_set() -> Self {
        static SET: OnceLock<RecognizerSet> = OnceLock::new();
        SET.get_or_init(|| {
            Self::from_toml(DEFAULT_SPEC, |path| match path {
                "gazetteers/given_names.txt" => Ok(GIVEN_NAMES.to_string()),
                "gazetteers/surnames.txt" => Ok(SURNAMES.to_string()),
                "gazetteers/places.txt" => Ok(PLACES.to_string()),
                other => Err(PiiError::Parse(format!("unknown bundled gazetteer {other}"))),
            })
            .expect("bundled recognizer spec is valid")
        })
        .clone()
    }

    pub fn recognizers(&self) -> &[Recognizer] {
        &self.recognizers
    }

    pub fn len(&self) -> usize {
        self.recognizers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recognizers.is_empty()
    }

    /// Distinct entity types, in first-declared order.
    pub fn entity_types(&self) -> Vec<EntityType> {
        let mut out: Vec<EntityType> = Vec::new();
        for r in &self.recognizers {
            if !out.contains(r.entity_type()) {
                out.push(r.entity_type().clone());
            }
        }
        out
    }

    pub fn restricted_to(&self, ty: &EntityType) -> Self {
        Self {
            recognizers: self
                .recognizers
                .iter()
                .filter(|r| r.entity_type() == ty)
                .cloned()
                .collect(),
        }
    }

    pub fn push(&mut self, r: Recognizer) -> Result<(), PiiError> {
        if self.recognizers.iter().any(|x| x.id() == r.id()) {
            return Err(PiiError::BadSpec {
                recognizer: r.id().to_string(),
                message: "duplicate id".into(),
            });
        }
        self.recognizers.push(r);
        Ok(())
    }
}

fn sorted(set: HashSet<String>) -> Vec<String> {
    let mut v: Vec<String> = set.into_iter().collect();
    v.sort();
    v
}

/// Loads a spec file. Gazetteer paths resolve against the file's directory.
pub fn load_recognizers(path: impl AsRef<Path>) -> Result<RecognizerSet, PiiError> {
    let path = path.as_ref();
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|source| PiiError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    RecognizerSet::from_toml(&text, |rel| read(&base.join(rel)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pii::text::tokens;

    #[test]
    fn default_set_covers_four_types() {
        let set = RecognizerSet::default_set();
        let mut types = set.entity_types();
        types.sort();
        assert_eq!(types, {
            let mut a = EntityType::AUDITED.to_vec();
            a.sort();
            a
        });
        assert!(set.recognizers().iter().all(|r| r.id() != "gestational_age"));
    }

    #[test]
    fn bad_regex_names_recognizer() {
        let spec = r#"
            [[recognizer]]
            id = "broken_one"
            entity_type = "DATE_TIME"
            patterns = [{ regex = '\d{2', score = 0.5 }]
        "#;
        let err = RecognizerSet::from_toml(spec, |_| Ok(String::new())).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, PiiError::BadRegex { .. }));
        assert!(msg.contains("broken_one"), "{msg}");
    }

    #[test]
    fn out_of_range_score_rejected() {
        let spec = r#"
            [[recognizer]]
            id = "x"
            entity_type = "NAME"
            patterns = [{ regex = 'a', score = 1.5 }]
        "#;
        assert!(matches!(
            RecognizerSet::from_toml(spec, |_| Ok(String::new())),
            Err(PiiError::BadSpec { .. })
        ));
    }

    #[test]
    fn digit_validator() {
        let v = Validator {
            digit_count: Some([7, 15]),
        };
        assert!(v.accepts("(555) 123-4567"));
        assert!(!v.accepts("123-45"));
        assert!(Validator::default().accepts(""));
    }

    #[test]
    fn multi_word_place_prefers_longest() {
        let spec = RecognizerSpec {
            id: "p".into(),
            entity_type: EntityType::Location,
            kind: RecognizerKind::Gazetteer,
            gazetteer_entries: Some(vec!["new york".into(), "york".into()]),
            ..RecognizerSpec::default()
        };
        let r = Recognizer::compile(spec).unwrap();
        let text = "in New York today";
        let c = r.candidates(text, &tokens(text));
        assert_eq!(&text[c[0].start..c[0].end], "New York");
    }
}
