use serde::{Deserialize, Serialize};

use super::recognizer::{Candidate, RecognizerSet};
use super::text::{tokens, CharIndex, Token};
use super::{EntitySpan, EntityType, PiiError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerConfig {
    /// Spans scoring below this are dropped.
    pub score_threshold: f64,
    /// Tokens inspected on each side of a match for context words.
    pub context_window: usize,
    pub context_boost: f64,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.4,
            context_window: 5,
            context_boost: 0.35,
        }
    }
}

impl AnalyzerConfig {
    pub fn new(score_threshold: f64, context_window: usize, context_boost: f64) -> Result<Self, PiiError> {
        if !(0.0..=1.0).contains(&score_threshold) {
            return Err(PiiError::Threshold(score_threshold));
        }
        Ok(Self {
            score_threshold,
            context_window,
            context_boost: context_boost.max(0.0),
        })
    }
}

struct Scored {
    start: usize,
    end: usize,
    score: f64,
    order: usize,
}

fn has_context(
    text: &str,
    toks: &[Token],
    c: &Candidate,
    window: usize,
    is_context: impl Fn(&str) -> bool,
) -> bool {
    if window == 0 {
        return false;
    }
    let before = toks.partition_point(|t| t.end <= c.start);
    let after = toks.partition_point(|t| t.start < c.end);
    toks[before.saturating_sub(window)..before]
        .iter()
        .chain(toks[after..toks.len().min(after + window)].iter())
        .any(|t| is_context(&t.as_str(text).to_lowercase()))
}

/// Runs every recognizer over `text` and returns non-overlapping spans sorted by start.
pub fn analyze(text: &str, set: &RecognizerSet, cfg: &AnalyzerConfig) -> Vec<EntitySpan> {
    let toks = tokens(text);
    let mut found: Vec<Scored> = Vec::new();
    for (order, r) in set.recognizers().iter().enumerate() {
        for c in r.candidates(text, &toks) {
            let mut score = c.score;
            if has_context(text, &toks, &c, cfg.context_window, |w| r.is_context_word(w)) {
                score = (score + cfg.context_boost).min(1.0);
            }
            if !r.validates(&text[c.start..c.end]) || score < cfg.score_threshold {
                continue;
            }
            found.push(Scored {
                start: c.start,
                end: c.end,
                score,
                order,
            });
        }
    }

    found.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((b.end - b.start).cmp(&(a.end - a.start)))
            .then(a.start.cmp(&b.start))
            .then(a.order.cmp(&b.order))
    });
    let mut kept: Vec<Scored> = Vec::new();
    for s in found {
        if kept.iter().all(|k| s.end <= k.start || k.end <= s.start) {
            kept.push(s);
        }
    }
    kept.sort_by_key(|s| s.start);

    let idx = CharIndex::new(text);
    let recognizers = set.recognizers();
    let mut out: Vec<EntitySpan> = Vec::with_capacity(kept.len());
    for s in kept {
        let r = &recognizers[s.order];
        if let Some(prev) = out.last_mut() {
            let prev_end = idx.byte_of(prev.end);
            if prev.entity_type == EntityType::DateTime
                && *r.entity_type() == EntityType::DateTime
                && joinable_gap(&text[prev_end..s.start])
            {
                prev.end = idx.char_of(s.end);
                prev.text = text[idx.byte_of(prev.start)..s.end].to_string();
                prev.score = prev.score.max(s.score);
                prev.recognizer = format!("{}+{}", prev.recognizer, r.id());
                continue;
            }
        }
        out.push(EntitySpan {
            entity_type: r.entity_type().clone(),
            start: idx.char_of(s.start),
            end: idx.char_of(s.end),
            text: text[s.start..s.end].to_string(),
            score: s.score,
            recognizer: r.id().to_string(),
        });
    }
    out
}

/// A date and a time separated by at most one whitespace character form one stamp.
fn joinable_gap(gap: &str) -> bool {
    gap.chars().count() <= 1 && gap.chars().all(char::is_whitespace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pii::{recognize_location, recognize_name};

    fn run(text: &str) -> Vec<(String, String)> {
        analyze(text, &RecognizerSet::default_set(), &AnalyzerConfig::default())
            .into_iter()
            .map(|s| (s.entity_type.to_string(), s.text))
            .collect()
    }

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn mixed_sentence() {
        assert_eq!(
            run("Baby Chloe due 12/05/2021, call (555) 123-4567."),
            pairs(&[
                ("NAME", "Chloe"),
                ("DATE_TIME", "12/05/2021"),
                ("PHONE_NUMBER", "(555) 123-4567"),
            ])
        );
    }

    #[test]
    fn short_number_is_not_a_phone() {
        assert!(run("call 123").is_empty());
    }

    #[test]
    fn date_and_time_merge() {
        let spans = analyze(
            "03-11-2019 10:42:07AM",
            &RecognizerSet::default_set(),
            &AnalyzerConfig::default(),
        );
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].entity_type, EntityType::DateTime);
        assert_eq!((spans[0].start, spans[0].end), (0, 21));
    }

    #[test]
    fn month_name_date() {
        assert_eq!(run("Jan 3, 2020"), pairs(&[("DATE_TIME", "Jan 3, 2020")]));
    }

    #[test]
    fn name_rules() {
        let s = recognize_name("Jessica Smith", &["jessica"], &["smith"]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].text, "Jessica Smith");
        assert!((s[0].score - 0.7).abs() < 1e-12);
        assert!(recognize_name("chloe", &["chloe"], &[]).is_empty());
        assert!(recognize_name("Baby Chole", &["chloe"], &[]).is_empty());
        let boosted = recognize_name("Baby Chloe", &["chloe"], &[]);
        assert!((boosted[0].score - 0.85).abs() < 1e-12);
    }

    #[test]
    fn location_rules() {
        let a = recognize_location("123 Maple Ave", &[]);
        assert_eq!(a[0].text, "123 Maple Ave");
        let p = recognize_location("Springfield", &["springfield"]);
        assert_eq!(p[0].text, "Springfield");
        assert!(recognize_location("avenue of approach", &["springfield"]).is_empty());
    }

    #[test]
    fn context_window_limits() {
        let set = RecognizerSet::default_set().restricted_to(&EntityType::PhoneNumber);
        // 555-1234 scores 0.5 alone; "call" six tokens away does not boost
        let far = analyze("call a b c d e 555-1234", &set, &AnalyzerConfig::default());
        assert!((far[0].score - 0.5).abs() < 1e-12);
        let near = analyze("call a b c d 555-1234", &set, &AnalyzerConfig::default());
        assert!((near[0].score - 0.85).abs() < 1e-12);
    }

    #[test]
    fn threshold_bounds() {
        assert!(AnalyzerConfig::new(1.2, 5, 0.35).is_err());
        let strict = AnalyzerConfig::new(0.9, 5, 0.0).unwrap();
        assert!(analyze("Springfield", &RecognizerSet::default_set(), &strict).is_empty());
    }

    #[test]
    fn char_offsets_with_accents() {
        let spans = analyze("Née à Springfield", &RecognizerSet::default_set(), &AnalyzerConfig::default());
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (6, 17));
    }
}
