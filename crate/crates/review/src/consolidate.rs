use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sonoscan_core::pii::EntityType;
use sonoscan_core::pii_eval::{fuzzy_match, GroundTruthRecord, TruthSpan};

use crate::annotation::{AnnotationRecord, Verdict};

/// Unified ground truth from all annotators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Consolidated {
    /// Images whose annotators agree, sorted by id.
    pub records: Vec<GroundTruthRecord>,
    pub verdicts: BTreeMap<String, Verdict>,
    /// Images with disagreeing verdicts, sorted. Excluded from every export.
    pub flagged: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainingExport {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl RetrainingExport {
    /// `(image_id, label)` pairs, positives first.
    pub fn labels(&self) -> Vec<(String, u8)> {
        self.positives
            .iter()
            .map(|id| (id.clone(), 1))
            .chain(self.negatives.iter().map(|id| (id.clone(), 0)))
            .collect()
    }
}

fn type_rank(t: &EntityType) -> usize {
    EntityType::AUDITED.iter().position(|a| a == t).unwrap_or(usize::MAX)
}

fn prefer(candidate: &str, current: &str) -> bool {
    let (a, b) = (candidate.chars().count(), current.chars().count());
    a > b || (a == b && candidate < current)
}

/// Merges annotators' span lists. A span collapses onto an earlier
/// annotator's span of the same type when the texts fuzzy-match; the longer
/// text is kept. Spans from one annotator never collapse onto each other.
fn merge_spans(per_annotator: &[&AnnotationRecord]) -> Vec<TruthSpan> {
    let mut merged: Vec<(TruthSpan, Vec<usize>)> = Vec::new();
    for (ai, rec) in per_annotator.iter().enumerate() {
        for s in &rec.truth_spans {
            let hit = merged.iter_mut().find(|(m, owners)| {
                m.entity_type == s.entity_type && !owners.contains(&ai) && fuzzy_match(&m.text, &s.text)
            });
            match hit {
                Some((m, owners)) => {
                    owners.push(ai);
                    if prefer(&s.text, &m.text) {
                        m.text = s.text.clone();
                    }
                }
                None => merged.push((s.clone(), vec![ai])),
            }
        }
    }
    let mut out: Vec<TruthSpan> = merged.into_iter().map(|(s, _)| s).collect();
    out.sort_by(|a, b| {
        type_rank(&a.entity_type)
            .cmp(&type_rank(&b.entity_type))
            .then_with(|| a.text.cmp(&b.text))
    });
    out
}

/// Latest revision per image and annotator, merged per image. Independent of record order.
pub fn consolidate(records: &[AnnotationRecord]) -> Consolidated {
    let mut latest: BTreeMap<(&str, &str), &AnnotationRecord> = BTreeMap::new();
    for r in records {
        let key = (r.image_id.as_str(), r.annotator.as_str());
        match latest.get(&key) {
            Some(cur) if cur.revision >= r.revision => {}
            _ => {
                latest.insert(key, r);
            }
        }
    }
    let mut by_image: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for ((image, _), r) in latest {
        // BTreeMap order: annotators sorted within each image
        by_image.entry(image).or_default().push(r);
    }
    let mut out = Consolidated::default();
    for (image, recs) in by_image {
        let verdicts: BTreeSet<Verdict> = recs.iter().map(|r| r.verdict).collect();
        if verdicts.len() > 1 {
            out.flagged.push(image.to_string());
            continue;
        }
        out.verdicts
            .insert(image.to_string(), *verdicts.first().expect("at least one record"));
        out.records.push(GroundTruthRecord {
            image_id: image.to_string(),
            spans: merge_spans(&recs),
        });
    }
    out
}

/// Confirmed ids as positives, rejected as negatives; flagged items excluded.
/// `only` keeps a single verdict class.
pub fn export_retraining(records: &[AnnotationRecord], only: Option<Verdict>) -> RetrainingExport {
    let c = consolidate(records);
    let mut out = RetrainingExport::default();
    for (id, v) in c.verdicts {
        if only.is_some_and(|o| o != v) {
            continue;
        }
        match v {
            Verdict::Confirm => out.positives.push(id),
            Verdict::Reject => out.negatives.push(id),
        }
    }
    out
}
