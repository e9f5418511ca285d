use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sonoscan_core::pii::EntitySpan;
use sonoscan_core::pii_eval::ImageEntities;
use sonoscan_core::{Detection, DetectionSource};

use crate::annotation::{AnnotationRecord, Verdict};

/// Static per-image context loaded from pipeline outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub image_id: String,
    pub score: f64,
    pub source: DetectionSource,
    pub cluster_label: Option<i32>,
    pub caption: String,
    pub ocr_text: String,
    pub candidate_spans: Vec<EntitySpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Confirmed,
    Rejected,
}

/// Queue item plus its state derived from the annotation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    #[serde(flatten)]
    pub item: QueueItem,
    /// Verdict of the most recent annotation, or pending.
    pub status: ReviewStatus,
    /// Annotators' latest verdicts disagree.
    pub flagged: bool,
    /// Number of annotation records for this image.
    pub annotations: usize,
}

impl ReviewItem {
    /// Derives status from `records`, which must all concern this item, in log order.
    pub fn from_records(item: QueueItem, records: &[&AnnotationRecord]) -> Self {
        let mut latest: BTreeMap<&str, &AnnotationRecord> = BTreeMap::new();
        for r in records {
            latest.insert(r.annotator.as_str(), r);
        }
        let verdicts: BTreeSet<Verdict> = latest.values().map(|r| r.verdict).collect();
        let status = match records.last() {
            None => ReviewStatus::Pending,
            Some(r) => match r.verdict {
                Verdict::Confirm => ReviewStatus::Confirmed,
                Verdict::Reject => ReviewStatus::Rejected,
            },
        };
        Self {
            item,
            status,
            flagged: verdicts.len() > 1,
            annotations: records.len(),
        }
    }

    pub fn matches_filter(&self, filter: &str) -> bool {
        match filter {
            "flagged" => self.flagged,
            "pending" => self.status == ReviewStatus::Pending,
            "confirmed" => !self.flagged && self.status == ReviewStatus::Confirmed,
            "rejected" => !self.flagged && self.status == ReviewStatus::Rejected,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub items: usize,
    pub pending: usize,
    pub confirmed: usize,
    pub rejected: usize,
    pub flagged: usize,
    pub annotated: usize,
    pub annotations: usize,
    pub annotators: usize,
}

impl Stats {
    pub fn compute(items: &[ReviewItem], records: &[AnnotationRecord]) -> Self {
        let mut s = Stats {
            items: items.len(),
            annotations: records.len(),
            annotators: records
                .iter()
                .map(|r| r.annotator.as_str())
                .collect::<BTreeSet<_>>()
                .len(),
            ..Stats::default()
        };
        for it in items {
            if it.annotations > 0 {
                s.annotated += 1;
            }
            if it.flagged {
                s.flagged += 1;
                continue;
            }
            match it.status {
                ReviewStatus::Pending => s.pending += 1,
                ReviewStatus::Confirmed => s.confirmed += 1,
                ReviewStatus::Rejected => s.rejected += 1,
            }
        }
        s
    }
}

/// Joins detections with cluster labels, captions and PII candidates.
/// Later detections of the same image replace earlier ones.
pub fn build_queue(
    detections: &[Detection],
    cluster_labels: &HashMap<String, i32>,
    captions: &HashMap<String, String>,
    entities: &[ImageEntities],
) -> Vec<QueueItem> {
    let ents: HashMap<&str, &ImageEntities> = entities.iter().map(|e| (e.image_id.as_str(), e)).collect();
    let mut out: BTreeMap<&str, QueueItem> = BTreeMap::new();
    for d in detections {
        let e = ents.get(d.image_id.as_str());
        out.insert(
            &d.image_id,
            QueueItem {
                image_id: d.image_id.clone(),
                score: d.score,
                source: d.source,
                cluster_label: cluster_labels.get(&d.image_id).copied(),
                caption: captions.get(&d.image_id).cloned().unwrap_or_default(),
                ocr_text: e.and_then(|e| e.text.clone()).unwrap_or_default(),
                candidate_spans: e.map(|e| e.entities.clone()).unwrap_or_default(),
            },
        );
    }
    out.into_values().collect()
}
