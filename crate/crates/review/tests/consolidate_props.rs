use proptest::prelude::*;
use sonoscan_core::pii::EntityType;
use sonoscan_core::pii_eval::TruthSpan;
use sonoscan_review::{consolidate, export_retraining, AnnotationRecord, Verdict};

fn record() -> impl Strategy<Value = AnnotationRecord> {
    (
        0..4usize,
        0..3usize,
        1..4u64,
        any::<bool>(),
        prop::collection::vec((0..4usize, "[A-Z][a-z]{2,6}"), 0..4),
    )
        .prop_map(|(img, who, rev, confirm, spans)| AnnotationRecord {
            image_id: format!("img-{img}"),
            annotator: format!("a{who}"),
            revision: rev,
            verdict: if confirm { Verdict::Confirm } else { Verdict::Reject },
            truth_spans: spans
                .into_iter()
                .map(|(t, text)| TruthSpan {
                    entity_type: EntityType::AUDITED[t].clone(),
                    text,
                })
                .collect(),
            timestamp: 1,
        })
}

/// One record per (image, annotator, revision), as the log guarantees.
fn unique(mut v: Vec<AnnotationRecord>) -> Vec<AnnotationRecord> {
    let mut seen = std::collections::HashSet::new();
    v.retain(|r| seen.insert((r.image_id.clone(), r.annotator.clone(), r.revision)));
    v
}

proptest! {
    #[test]
    fn order_independent_and_idempotent(
        recs in prop::collection::vec(record(), 0..20).prop_map(unique),
        seed in any::<u64>(),
    ) {
        let base = consolidate(&recs);
        let mut shuffled = recs.clone();
        // deterministic permutation from the seed
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(&consolidate(&shuffled), &base);
        let doubled: Vec<AnnotationRecord> = recs.iter().chain(recs.iter()).cloned().collect();
        prop_assert_eq!(&consolidate(&doubled), &base);
        let e = export_retraining(&recs, None);
        for id in e.positives.iter().chain(e.negatives.iter()) {
            prop_assert!(!base.flagged.contains(id));
        }
        prop_assert_eq!(e.positives.len() + e.negatives.len(), base.records.len());
    }
}
