use proptest::prelude::*;
use sonoscan_core::pii::{analyze, AnalyzerConfig, EntityType, PatternSpec, Recognizer, RecognizerSet, RecognizerSpec};

const PIECES: &[&str] = &[
    "Baby", "Emma", "Olivia", "Smith", "Garcia", "born", "on", "12/05/2021", "March 3, 2020", "at", "10:30",
    "am", "call", "(555) 123-4567", "555-1234", "Boston", "New York", "Mercy", "Hospital", "221", "Baker",
    "Street", "edd", "é", "ü", "Dr", "Jones", "-", ",", ".", "lmp", "2020-01-05", "x", "MRN123456",
];

fn text_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec((prop::sample::select(PIECES), prop::sample::select(&[" ", "  ", "\n", ", "][..])), 0..25)
        .prop_map(|v| v.into_iter().map(|(p, s)| format!("{p}{s}")).collect())
}

fn custom(id: &str, ty: &str, regex: &str) -> Recognizer {
    Recognizer::compile(RecognizerSpec {
        id: id.into(),
        entity_type: EntityType::Custom(ty.into()),
        patterns: vec![PatternSpec {
            regex: regex.into(),
            score: 0.9,
        }],
        ..RecognizerSpec::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn spans_are_disjoint_substrings(text in text_strategy(), th in 0.0f64..1.0) {
        let cfg = AnalyzerConfig::new(th, 5, 0.35).unwrap();
        let spans = analyze(&text, &RecognizerSet::default_set(), &cfg);
        let chars: Vec<char> = text.chars().collect();
        for s in &spans {
            prop_assert!(s.start < s.end && s.end <= chars.len());
            prop_assert_eq!(&s.text, &chars[s.start..s.end].iter().collect::<String>());
            prop_assert!((0.0..=1.0).contains(&s.score));
            prop_assert!(s.score >= th);
        }
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start, "overlap {:?} {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn unmatched_recognizer_changes_nothing(text in text_strategy()) {
        let cfg = AnalyzerConfig::default();
        let base = RecognizerSet::default_set();
        let mut extra = base.clone();
        extra.push(custom("never", "NEVER", r"\bQ{7}Z{7}\b")).unwrap();
        prop_assert_eq!(analyze(&text, &base, &cfg), analyze(&text, &extra, &cfg));
    }

}

#[test]
fn custom_type_flows_through() {
    let mut set = RecognizerSet::default_set();
    set.push(custom("mrn", "MEDICAL_RECORD", r"\bMRN\d{6}\b")).unwrap();
    let spans = analyze("Patient MRN123456 seen 12/05/2021", &set, &AnalyzerConfig::default());
    let mrn: Vec<_> = spans
        .iter()
        .filter(|s| s.entity_type == EntityType::Custom("MEDICAL_RECORD".into()))
        .collect();
    assert_eq!(mrn.len(), 1);
    assert_eq!(mrn[0].text, "MRN123456");
    assert!(spans.iter().any(|s| s.entity_type == EntityType::DateTime));
    assert!(set.entity_types().contains(&EntityType::Custom("MEDICAL_RECORD".into())));
}

#[test]
fn threshold_out_of_range_rejected() {
    assert!(AnalyzerConfig::new(1.01, 5, 0.35).is_err());
    assert!(AnalyzerConfig::new(-0.01, 5, 0.35).is_err());
}
