use proptest::prelude::*;
use sonoscan_core::embedding::{cosine_scan, cosine_scan_chunked, EmbeddingMatrix};
use sonoscan_core::retrieval::{retrieve, RetrievalConfig};
use sonoscan_core::{Dataset, QueryKind, QuerySet};

fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rows_strategy(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(
        prop::collection::vec(-1.0f32..1.0, dim).prop_filter("nonzero", |r| r.iter().any(|v| v.abs() > 1e-3)),
        1..max,
    )
}

proptest! {
    #[test]
    fn scan_matches_naive(rows in rows_strategy(6, 40), q in prop::collection::vec(-1.0f32..1.0, 6), t in -1.0f64..1.0) {
        prop_assume!(q.iter().any(|v| v.abs() > 1e-3));
        let m = EmbeddingMatrix::from_rows(&rows).unwrap().normalize().unwrap();
        let qm = EmbeddingMatrix::from_rows(std::slice::from_ref(&q)).unwrap().normalize().unwrap();
        let qu = qm.row(0).to_vec();
        let hits = cosine_scan(&m, &qu, t).unwrap();
        // oracle over the stored f32 rows
        let stored: Vec<Vec<f64>> = m.rows().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
        let qf: Vec<f64> = qu.iter().map(|&v| f64::from(v)).collect();
        let mut expect: Vec<(usize, f64)> = stored.iter().enumerate()
            .map(|(i, r)| (i, naive_cos(r, &qf)))
            .filter(|(_, s)| *s >= t + 1e-9)
            .collect();
        expect.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got: Vec<usize> = hits.iter().map(|h| h.row).collect();
        for (row, _) in &expect {
            prop_assert!(got.contains(row));
        }
        for h in &hits {
            prop_assert!((h.similarity - naive_cos(&stored[h.row], &qf)).abs() < 1e-9);
            prop_assert!(h.similarity >= t);
        }
        for w in hits.windows(2) {
            prop_assert!(w[0].similarity >= w[1].similarity);
        }
    }

    #[test]
    fn chunk_size_is_invisible(rows in rows_strategy(4, 60), chunk in 1usize..70, t in -1.0f64..1.0) {
        let m = EmbeddingMatrix::from_rows(&rows).unwrap().normalize().unwrap();
        let q = m.row(0).to_vec();
        prop_assert_eq!(cosine_scan(&m, &q, t).unwrap(), cosine_scan_chunked(&m, &q, t, chunk).unwrap());
    }

    #[test]
    fn retrieval_matches_naive_and_is_monotone(
        rows in rows_strategy(5, 50),
        queries in rows_strategy(5, 4),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
    ) {
        let m = EmbeddingMatrix::from_rows(&rows).unwrap().normalize().unwrap();
        let ds = Dataset::anonymous(m.clone());
        let qs = QuerySet::unlabeled(QueryKind::Image, EmbeddingMatrix::from_rows(&queries).unwrap()).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let at = |t: f64| retrieve(&ds, &qs, &RetrievalConfig::new(t, QueryKind::Image).unwrap()).unwrap();
        let d_lo = at(lo);
        let d_hi = at(hi);
        for d in &d_hi {
            prop_assert!(d_lo.iter().any(|e| e.image_id == d.image_id));
        }
        let qrows: Vec<Vec<f64>> = qs.embeddings.rows().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
        for (i, r) in m.rows().enumerate() {
            let rf: Vec<f64> = r.iter().map(|&v| f64::from(v)).collect();
            let best = qrows.iter().map(|q| naive_cos(&rf, q)).fold(f64::NEG_INFINITY, f64::max);
            let flagged = d_lo.iter().find(|d| d.image_id == format!("img-{i:06}"));
            if best >= lo + 1e-9 {
                prop_assert!(flagged.is_some());
            }
            if best < lo - 1e-9 {
                prop_assert!(flagged.is_none());
            }
            if let Some(d) = flagged {
                prop_assert!((d.score - best).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn tau_above_one_rejected() {
    assert!(RetrievalConfig::new(1.0 + 1e-9, QueryKind::Image).is_err());
    assert!(RetrievalConfig::new(-0.1, QueryKind::Text).is_err());
}

#[test]
fn unnormalized_dataset_refused() {
    let m = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
    assert!(cosine_scan(&m, &[1.0, 0.0], 0.0).is_err());
}
