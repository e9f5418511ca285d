//! One PASS/FAIL line per acceptance criterion. Runs without the libtest harness.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use serde_json::{json, Value};
use sonoscan_core::classifier::{
    adam_step, predict, train_mlp, train_rf, train_svm, LabeledSet, MlpConfig, MlpModel, Model, RfGrid, Split,
    SvmConfig,
};
use sonoscan_core::cluster::{hdbscan, tsne_2d, Points, TsneConfig};
use sonoscan_core::dedup::deduplicate;
use sonoscan_core::pii::{analyze, AnalyzerConfig, EntitySpan, EntityType, RecognizerSet};
use sonoscan_core::pii_eval::{
    cooccurrence, fuzzy_match, lcs_similarity, levenshtein, presence_code, score_detections, GroundTruthRecord,
    ImageEntities, TruthSpan, TypeScore,
};
use sonoscan_core::retrieval::{max_query_similarity, tune_tau};
use sonoscan_core::{EmbeddingMatrix, QueryKind, QuerySet};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("classifiers_beat_retrieval", classifiers_beat_retrieval),
        ("mlp_gradients_and_adam", mlp_gradients_and_adam),
        ("dedup_matches_component_oracle", dedup_matches_component_oracle),
        ("hdbscan_properties", hdbscan_properties),
        ("tsne_properties", tsne_properties),
        ("fuzzy_matching", fuzzy_matching),
        ("pii_fixture_f1", pii_fixture_f1),
        ("cooccurrence_codes", cooccurrence_codes),
        ("end_to_end_deterministic", end_to_end_deterministic),
        ("review_round_trip", review_round_trip),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS {name}: {d} ({secs:.1}s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- classifiers

/// Two Gaussian classes in 512-d differing by 0.6 on the first 64 dims.
fn surrogate(n: usize, rng: &mut ChaCha8Rng) -> (EmbeddingMatrix, Vec<u8>) {
    let noise = Normal::new(0.0f32, 1.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let mean = if label == 1 { 0.3 } else { -0.3 };
        rows.push(
            (0..512)
                .map(|d| noise.sample(rng) + if d < 64 { mean } else { 0.0 })
                .collect::<Vec<f32>>(),
        );
        y.push(label);
    }
    (EmbeddingMatrix::from_rows(&rows).unwrap(), y)
}

fn accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn classifiers_beat_retrieval() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (xtr, ytr) = surrogate(3960, &mut rng);
    let (xva, yva) = surrogate(990, &mut rng);
    let (xte, yte) = surrogate(990, &mut rng);
    let train = LabeledSet::with_index_ids(xtr.clone(), ytr.clone(), "tr", Split::Train).unwrap();
    let val = LabeledSet::with_index_ids(xva.clone(), yva.clone(), "va", Split::Val).unwrap();

    let svm = Model::Svm(train_svm(&train, &val, &SvmConfig { seed: 7, ..SvmConfig::default() }).unwrap());
    let rf = Model::Forest(train_rf(&train, &val, &RfGrid { seed: 7, ..RfGrid::default() }).unwrap());
    let mlp = Model::Mlp(train_mlp(&train, &val, &MlpConfig { seed: 7, ..MlpConfig::default() }).unwrap());

    let positives: Vec<usize> = (0..ytr.len()).filter(|&i| ytr[i] == 1).collect();
    let picks: Vec<usize> = positives.choose_multiple(&mut rng, 5).copied().collect();
    let queries = QuerySet::unlabeled(QueryKind::Image, xtr.select(&picks)).unwrap();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let xva_n = xva.normalize().unwrap();
    let xte_n = xte.clone().normalize().unwrap();
    let tau = tune_tau(&xva_n, &yva, &queries, &grid).unwrap();
    let ret_pred: Vec<u8> = max_query_similarity(&xte_n, &queries)
        .unwrap()
        .into_iter()
        .map(|(s, _)| u8::from(s >= tau))
        .collect();
    let ret_acc = accuracy(&ret_pred, &yte);

    let mut detail = vec![format!("retrieval={ret_acc:.4} (tau {tau:.2})")];
    let mut ok = true;
    for (name, m) in [("svm", &svm), ("rf", &rf), ("mlp", &mlp)] {
        let acc = accuracy(&predict(m, &xte).unwrap().1, &yte);
        detail.push(format!("{name}={acc:.4}"));
        ok &= acc >= 0.90 && acc > ret_acc;
    }
    let secs = start.elapsed().as_secs_f64();
    detail.push(format!("total {secs:.0}s"));
    let detail = detail.join(" ");
    if ok && secs < 300.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- mlp

fn mlp_gradients_and_adam() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let model = MlpModel::init(&[8, 4, 2, 1], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x: Vec<f64> = (0..6 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<u8> = (0..6).map(|i| (i % 2) as u8).collect();
        let (_, grads) = model.loss_and_gradients(&x, &y);
        let h = 1e-5;
        for li in 0..model.layers.len() {
            for which in 0..2 {
                let len = if which == 0 { model.layers[li].w.len() } else { model.layers[li].b.len() };
                for k in 0..len {
                    let (mut p, mut m) = (model.clone(), model.clone());
                    if which == 0 {
                        p.layers[li].w[k] += h;
                        m.layers[li].w[k] -= h;
                    } else {
                        p.layers[li].b[k] += h;
                        m.layers[li].b[k] -= h;
                    }
                    let numeric = (p.loss(&x, &y) - m.loss(&x, &y)) / (2.0 * h);
                    let analytic = if which == 0 { grads[li].0[k] } else { grads[li].1[k] };
                    let scale = analytic.abs().max(numeric.abs());
                    let err = (analytic - numeric).abs() / if scale < 1e-7 { 1.0 } else { scale };
                    worst = worst.max(err);
                }
            }
        }
    }
    check(worst < 1e-3, format!("gradient relative error {worst:.2e}"))?;

    // two Adam steps against values computed by hand at high precision
    let mut theta = [0.5, -1.0];
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    adam_step(&mut theta, &[0.2, -0.4], &mut m, &mut v, 1, 0.01, 0.9, 0.999, 1e-8);
    let t1 = theta;
    adam_step(&mut theta, &[0.1, 0.1], &mut m, &mut v, 2, 0.01, 0.9, 0.999, 1e-8);
    let expect = [
        (t1[0], 0.490000000499999975),
        (t1[1], -0.99000000024999999375),
        (theta[0], 0.48067820470153651531),
        (theta[1], -0.98530531869898288243),
    ];
    let gap = expect.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(gap < 1e-10, format!("adam deviates by {gap:.2e}"))?;
    Ok(format!("max gradient error {worst:.2e}, adam gap {gap:.1e}"))
}

// ---------------------------------------------------------------- dedup

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn components_bfs(ids: &[String], rows: &[Vec<f32>], theta: f64) -> Vec<Vec<String>> {
    let n = rows.len();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut comp = Vec::new();
        while let Some(u) = stack.pop() {
            comp.push(ids[u].clone());
            for v in 0..n {
                if !seen[v] && cos(&rows[u], &rows[v]) > theta {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        comp.sort();
        comps.push(comp);
    }
    comps.sort();
    comps
}

fn dedup_matches_component_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let jitter = Normal::new(0.0f32, 0.05).unwrap();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    while rows.len() < 500 {
        let base: Vec<f32> = (0..32).map(|_| normal.sample(&mut rng)).collect();
        for _ in 0..rng.random_range(0..4) {
            if rows.len() < 499 {
                rows.push(base.iter().map(|v| v + jitter.sample(&mut rng)).collect());
            }
        }
        rows.push(base);
    }
    rows.shuffle(&mut rng);
    let ids: Vec<String> = (0..500).map(|i| format!("im{i:04}")).collect();
    let m = EmbeddingMatrix::from_rows(&rows).unwrap();
    let r = deduplicate(&ids, &m, 0.92).unwrap();
    let expect = components_bfs(&ids, &rows, 0.92);
    check(r.components == expect, "components differ from breadth-first oracle")?;
    let kept: Vec<String> = expect.iter().map(|c| c[0].clone()).collect();
    check(r.kept == kept, "representatives are not the smallest id per component")?;
    let keep_rows: Vec<usize> = r.kept.iter().map(|k| ids.iter().position(|i| i == k).unwrap()).collect();
    let again = deduplicate(&r.kept, &m.select(&keep_rows), 0.92).unwrap();
    check(again.removed.is_empty(), "second pass removed survivors")?;
    let groups = expect.iter().filter(|c| c.len() > 1).count();
    Ok(format!("{} kept, {} removed, {groups} groups", r.kept.len(), r.removed.len()))
}

// ---------------------------------------------------------------- clustering

fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> Points {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rows = Vec::new();
    for c in centers {
        for _ in 0..per {
            rows.push(c.iter().map(|&v| v + noise.sample(&mut rng)).collect::<Vec<f64>>());
        }
    }
    Points::from_rows(&rows)
}

fn hdbscan_properties() -> Outcome {
    let a = hdbscan(&blobs(&[vec![0.0, 0.0], vec![20.0, 0.0]], 50, 1.0, 3), 10).unwrap();
    check(a.n_clusters == 2 && a.noise_count() == 0, format!("{} clusters, {} noise", a.n_clusters, a.noise_count()))?;
    check(
        a.labels[..50].iter().all(|&l| l == a.labels[0]) && a.labels[50..].iter().all(|&l| l == a.labels[50]),
        "blob split across clusters",
    )?;
    let small = hdbscan(&blobs(&[vec![0.0, 0.0]], 9, 1.0, 1), 10).unwrap();
    check(small.labels.iter().all(|&l| l == -1), "fewer than min_cluster_size points formed a cluster")?;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..5);
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| vec![rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)])
            .collect();
        let per = rng.random_range(5..30);
        let mcs = rng.random_range(2..15);
        let sigma = rng.random_range(0.5..4.0);
        let r = hdbscan(&blobs(&centers, per, sigma, seed), mcs).unwrap();
        if let Some(s) = r.cluster_sizes().into_iter().find(|&s| s < mcs) {
            return Err(format!("seed {seed}: cluster of {s} below {mcs}"));
        }
    }
    Ok("2 blobs recovered, small set all noise, 100 seeds respect min size".into())
}

fn tsne_properties() -> Outcome {
    let mut a = vec![0.0; 10];
    let mut b = vec![0.0; 10];
    a[0] = 10.0;
    b[1] = 10.0;
    let pts = blobs(&[a, b], 30, 1.0, 9);
    let cfg = TsneConfig {
        perplexity: 10.0,
        iterations: 500,
        seed: 4,
        ..TsneConfig::default()
    };
    let r1 = tsne_2d(&pts, &cfg).unwrap();
    let r2 = tsne_2d(&pts, &cfg).unwrap();
    check(r1.final_kl < r1.initial_kl, format!("KL {} -> {}", r1.initial_kl, r1.final_kl))?;
    check(r1 == r2, "same seed gave different layouts")?;
    let e = &r1.embedding;
    let centroid = |lo: usize| {
        let (mut x, mut y) = (0.0, 0.0);
        for i in lo..lo + 30 {
            x += e.row(i)[0] / 30.0;
            y += e.row(i)[1] / 30.0;
        }
        [x, y]
    };
    let c = [centroid(0), centroid(30)];
    let d = |p: &[f64], q: &[f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
    let misplaced = (0..60).filter(|&i| d(e.row(i), &c[i / 30]) >= d(e.row(i), &c[1 - i / 30])).count();
    check(misplaced == 0, format!("{misplaced} points nearer the other blob"))?;
    Ok(format!("KL {:.3} -> {:.3}, deterministic, blobs separated", r1.initial_kl, r1.final_kl))
}

// ---------------------------------------------------------------- fuzzy

fn lev_rec(a: &[char], b: &[char]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) if x == y => lev_rec(ra, rb),
        (Some((_, ra)), Some((_, rb))) => 1 + lev_rec(ra, b).min(lev_rec(a, rb)).min(lev_rec(ra, rb)),
    }
}

fn fuzzy_matching() -> Outcome {
    check((lcs_similarity("Chole", "Chloe") - 0.8).abs() < 1e-12, "LCS similarity of Chole/Chloe")?;
    check(levenshtein("Chole", "Chloe") == 2, "Levenshtein of Chole/Chloe")?;
    check(fuzzy_match("Chole", "Chloe"), "Chole should match Chloe")?;
    check(levenshtein("Jessica", "Jesica") == 1 && fuzzy_match("Jessica", "Jesica"), "Jessica/Jesica")?;
    check(!fuzzy_match("Paris", "London"), "Paris should not match London")?;
    let alphabet = ['a', 'b', 'c', 'é'];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let word = |rng: &mut ChaCha8Rng| -> Vec<char> {
        (0..rng.random_range(0..=6)).map(|_| alphabet[rng.random_range(0..4)]).collect()
    };
    for i in 0..1000 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        let (sa, sb): (String, String) = (a.iter().collect(), b.iter().collect());
        if levenshtein(&sa, &sb) != lev_rec(&a, &b) {
            return Err(format!("pair {i} {sa:?}/{sb:?} disagrees with recursion"));
        }
        if fuzzy_match(&sa, &sb) != fuzzy_match(&sb, &sa) {
            return Err(format!("pair {i} {sa:?}/{sb:?} not symmetric"));
        }
    }
    Ok("truth table and 1000 random pairs agree".into())
}

// ---------------------------------------------------------------- pii

#[derive(Deserialize)]
struct CorpusText {
    image_id: String,
    text: String,
    spans: Vec<TruthSpan>,
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn pii_fixture_f1() -> Outcome {
    let fx = common::fixtures().join("pii");
    let corpus: Vec<CorpusText> = jsonl(&fx.join("corpus.jsonl"));
    let set = RecognizerSet::default_set();
    let cfg = AnalyzerConfig::default();
    let detected: Vec<ImageEntities> = corpus
        .iter()
        .map(|c| ImageEntities {
            image_id: c.image_id.clone(),
            text: Some(c.text.clone()),
            entities: analyze(&c.text, &set, &cfg),
        })
        .collect();
    let truth: Vec<GroundTruthRecord> = corpus
        .iter()
        .map(|c| GroundTruthRecord {
            image_id: c.image_id.clone(),
            spans: c.spans.clone(),
        })
        .collect();
    let scores = score_detections(&detected, &truth).unwrap();
    let line = scores
        .iter()
        .map(|(t, s)| format!("{t} F1={:.3} (tp {} fp {} fn {})", s.f1, s.tp, s.fp, s.fn_))
        .collect::<Vec<_>>()
        .join(", ");
    let low: Vec<&String> = scores.iter().filter(|(_, s)| s.f1 < 0.80).map(|(t, _)| t).collect();
    check(low.is_empty(), format!("below 0.80: {low:?}; {line}"))?;

    // hand-written detections with hand-computed scores
    let subset: Vec<ImageEntities> = jsonl(&fx.join("subset_detections.jsonl"));
    let ids: BTreeSet<&str> = subset.iter().map(|s| s.image_id.as_str()).collect();
    let subset_truth: Vec<GroundTruthRecord> = truth.iter().filter(|t| ids.contains(t.image_id.as_str())).cloned().collect();
    let got = score_detections(&subset, &subset_truth).unwrap();
    let want: BTreeMap<String, TypeScore> =
        serde_json::from_str(&std::fs::read_to_string(fx.join("subset_expected.json")).unwrap()).unwrap();
    for (t, w) in &want {
        let g = &got[t];
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        check(
            (g.tp, g.fp, g.fn_) == (w.tp, w.fp, w.fn_)
                && close(g.precision, w.precision)
                && close(g.recall, w.recall)
                && close(g.f1, w.f1),
            format!("{t}: got {g:?}, want {w:?}"),
        )?;
    }
    Ok(format!("{line}; hand subset exact"))
}

fn span(ty: EntityType, text: &str) -> EntitySpan {
    EntitySpan {
        entity_type: ty,
        start: 0,
        end: text.chars().count(),
        text: text.into(),
        score: 1.0,
        recognizer: "hand".into(),
    }
}

fn cooccurrence_codes() -> Outcome {
    use EntityType::{DateTime as D, Location as L, Name as N, PhoneNumber as P};
    let labeled: [&[EntityType]; 10] = [
        &[N, L, D],
        &[N],
        &[],
        &[N, L, P, D],
        &[P],
        &[N, D],
        &[N, N, L, D],
        &[D],
        &[],
        &[L, P],
    ];
    let images: Vec<ImageEntities> = labeled
        .iter()
        .enumerate()
        .map(|(i, types)| ImageEntities {
            image_id: format!("c{i:02}"),
            text: None,
            entities: types.iter().map(|t| span(t.clone(), "x")).collect(),
        })
        .collect();
    let r = cooccurrence(&images).unwrap();
    let got: BTreeMap<&str, usize> = r.codes.iter().map(|c| (c.code.as_str(), c.count)).collect();
    let want = BTreeMap::from([
        ("0000", 2),
        ("0001", 1),
        ("0010", 1),
        ("0110", 1),
        ("1000", 1),
        ("1001", 1),
        ("1101", 2),
        ("1111", 1),
    ]);
    check(got == want, format!("codes {got:?}"))?;
    check(
        (r.at_least_one, r.more_than_one, r.all_four) == (0.8, 0.5, 0.1),
        format!("fractions {} {} {}", r.at_least_one, r.more_than_one, r.all_four),
    )?;
    let nld = presence_code(&[span(N, "Chloe"), span(L, "Boston"), span(D, "12/05/2021")]);
    check(nld == "1101", format!("name+location+date gave {nld}"))?;
    Ok("8 codes match hand counts; >=1 0.8, >1 0.5, all 0.1".into())
}

// ---------------------------------------------------------------- end to end

const OCR_STUB: &str =
    r#"f="${1%.png}.json"; if [ -f "$f" ]; then cat "$f"; else echo '{"text":"","confidence":0.0}'; fi"#;

const NAMES: [&str; 8] = ["Emma", "Olivia", "Liam", "Sophia", "Noah", "Mia", "Lucas", "Chloe"];
const SURNAMES: [&str; 6] = ["Garcia", "Smith", "Nguyen", "Patel", "Brown", "Lopez"];
const CITIES: [&str; 6] = ["Boston", "Chicago", "Denver", "Seattle", "Miami", "Toronto"];
const THEMES: [&str; 3] = ["bump ultrasound scan", "gender reveal party", "nursery crib sonogram"];
const BACKGROUND: [&str; 5] = ["sunset beach", "coffee latte art", "mountain hike", "city skyline", "dog park"];

struct Planted {
    positives: BTreeSet<String>,
}

/// 10,000 x 512 embeddings with three planted themes, near-duplicate copies,
/// captions, 200 px images and per-image OCR replies plus the matching truth.
fn build_inputs(dir: &Path) -> Planted {
    const N: usize = 10_000;
    const DIM: usize = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let unit = Normal::new(0.0f32, 1.0).unwrap();
    let spread = Normal::new(0.0f32, 0.0274).unwrap();
    let tiny = Normal::new(0.0f32, 0.003).unwrap();
    let mut rows: Vec<Vec<f32>> = (0..N).map(|_| (0..DIM).map(|_| unit.sample(&mut rng)).collect()).collect();
    let centers: Vec<Vec<f32>> = (0..3)
        .map(|_| {
            let c: Vec<f32> = (0..DIM).map(|_| unit.sample(&mut rng)).collect();
            let n = c.iter().map(|v| v * v).sum::<f32>().sqrt();
            c.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..N).collect();
    order.shuffle(&mut rng);
    let mut theme_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, c) in centers.iter().enumerate() {
        for &r in &order[k * 40..(k + 1) * 40] {
            rows[r] = c.iter().map(|v| v + spread.sample(&mut rng)).collect();
            theme_of.insert(r, k);
        }
    }
    for j in 0..10 {
        let (src, dst) = (order[j * 12], order[120 + j]);
        rows[dst] = rows[src].iter().map(|v| v + tiny.sample(&mut rng)).collect();
        theme_of.insert(dst, theme_of[&src]);
    }
    EmbeddingMatrix::from_rows(&rows).unwrap().save(dir.join("emb.bin")).unwrap();

    let queries: Vec<Vec<f32>> = centers
        .iter()
        .map(|c| c.iter().map(|v| v + tiny.sample(&mut rng)).collect())
        .collect();
    EmbeddingMatrix::from_rows(&queries).unwrap().save(dir.join("queries.bin")).unwrap();
    std::fs::write(dir.join("queries.labels"), "bump\nreveal\nnursery\n").unwrap();

    let id = |r: usize| format!("img-{r:05}");
    let mut meta = String::new();
    for r in 0..N {
        let caption = match theme_of.get(&r) {
            Some(&k) => format!("{} week {}", THEMES[k], rng.random_range(8..40)),
            None => BACKGROUND[rng.random_range(0..BACKGROUND.len())].to_string(),
        };
        meta.push_str(&json!({ "id": id(r), "url": format!("https://example.org/{r}.jpg"), "caption": caption }).to_string());
        meta.push('\n');
    }
    std::fs::write(dir.join("meta.jsonl"), meta).unwrap();

    let images = dir.join("images");
    std::fs::create_dir(&images).unwrap();
    let mut truth = String::new();
    for (&r, _) in &theme_of {
        let shade = rng.random_range(40u8..200);
        image::GrayImage::from_pixel(200, 200, image::Luma([shade]))
            .save(images.join(format!("{}.png", id(r))))
            .unwrap();
        let mut text = Vec::new();
        let mut spans = Vec::new();
        if rng.random_bool(0.8) {
            let n = format!("{} {}", NAMES[rng.random_range(0..8)], SURNAMES[rng.random_range(0..6)]);
            text.push(format!("Baby {n}"));
            spans.push(json!({ "entity_type": "NAME", "text": n }));
        }
        if rng.random_bool(0.7) {
            let d = format!("{:02}/{:02}/20{}", rng.random_range(1..13), rng.random_range(1..29), rng.random_range(18..24));
            text.push(format!("EDD {d}"));
            spans.push(json!({ "entity_type": "DATE_TIME", "text": d }));
        }
        if rng.random_bool(0.5) {
            let c = CITIES[rng.random_range(0..6)];
            text.push(c.to_string());
            spans.push(json!({ "entity_type": "LOCATION", "text": c }));
        }
        if rng.random_bool(0.3) {
            let p = format!("(555) {:03}-{:04}", rng.random_range(200..1000), rng.random_range(0..10000));
            text.push(format!("Call {p}"));
            spans.push(json!({ "entity_type": "PHONE_NUMBER", "text": p }));
        }
        let reply = json!({ "text": text.join(" "), "confidence": 0.91 });
        std::fs::write(images.join(format!("{}.json", id(r))), format!("{reply}\n")).unwrap();
        truth.push_str(&json!({ "image_id": id(r), "spans": spans }).to_string());
        truth.push('\n');
    }
    std::fs::write(dir.join("truth.jsonl"), truth).unwrap();
    #[cfg(unix)]
    common::script(&dir.join("ocr.sh"), OCR_STUB);
    Planted {
        positives: theme_of.keys().map(|&r| id(r)).collect(),
    }
}

const ARTIFACTS: [&str; 6] = ["det.jsonl", "dedup.json", "clusters.json", "ocr.jsonl", "entities.jsonl", "report.json"];

fn run_pipeline(inputs: &Path, out: &Path, tau: &str) -> Result<(), String> {
    std::fs::create_dir_all(out).unwrap();
    let i = |n: &str| inputs.join(n).display().to_string();
    let o = |n: &str| out.join(n).display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["scan", "--mode", "retrieval", "--embeddings", &i("emb.bin"), "--metadata", &i("meta.jsonl"),
             "--queries", &i("queries.bin"), "--query-labels", &i("queries.labels"), "--tau", tau, "--out", &o("det.jsonl")]
            .into_iter().map(String::from).collect(),
        vec!["dedup", "--detections", &o("det.jsonl"), "--embeddings", &i("emb.bin"), "--metadata", &i("meta.jsonl"),
             "--out", &o("dedup.json")]
            .into_iter().map(String::from).collect(),
        vec!["cluster", "--embeddings", &i("emb.bin"), "--metadata", &i("meta.jsonl"), "--detections", &o("det.jsonl"),
             "--dedup", &o("dedup.json"), "--min-cluster-size", "10", "--out", &o("clusters.json")]
            .into_iter().map(String::from).collect(),
        vec!["pii", "--images", &i("images"), "--ocr-cmd", &i("ocr.sh"), "--detections", &o("det.jsonl"),
             "--dedup", &o("dedup.json"), "--out", &o("ocr.jsonl")]
            .into_iter().map(String::from).collect(),
        vec!["pii", "--text-in", &o("ocr.jsonl"), "--out", &o("entities.jsonl")]
            .into_iter().map(String::from).collect(),
        vec!["eval", "--detected", &o("entities.jsonl"), "--truth", &i("truth.jsonl"), "--dedup", &o("dedup.json"),
             "--out", &o("report.json")]
            .into_iter().map(String::from).collect(),
    ];
    for args in steps {
        let mut full = vec!["--seed".to_string(), "13".into()];
        full.extend(args);
        let res = common::sonoscan(&full);
        if !res.status.success() {
            return Err(format!("{} exited {:?}: {}", full[2], res.status.code(), String::from_utf8_lossy(&res.stderr)));
        }
    }
    Ok(())
}

fn ids_in(path: &Path) -> BTreeSet<String> {
    common::read_records(path)
        .into_iter()
        .map(|r| r["image_id"].as_str().unwrap().to_string())
        .collect()
}

fn end_to_end_deterministic() -> Outcome {
    if cfg!(not(unix)) {
        return Err("requires a POSIX shell for the OCR stub".into());
    }
    let dir = tempfile::tempdir().unwrap();
    let planted = build_inputs(dir.path());
    let mut times = Vec::new();
    for run in ["run1", "run2"] {
        let t = Instant::now();
        run_pipeline(dir.path(), &dir.path().join(run), "0.7")?;
        times.push(t.elapsed().as_secs_f64());
    }
    for name in ARTIFACTS {
        let a = std::fs::read(dir.path().join("run1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("run2").join(name)).unwrap();
        check(a == b, format!("{name} differs between runs"))?;
    }
    check(times.iter().all(|&t| t < 120.0), format!("run times {times:?}"))?;

    let det = ids_in(&dir.path().join("run1/det.jsonl"));
    check(det == planted.positives, format!("{} detections for {} planted", det.len(), planted.positives.len()))?;
    let hi = dir.path().join("hi");
    std::fs::create_dir(&hi).unwrap();
    let tau_hi = hi.join("det.jsonl");
    let out = common::sonoscan([
        "scan".as_ref(),
        "--mode".as_ref(),
        "retrieval".as_ref(),
        "--embeddings".as_ref(),
        dir.path().join("emb.bin").as_os_str(),
        "--queries".as_ref(),
        dir.path().join("queries.bin").as_os_str(),
        "--metadata".as_ref(),
        dir.path().join("meta.jsonl").as_os_str(),
        "--tau".as_ref(),
        "0.85".as_ref(),
        "--out".as_ref(),
        tau_hi.as_os_str(),
    ]);
    check(out.status.success(), "scan at higher tau failed")?;
    let det_hi = ids_in(&tau_hi);
    check(det_hi.is_subset(&det), "raising tau added detections")?;
    check(!det_hi.is_empty() && det_hi.len() < det.len(), "higher tau did not thin the detections")?;

    let report = common::read_value(&dir.path().join("run1/report.json"));
    let clusters = common::read_value(&dir.path().join("run1/clusters.json"));
    let removed = common::read_value(&dir.path().join("run1/dedup.json"))["removed"].as_array().unwrap().len();
    let f1: Vec<String> = report["scores"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(t, s)| format!("{t} {:.2}", s["f1"].as_f64().unwrap()))
        .collect();
    Ok(format!(
        "{} detected ({} at tau 0.85), {removed} duplicates, {} clusters, F1 [{}], runs {:.1}s/{:.1}s, 6 artifacts identical",
        det.len(),
        det_hi.len(),
        clusters["n_clusters"],
        f1.join(", "),
        times[0],
        times[1]
    ))
}

// ---------------------------------------------------------------- review

struct Served {
    child: Child,
    base: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(detections: &Path, log: &Path) -> Result<Served, String> {
    let mut child = Command::new(common::bin())
        .args(["serve".as_ref(), "--detections".as_ref(), detections.as_os_str()])
        .args(["--log".as_ref(), log.as_os_str(), "--bind".as_ref(), "127.0.0.1:0".as_ref()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected banner {line:?}"))?
        .to_string();
    Ok(Served { child, base })
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .into()
}

fn get_json(a: &ureq::Agent, url: &str) -> Result<Value, String> {
    let mut r = a.get(url).call().map_err(|e| e.to_string())?;
    r.body_mut().read_json().map_err(|e| e.to_string())
}

fn review_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("det.jsonl");
    let rows: Vec<String> = (0..4)
        .map(|i| json!({ "image_id": format!("img-{i}"), "score": 0.8 + i as f64 / 100.0, "source": "retrieval" }).to_string())
        .collect();
    std::fs::write(&det, rows.join("\n") + "\n").unwrap();
    let log = dir.path().join("annotations.jsonl");
    let a = agent();

    let (stats, truth) = {
        let s = start_server(&det, &log)?;
        let mut r = a
            .post(&format!("{}/api/items/img-2/annotation", s.base))
            .send_json(json!({
                "annotator": "rev1",
                "revision": 1,
                "verdict": "confirm",
                "truth_spans": [{ "entity_type": "NAME", "text": "Chloe" }, { "entity_type": "LOCATION", "text": "Boston" }]
            }))
            .map_err(|e| e.to_string())?;
        check(r.status().as_u16() == 201, format!("annotation POST returned {}", r.status()))?;
        let _: Value = r.body_mut().read_json().map_err(|e| e.to_string())?;
        let truth = get_json(&a, &format!("{}/api/export/ground_truth", s.base))?;
        let rec = truth["records"]
            .as_array()
            .and_then(|rs| rs.iter().find(|r| r["image_id"] == "img-2"))
            .ok_or("annotation missing from ground-truth export")?;
        check(rec["spans"][0]["text"] == "Chloe" && rec["spans"][1]["text"] == "Boston", "exported spans differ")?;
        (get_json(&a, &format!("{}/api/stats", s.base))?, truth)
    };
    let s = start_server(&det, &log)?;
    let stats2 = get_json(&a, &format!("{}/api/stats", s.base))?;
    let truth2 = get_json(&a, &format!("{}/api/export/ground_truth", s.base))?;
    check(stats == stats2, format!("stats changed across restart: {stats} vs {stats2}"))?;
    check(truth == truth2, "ground truth changed across restart")?;
    Ok(format!("annotation exported and preserved across restart; stats {stats}"))
}
