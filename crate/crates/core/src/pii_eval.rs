//! Scoring detected entities against annotated ground truth, plus the
//! per-type counts and per-image histograms used in audit reports.
//!
//! Matching is string-based: two entity texts match when their edit
//! distance is below 2 or their LCS similarity exceeds 0.70.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedup::DupReport;
use crate::pii::{EntitySpan, EntityType};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image {image_id}: entity type {entity_type} is not one of NAME, LOCATION, PHONE_NUMBER, DATE_TIME")]
    UnknownEntityType { image_id: String, entity_type: String },
    #[error("duplicate image id {0} in {1}")]
    DuplicateImage(String, &'static str),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub const LEVENSHTEIN_LIMIT: usize = 2;
pub const SIMILARITY_LIMIT: f64 = 0.70;

/// Insert/delete/substitute edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Length of the longest common subsequence over chars.
pub fn lcs_len(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ca in &a {
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `2 * LCS / (|a| + |b|)`; two empty strings give 1.
pub fn lcs_similarity(a: &str, b: &str) -> f64 {
    let total = a.chars().count() + b.chars().count();
    if total == 0 {
        return 1.0;
    }
    2.0 * lcs_len(a, b) as f64 / total as f64
}

pub fn fuzzy_match(a: &str, b: &str) -> bool {
    levenshtein(a, b) < LEVENSHTEIN_LIMIT || lcs_similarity(a, b) > SIMILARITY_LIMIT
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthSpan {
    pub entity_type: EntityType,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: String,
    #[serde(default)]
    pub spans: Vec<TruthSpan>,
}

/// Detected entities for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntities {
    pub image_id: String,
    /// The analyzed text, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TypeScore {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Scores keyed by entity type name, one row per audited type.
pub type ScoreTable = BTreeMap<String, TypeScore>;

fn check_type(image_id: &str, t: &EntityType) -> Result<(), EvalError> {
    if t.is_audited() {
        Ok(())
    } else {
        Err(EvalError::UnknownEntityType {
            image_id: image_id.to_string(),
            entity_type: t.to_string(),
        })
    }
}

/// Greedy first-fit: detections in start order each take the first unused matching truth.
/// Returns the number of matched pairs.
pub fn greedy_matches(detected: &[&str], truth: &[&str]) -> usize {
    let mut used = vec![false; truth.len()];
    let mut tp = 0;
    for d in detected {
        if let Some(k) = (0..truth.len()).find(|&k| !used[k] && fuzzy_match(d, truth[k])) {
            used[k] = true;
            tp += 1;
        }
    }
    tp
}

/// Per-type precision, recall and F1 over the images present in `truth`.
/// Detections for images without a truth record are ignored.
pub fn score_detections(
    detected: &[ImageEntities],
    truth: &[GroundTruthRecord],
) -> Result<ScoreTable, EvalError> {
    let mut by_image: HashMap<&str, &ImageEntities> = HashMap::new();
    for d in detected {
        for e in &d.entities {
            check_type(&d.image_id, &e.entity_type)?;
        }
        if by_image.insert(&d.image_id, d).is_some() {
            return Err(EvalError::DuplicateImage(d.image_id.clone(), "detections"));
        }
    }
    let mut seen = HashSet::new();
    let mut counts: BTreeMap<&EntityType, (usize, usize, usize)> = BTreeMap::new();
    for t in &EntityType::AUDITED {
        counts.insert(t, (0, 0, 0));
    }
    for rec in truth {
        if !seen.insert(rec.image_id.as_str()) {
            return Err(EvalError::DuplicateImage(rec.image_id.clone(), "ground truth"));
        }
        for s in &rec.spans {
            check_type(&rec.image_id, &s.entity_type)?;
        }
        let mut dets: Vec<&EntitySpan> = by_image
            .get(rec.image_id.as_str())
            .map(|d| d.entities.iter().collect())
            .unwrap_or_default();
        dets.sort_by_key(|e| (e.start, e.end));
        for ty in &EntityType::AUDITED {
            let d: Vec<&str> = dets
                .iter()
                .filter(|e| &e.entity_type == ty)
                .map(|e| e.text.as_str())
                .collect();
            let t: Vec<&str> = rec
                .spans
                .iter()
                .filter(|s| &s.entity_type == ty)
                .map(|s| s.text.as_str())
                .collect();
            let tp = greedy_matches(&d, &t);
            let c = counts.get_mut(ty).expect("audited type");
            c.0 += tp;
            c.1 += d.len() - tp;
            c.2 += t.len() - tp;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(t, (tp, fp, fn_))| (t.to_string(), TypeScore::from_counts(tp, fp, fn_)))
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceCount {
    pub all: usize,
    pub unique: usize,
}

/// Entity counts per type over all images and over dedup survivors only.
/// Without a report every image counts as unique.
pub fn count_instances(
    entities: &[ImageEntities],
    dups: Option<&DupReport>,
) -> Result<BTreeMap<String, InstanceCount>, EvalError> {
    let removed: HashSet<&str> = dups
        .map(|d| d.removed.iter().map(String::as_str).collect())
        .unwrap_or_default();
    let mut out: BTreeMap<String, InstanceCount> = EntityType::AUDITED
        .iter()
        .map(|t| (t.to_string(), InstanceCount::default()))
        .collect();
    let mut total = InstanceCount::default();
    for img in entities {
        let unique = !removed.contains(img.image_id.as_str());
        for e in &img.entities {
            check_type(&img.image_id, &e.entity_type)?;
            let c = out.get_mut(e.entity_type.as_str()).expect("audited type");
            c.all += 1;
            total.all += 1;
            if unique {
                c.unique += 1;
                total.unique += 1;
            }
        }
    }
    out.insert("TOTAL".into(), total);
    Ok(out)
}

/// Bit order of the presence code.
pub const CODE_ORDER: [EntityType; 4] = EntityType::AUDITED;

/// 4-bit presence code, e.g. `"1101"` for name, location and date/time.
pub fn presence_code(entities: &[EntitySpan]) -> String {
    CODE_ORDER
        .iter()
        .map(|t| {
            if entities.iter().any(|e| &e.entity_type == t) {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

fn code_label(code: &str) -> String {
    let parts: Vec<&str> = code
        .chars()
        .zip(CODE_ORDER.iter())
        .filter(|(c, _)| *c == '1')
        .map(|(_, t)| t.as_str())
        .collect();
    if parts.is_empty() {
        "NONE".into()
    } else {
        parts.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceCode {
    pub code: String,
    pub label: String,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceReport {
    pub num_images: usize,
    /// Observed codes, ascending.
    pub codes: Vec<CooccurrenceCode>,
    pub at_least_one: f64,
    pub more_than_one: f64,
    pub all_four: f64,
}

pub fn cooccurrence(entities: &[ImageEntities]) -> Result<CooccurrenceReport, EvalError> {
    let n = entities.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    let (mut one, mut many, mut four) = (0, 0, 0);
    for img in entities {
        for e in &img.entities {
            check_type(&img.image_id, &e.entity_type)?;
        }
        let code = presence_code(&img.entities);
        let bits = code.chars().filter(|&c| c == '1').count();
        one += usize::from(bits >= 1);
        many += usize::from(bits > 1);
        four += usize::from(bits == 4);
        *hist.entry(code).or_default() += 1;
    }
    Ok(CooccurrenceReport {
        num_images: n,
        codes: hist
            .into_iter()
            .map(|(code, count)| CooccurrenceCode {
                label: code_label(&code),
                code,
                count,
                fraction: frac(count),
            })
            .collect(),
        at_least_one: frac(one),
        more_than_one: frac(many),
        all_four: frac(four),
    })
}

/// Number of images per total entity count.
pub fn instance_histogram(entities: &[ImageEntities]) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for img in entities {
        *out.entry(img.entities.len()).or_default() += 1;
    }
    out
}

/// Reads newline-delimited JSON records, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
