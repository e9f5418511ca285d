use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sonoscan_core::pii_eval::{
    cooccurrence, count_instances, instance_histogram, score_detections, CooccurrenceReport, GroundTruthRecord,
    ImageEntities, InstanceCount, ScoreTable,
};

use super::load_dedup;
use crate::args::EvalArgs;
use crate::output::{read_jsonl, write_json, Meta};
use crate::Ctx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    /// Per-type P/R/F1; absent without ground truth.
    pub scores: Option<ScoreTable>,
    pub counts: BTreeMap<String, InstanceCount>,
    /// Entities per image -> number of images.
    pub histogram: BTreeMap<usize, usize>,
    pub cooccurrence: CooccurrenceReport,
}

/// JSONL ground truth, or a review-service export object with a `records` array.
fn load_truth(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    if let Ok(Value::Object(mut obj)) = serde_json::from_str::<Value>(&text) {
        if let Some(records) = obj.remove("records") {
            return serde_json::from_value(records).with_context(|| format!("{}: bad records", path.display()));
        }
    }
    read_jsonl(path)
}

pub fn run(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let detected: Vec<ImageEntities> = read_jsonl(&a.detected)?;
    let truth_path = a.truth.as_ref().or(ctx.cfg.paths.truth.as_ref());
    let scores = match truth_path {
        Some(p) => Some(score_detections(&detected, &load_truth(p)?)?),
        None => None,
    };
    let dups = match a.dedup.as_ref().or(ctx.cfg.paths.dedup.as_ref()) {
        Some(p) => Some(load_dedup(p)?),
        None => None,
    };
    let report = EvalReport {
        images: detected.len(),
        scores,
        counts: count_instances(&detected, dups.as_ref())?,
        histogram: instance_histogram(&detected),
        cooccurrence: cooccurrence(&detected)?,
    };
    let meta = Meta::new(
        "eval",
        ctx.seed,
        json!({ "with_truth": truth_path.is_some(), "with_dedup": dups.is_some() }),
    );
    write_json(&a.out, &meta, &report)
}
