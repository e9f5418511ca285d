use anyhow::Result;
use serde_json::json;
use sonoscan_core::dedup::{deduplicate, rows_for, DEFAULT_DEDUP_THETA};

use super::{detection_ids, load_dataset};
use crate::args::DedupArgs;
use crate::config::{check_unit, pick_path};
use crate::output::{write_json, Meta};
use crate::Ctx;

pub fn run(ctx: &Ctx, a: DedupArgs) -> Result<()> {
    let paths = &ctx.cfg.paths;
    let emb_path = pick_path(&a.embeddings, &paths.embeddings, "--embeddings")?;
    let meta_path = a.metadata.clone().or_else(|| paths.metadata.clone());
    let dataset = load_dataset(&emb_path, meta_path.as_deref())?;
    let theta = check_unit(
        "theta",
        a.theta.or(ctx.cfg.thresholds.dedup_theta).unwrap_or(DEFAULT_DEDUP_THETA),
    )?;
    let all: Vec<String> = dataset.records.iter().map(|r| r.id.clone()).collect();
    let (ids, matrix) = match a.detections.as_ref().or(paths.detections.as_ref()) {
        Some(p) => {
            let ids = detection_ids(p)?;
            let rows = rows_for(&all, &ids)?;
            (ids, dataset.embeddings.select(&rows))
        }
        None => (all, dataset.embeddings),
    };
    let report = deduplicate(&ids, &matrix, theta)?;
    log::info!(
        "{} images, {} kept, {} removed",
        ids.len(),
        report.kept.len(),
        report.removed.len()
    );
    let meta = Meta::new("dedup", ctx.seed, json!({ "theta": theta, "images": ids.len() }));
    write_json(&a.out, &meta, &report)
}
