use anyhow::Result;
use serde::Serialize;
use serde_json::json;
use sonoscan_core::classifier::{boundary_band, load_model};

use super::load_dataset;
use crate::args::BandArgs;
use crate::config::{pick_path, ConfigError};
use crate::output::{write_jsonl, Meta};
use crate::Ctx;

pub const DEFAULT_K_SD: f64 = 2.0;

#[derive(Serialize)]
struct BandRow<'a> {
    image_id: &'a str,
    row: usize,
    score: f64,
}

pub fn run(ctx: &Ctx, a: BandArgs) -> Result<()> {
    let paths = &ctx.cfg.paths;
    let model = load_model(pick_path(&a.model, &paths.model, "--model")?)?;
    let emb_path = pick_path(&a.embeddings, &paths.embeddings, "--embeddings")?;
    let meta_path = a.metadata.clone().or_else(|| paths.metadata.clone());
    let dataset = load_dataset(&emb_path, meta_path.as_deref())?;
    let k_sd = a.k_sd.or(ctx.cfg.thresholds.k_sd).unwrap_or(DEFAULT_K_SD);
    if !(k_sd.is_finite() && k_sd > 0.0) {
        return Err(ConfigError::Invalid(format!("--k-sd must be positive, got {k_sd}")).into());
    }
    let hits = boundary_band(&model, &dataset.embeddings, k_sd)?;
    let rows: Vec<BandRow> = hits
        .iter()
        .map(|h| BandRow {
            image_id: &dataset.records[h.row].id,
            row: h.row,
            score: h.similarity,
        })
        .collect();
    log::info!("{} images in the band", rows.len());
    let meta = Meta::new("boundary-band", ctx.seed, json!({ "k_sd": k_sd, "model_kind": model.kind() }));
    write_jsonl(&a.out, &meta, &rows)
}
