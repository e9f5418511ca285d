use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sonoscan_core::ocr::{process_image, ExternalCommand, OcrConfig, OcrOutcome, Upscaler};
use sonoscan_core::pii::{analyze, load_recognizers, AnalyzerConfig, RecognizerSet};
use sonoscan_core::pii_eval::ImageEntities;

use super::select_ids;
use crate::args::PiiArgs;
use crate::config::ConfigError;
use crate::output::{read_jsonl, write_jsonl, Meta};
use crate::Ctx;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
/// Text fields tried in order when reading entity-stage input.
const TEXT_FIELDS: [&str; 3] = ["corrected_text", "text", "ocr_text"];

pub fn run(ctx: &Ctx, a: PiiArgs) -> Result<()> {
    match (&a.images, &a.text_in) {
        (_, Some(t)) => entities(ctx, &a, t),
        (Some(dir), None) => ocr(ctx, &a, dir),
        (None, None) => match &ctx.cfg.paths.images {
            Some(dir) => ocr(ctx, &a, dir),
            None => Err(ConfigError::Required("--images or --text-in").into()),
        },
    }
}

/// `(image_id, path)` for every image file in `dir`, sorted by id.
fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path));
        }
    }
    out.sort();
    out.dedup_by(|a, b| a.0 == b.0);
    Ok(out)
}

fn ocr(ctx: &Ctx, a: &PiiArgs, dir: &Path) -> Result<()> {
    let cmds = &ctx.cfg.commands;
    let ocr_line = a
        .ocr_cmd
        .clone()
        .or_else(|| cmds.ocr.clone())
        .ok_or(ConfigError::Required("--ocr-cmd"))?;
    let mut cfg = OcrConfig::new(ExternalCommand::parse(&ocr_line)?);
    if let Some(c) = a.correct_cmd.clone().or_else(|| cmds.correct.clone()) {
        cfg.correct = Some(ExternalCommand::parse(&c)?);
    }
    if let Some(u) = a.upscale_cmd.clone().or_else(|| cmds.upscale.clone()) {
        cfg.upscaler = Upscaler::External(ExternalCommand::parse(&u)?);
    }
    cfg.rotation_step = a.rotation_step;
    cfg.max_angle = a.max_angle;
    cfg.workers = ctx.workers;

    let images = list_images(dir)?;
    let all: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
    let paths = &ctx.cfg.paths;
    let wanted: HashSet<String> = select_ids(
        &all,
        a.detections.as_ref().or(paths.detections.as_ref()).map(PathBuf::as_path),
        a.dedup.as_ref().or(paths.dedup.as_ref()).map(PathBuf::as_path),
    )?
    .into_iter()
    .collect();

    let mut outcomes: Vec<OcrOutcome> = Vec::new();
    for (id, path) in images.iter().filter(|(id, _)| wanted.contains(id)) {
        let out = process_image(id, path, &cfg).with_context(|| format!("image {id}"))?;
        for w in &out.warnings {
            log::warn!("{id}: {w}");
        }
        outcomes.push(out);
    }
    log::info!("recognized text in {} images", outcomes.len());
    let meta = Meta::new(
        "pii",
        ctx.seed,
        json!({
            "stage": "ocr",
            "rotation_step": cfg.rotation_step,
            "max_angle": cfg.max_angle,
            "corrected": cfg.correct.is_some(),
            "external_upscaler": matches!(cfg.upscaler, Upscaler::External(_)),
        }),
    );
    write_jsonl(&a.out, &meta, &outcomes)
}

fn text_of(v: &Value) -> Option<String> {
    TEXT_FIELDS
        .iter()
        .find_map(|f| v.get(f).and_then(Value::as_str))
        .map(str::to_string)
        .or_else(|| {
            v.get("best")
                .and_then(|b| b.get("text"))
                .and_then(Value::as_str)
                .map(str::to_string)
        })
}

fn entities(ctx: &Ctx, a: &PiiArgs, input: &Path) -> Result<()> {
    let threshold = a
        .score_threshold
        .or(ctx.cfg.thresholds.pii_score_threshold)
        .unwrap_or(AnalyzerConfig::default().score_threshold);
    let defaults = AnalyzerConfig::default();
    let cfg = AnalyzerConfig::new(threshold, defaults.context_window, defaults.context_boost)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let custom = a.recognizers.as_ref().or(ctx.cfg.paths.recognizers.as_ref());
    let set = match custom {
        Some(p) => load_recognizers(p).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        None => RecognizerSet::default_set(),
    };

    let records: Vec<Value> = read_jsonl(input)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, v) in records.iter().enumerate() {
        let id = v
            .get("image_id")
            .or_else(|| v.get("id"))
            .and_then(Value::as_str)
            .with_context(|| format!("{}: record {} has no image_id", input.display(), i + 1))?;
        let text = text_of(v).unwrap_or_default();
        out.push(ImageEntities {
            image_id: id.to_string(),
            entities: analyze(&text, &set, &cfg),
            text: Some(text),
        });
    }
    let n: usize = out.iter().map(|e| e.entities.len()).sum();
    log::info!("{n} entities in {} texts", out.len());
    let meta = Meta::new(
        "pii",
        ctx.seed,
        json!({
            "stage": "entities",
            "score_threshold": cfg.score_threshold,
            "context_window": cfg.context_window,
            "context_boost": cfg.context_boost,
            "recognizers": set.recognizers().iter().map(|r| r.id()).collect::<Vec<_>>(),
        }),
    );
    write_jsonl(&a.out, &meta, &out)
}
