use anyhow::Result;
use serde_json::json;
use sonoscan_core::classifier::{detect, load_model};
use sonoscan_core::retrieval::{retrieve, RetrievalConfig};
use sonoscan_core::{load_embeddings, QueryKind, QuerySet};

use super::load_dataset;
use crate::args::{QueryKindArg, ScanArgs, ScanMode};
use crate::config::{check_unit, pick_path};
use crate::output::{read_lines, write_jsonl, Meta};
use crate::Ctx;

pub fn run(ctx: &Ctx, a: ScanArgs) -> Result<()> {
    let paths = &ctx.cfg.paths;
    let emb_path = pick_path(&a.embeddings, &paths.embeddings, "--embeddings")?;
    let meta_path = a.metadata.clone().or_else(|| paths.metadata.clone());
    let mut dataset = load_dataset(&emb_path, meta_path.as_deref())?;
    let n_images = dataset.records.len();

    let (detections, params) = match a.mode {
        ScanMode::Retrieval => {
            let kind = match a.query_kind {
                QueryKindArg::Image => QueryKind::Image,
                QueryKindArg::Text => QueryKind::Text,
            };
            let tau = match a.tau.or(ctx.cfg.thresholds.tau) {
                Some(t) => check_unit("tau", t)?,
                None => RetrievalConfig::default_for(kind).tau,
            };
            let q_path = pick_path(&a.queries, &paths.queries, "--queries")?;
            let q_emb = load_embeddings(&q_path)?;
            let queries = match a.query_labels.as_ref().or(paths.query_labels.as_ref()) {
                Some(p) => QuerySet::new(kind, q_emb, read_lines(p)?)?,
                None => QuerySet::unlabeled(kind, q_emb)?,
            };
            dataset.embeddings = dataset.embeddings.normalize()?;
            let cfg = RetrievalConfig::new(tau, kind)?;
            let dets = retrieve(&dataset, &queries, &cfg)?;
            let params = json!({
                "mode": "retrieval",
                "query_kind": kind,
                "tau": tau,
                "queries": queries.len(),
                "images": n_images,
            });
            (dets, params)
        }
        ScanMode::Classifier => {
            let model_path = pick_path(&a.model, &paths.model, "--model")?;
            let model = load_model(&model_path)?;
            let dets = detect(&model, &dataset)?;
            let params = json!({
                "mode": "classifier",
                "model_kind": model.kind(),
                "images": n_images,
            });
            (dets, params)
        }
    };
    log::info!("{} of {} images flagged", detections.len(), n_images);
    write_jsonl(&a.out, &Meta::new("scan", ctx.seed, params), &detections)
}
