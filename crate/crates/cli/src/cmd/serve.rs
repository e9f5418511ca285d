use std::collections::HashMap;
use std::io::Write;

use anyhow::{Context, Result};
use sonoscan_core::embedding::load_metadata;
use sonoscan_core::pii_eval::ImageEntities;
use sonoscan_core::Detection;
use sonoscan_review::{build_queue, serve, AnnotationLog, AppState};

use super::cluster::ClusterReport;
use crate::args::ServeArgs;
use crate::config::{pick_path, ConfigError};
use crate::output::{read_json, read_jsonl};
use crate::Ctx;

pub fn run(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let paths = &ctx.cfg.paths;
    let detections: Vec<Detection> = read_jsonl(&pick_path(&a.detections, &paths.detections, "--detections")?)?;
    let labels = match a.clusters.as_ref().or(paths.clusters.as_ref()) {
        Some(p) => read_json::<ClusterReport>(p)?.labels(),
        None => HashMap::new(),
    };
    let entities: Vec<ImageEntities> = match a.entities.as_ref().or(paths.entities.as_ref()) {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let captions: HashMap<String, String> = match a.metadata.as_ref().or(paths.metadata.as_ref()) {
        Some(p) => load_metadata(p)?.into_iter().map(|r| (r.id, r.caption)).collect(),
        None => HashMap::new(),
    };
    let log_path = pick_path(&a.log, &paths.log, "--log")?;
    let log = AnnotationLog::open(&log_path).with_context(|| format!("annotation log {}", log_path.display()))?;
    let items = build_queue(&detections, &labels, &captions, &entities);
    log::info!("{} queue items, {} annotations replayed", items.len(), log.len());
    let images = a.images.clone().or_else(|| paths.images.clone());
    let state = AppState::new(items, log, images);

    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.workers.clamp(1, 8))
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| ConfigError::Invalid(format!("cannot bind {}: {e}", a.bind)))?;
        let addr = listener.local_addr()?;
        let mut out = std::io::stdout();
        writeln!(out, "listening on http://{addr}")?;
        out.flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, state, shutdown).await?;
        Ok(())
    })
}
