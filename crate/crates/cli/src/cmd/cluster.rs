use std::collections::HashMap;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sonoscan_core::cluster::{
    default_stopwords, hdbscan_with, pca_reduce, theme_words, tsne_2d, HdbscanParams, Points, ThemeSummary,
    TsneConfig,
};
use sonoscan_core::dedup::rows_for;

use super::{load_dataset, select_ids};
use crate::args::ClusterArgs;
use crate::config::{pick_path, ConfigError, DEFAULT_MIN_CLUSTER_SIZE};
use crate::output::{write_json, Meta};
use crate::Ctx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPoint {
    pub image_id: String,
    pub label: i32,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneSummary {
    pub perplexity: f64,
    pub iterations: usize,
    pub initial_kl: f64,
    pub final_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub n_clusters: usize,
    pub noise: usize,
    pub points: Vec<ClusterPoint>,
    pub themes: Vec<ThemeSummary>,
    pub explained_variance: Vec<f64>,
    pub tsne: Option<TsneSummary>,
}

impl ClusterReport {
    pub fn labels(&self) -> HashMap<String, i32> {
        self.points.iter().map(|p| (p.image_id.clone(), p.label)).collect()
    }
}

/// Largest usable perplexity for `n` points, or `None` when a layout is not feasible.
fn feasible_perplexity(requested: f64, n: usize) -> Option<f64> {
    let limit = (n as f64 - 1.0) / 3.0;
    if limit <= 1.5 {
        return None;
    }
    Some(if requested < limit { requested } else { (limit * 0.95).max(1.0) })
}

pub fn run(ctx: &Ctx, a: ClusterArgs) -> Result<()> {
    let paths = &ctx.cfg.paths;
    let emb_path = pick_path(&a.embeddings, &paths.embeddings, "--embeddings")?;
    let meta_path = a.metadata.clone().or_else(|| paths.metadata.clone());
    let dataset = load_dataset(&emb_path, meta_path.as_deref())?;
    let min_cluster_size = a
        .min_cluster_size
        .or(ctx.cfg.cluster.min_cluster_size)
        .unwrap_or(DEFAULT_MIN_CLUSTER_SIZE);
    let min_samples = a.min_samples.or(ctx.cfg.cluster.min_samples);
    if min_cluster_size < 2 || min_samples == Some(0) {
        return Err(ConfigError::Invalid("--min-cluster-size must be >= 2 and --min-samples >= 1".into()).into());
    }
    if !(a.perplexity.is_finite() && a.perplexity > 0.0) {
        return Err(ConfigError::Invalid(format!("--perplexity must be positive, got {}", a.perplexity)).into());
    }

    let all: Vec<String> = dataset.records.iter().map(|r| r.id.clone()).collect();
    let ids = select_ids(
        &all,
        a.detections.as_ref().or(paths.detections.as_ref()).map(|p| p.as_path()),
        a.dedup.as_ref().or(paths.dedup.as_ref()).map(|p| p.as_path()),
    )?;
    let rows = rows_for(&all, &ids)?;
    let n = rows.len();

    let mut params = json!({
        "min_cluster_size": min_cluster_size,
        "min_samples": min_samples,
        "pca_dim": a.pca_dim,
        "top_k": a.top_k,
    });
    let mut report = ClusterReport {
        n_clusters: 0,
        noise: 0,
        points: Vec::new(),
        themes: Vec::new(),
        explained_variance: Vec::new(),
        tsne: None,
    };
    if n > 0 {
        let unit = dataset.embeddings.select(&rows).normalize()?;
        let raw = Points::from(&unit);
        let reduced = if a.pca_dim > 0 && a.pca_dim < n && a.pca_dim <= raw.dim {
            let pca = pca_reduce(&raw, a.pca_dim)?;
            report.explained_variance = pca.explained_variance;
            pca.projected
        } else {
            log::warn!("skipping PCA: {n} points cannot be reduced to {} dimensions", a.pca_dim);
            raw
        };
        let assign = hdbscan_with(
            &reduced,
            &HdbscanParams {
                min_cluster_size,
                min_samples,
            },
        )?;
        report.n_clusters = assign.n_clusters;
        report.noise = assign.noise_count();

        let mut coords: Option<Points> = None;
        if !a.no_tsne {
            match feasible_perplexity(a.perplexity, n) {
                None => log::warn!("skipping t-SNE: {n} points are too few"),
                Some(p) => {
                    if p != a.perplexity {
                        log::warn!("perplexity {} clamped to {p:.3} for {n} points", a.perplexity);
                    }
                    let cfg = TsneConfig {
                        perplexity: p,
                        iterations: a.tsne_iterations,
                        seed: ctx.seed,
                        ..TsneConfig::default()
                    };
                    let t = tsne_2d(&reduced, &cfg)?;
                    report.tsne = Some(TsneSummary {
                        perplexity: p,
                        iterations: a.tsne_iterations,
                        initial_kl: t.initial_kl,
                        final_kl: t.final_kl,
                    });
                    params["perplexity"] = json!(p);
                    coords = Some(t.embedding);
                }
            }
        }
        report.points = ids
            .iter()
            .zip(&assign.labels)
            .enumerate()
            .map(|(i, (id, &label))| ClusterPoint {
                image_id: id.clone(),
                label,
                x: coords.as_ref().map(|c| c.row(i)[0]),
                y: coords.as_ref().map(|c| c.row(i)[1]),
            })
            .collect();
        let captions: Vec<(i32, &str)> = rows
            .iter()
            .zip(&assign.labels)
            .map(|(&r, &l)| (l, dataset.records[r].caption.as_str()))
            .collect();
        report.themes = theme_words(&captions, a.top_k, &default_stopwords());
    }
    log::info!("{n} points, {} clusters, {} noise", report.n_clusters, report.noise);
    write_json(&a.out, &Meta::new("cluster", ctx.seed, params), &report)
}
