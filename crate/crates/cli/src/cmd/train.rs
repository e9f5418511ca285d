use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use sonoscan_core::classifier::{
    leakage_filter, predict, train_mlp, train_rf, train_svm, write_model, LabeledSet, MlpConfig, Model,
    RfGrid, Split, SvmConfig,
};
use sonoscan_core::load_embeddings;

use crate::args::{ModelArg, TrainArgs};
use crate::config::{check_unit, DEFAULT_LEAKAGE_THETA};
use crate::output::{read_lines, write_atomic, write_json, Meta};
use crate::Ctx;

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Lines of `label` or `id label`; ids default to `{prefix}{row}`.
fn parse_labels(path: &Path, prefix: &str) -> Result<(Vec<String>, Vec<u8>)> {
    let mut ids = Vec::new();
    let mut y = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (id, label) = match fields.as_slice() {
            [l] => (format!("{prefix}{i}"), *l),
            [id, l] => (id.to_string(), *l),
            _ => bail!("{}: line {}: expected `label` or `id label`", path.display(), i + 1),
        };
        let label: u8 = match label {
            "0" => 0,
            "1" => 1,
            other => bail!("{}: line {}: label {other:?} is not 0 or 1", path.display(), i + 1),
        };
        ids.push(id);
        y.push(label);
    }
    Ok((ids, y))
}

fn labeled(x: &Path, labels: Option<&PathBuf>, split: Split, prefix: &str) -> Result<LabeledSet> {
    let label_path = labels.cloned().unwrap_or_else(|| sidecar(x, ".labels"));
    let emb = load_embeddings(x)?;
    let (ids, y) = parse_labels(&label_path, prefix)?;
    LabeledSet::new(emb, y, ids, split).with_context(|| format!("{} with {}", x.display(), label_path.display()))
}

#[derive(Serialize)]
struct TrainSummary {
    kind: sonoscan_core::classifier::ModelKind,
    dim: usize,
    train_rows: usize,
    leakage_removed: Vec<String>,
    val_accuracy: f64,
}

pub fn run(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let mut train = labeled(&a.train, a.train_labels.as_ref(), Split::Train, "train-")?;
    let val = labeled(&a.val, a.val_labels.as_ref(), Split::Val, "val-")?;

    let mut removed = Vec::new();
    let mut theta = None;
    if let Some(h) = &a.holdout {
        let t = check_unit(
            "leakage theta",
            a.leakage_theta.or(ctx.cfg.thresholds.leakage_theta).unwrap_or(DEFAULT_LEAKAGE_THETA),
        )?;
        let (kept, gone) = leakage_filter(&train, &load_embeddings(h)?, t)?;
        log::info!("leakage filter dropped {} training rows", gone.len());
        train = kept;
        removed = gone;
        theta = Some(t);
    }

    let (model, params) = match a.model {
        ModelArg::Svm => {
            let mut cfg = SvmConfig {
                seed: ctx.seed,
                ..SvmConfig::default()
            };
            if let Some(g) = a.lambda_grid.clone() {
                cfg.lambda_grid = g;
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            let m = train_svm(&train, &val, &cfg)?;
            (Model::Svm(m), serde_json::to_value(&cfg)?)
        }
        ModelArg::Rf => {
            let mut grid = RfGrid {
                seed: ctx.seed,
                ..RfGrid::default()
            };
            if let Some(n) = a.n_trees.clone() {
                grid.n_trees = n;
            }
            if let Some(d) = a.max_depth.clone() {
                grid.max_depth = d;
            }
            let m = train_rf(&train, &val, &grid)?;
            (Model::Forest(m), serde_json::to_value(&grid)?)
        }
        ModelArg::Mlp => {
            let mut cfg = MlpConfig {
                seed: ctx.seed,
                ..MlpConfig::default()
            };
            if let Some(h) = a.hidden.clone() {
                cfg.hidden = h;
            }
            if let Some(v) = a.learning_rate {
                cfg.learning_rate = v;
            }
            if let Some(v) = a.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = a.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = a.patience {
                cfg.patience = v;
            }
            let m = train_mlp(&train, &val, &cfg)?;
            (Model::Mlp(m), serde_json::to_value(&cfg)?)
        }
    };

    let (_, pred) = predict(&model, &val.x)?;
    let correct = pred.iter().zip(&val.y).filter(|(p, y)| p == y).count();
    let val_accuracy = correct as f64 / val.len().max(1) as f64;
    log::info!("validation accuracy {val_accuracy:.4}");

    write_atomic(&a.out, |w| Ok(write_model(&model, w)?))?;
    let meta = Meta::new("train", ctx.seed, json!({ "config": params, "leakage_theta": theta }));
    let summary = TrainSummary {
        kind: model.kind(),
        dim: model.dim(),
        train_rows: train.len(),
        leakage_removed: removed,
        val_accuracy,
    };
    write_json(&sidecar(&a.out, ".json"), &meta, &summary)
}
