//! Embedding extraction, leave-one-out retrieval metrics and 2-D projection.

mod embeddings;
mod metrics;
mod tsne;

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use embeddings::{Embedder, EmbeddingMatrix, EmbeddingMeta};
pub use metrics::{
    average_precision_at_k, distance, knn_accuracy, knn_accuracy_from, map_at_k, map_at_k_from,
    nearest, neighbor_table, vote, Metric,
};
pub use tsne::{tsne, TsneConfig};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::util::derived_rng;

pub const DEFAULT_K: usize = 5;

/// Ranked gallery items for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked_ids: Vec<String>,
    pub ranked_labels: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Top-`k` items of `gallery` for an external query vector.
pub fn retrieve(
    gallery: &EmbeddingMatrix,
    query_id: &str,
    query: &[f32],
    k: usize,
    metric: Metric,
) -> Result<RetrievalResult> {
    if query.len() != gallery.dim() {
        return Err(Error::Config(format!(
            "query has dimension {}, the gallery {}",
            query.len(),
            gallery.dim()
        )));
    }
    let nn = nearest(gallery, query, k, metric, None);
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        ranked_ids: nn.iter().map(|&(j, _)| gallery.ids[j].clone()).collect(),
        ranked_labels: nn.iter().map(|&(j, _)| gallery.labels[j]).collect(),
        distances: nn.iter().map(|&(_, d)| d).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMetrics {
    pub knn_accuracy: f64,
    pub map_at_5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model_kind: Option<String>,
    pub backbone: Option<String>,
    pub embed_dim: usize,
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint_manifest_hash: String,
    pub manifest_hash: String,
    pub metric: Metric,
    pub k: usize,
    pub n_known: usize,
    pub n_unknown: usize,
}

/// Retrieval quality on the known- and unknown-category test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub known: SplitMetrics,
    pub unknown: SplitMetrics,
    pub metadata: ReportMetadata,
}

pub fn split_metrics(em: &EmbeddingMatrix, k: usize, metric: Metric) -> Result<SplitMetrics> {
    let table = neighbor_table(em, k, metric)?;
    Ok(SplitMetrics {
        knn_accuracy: knn_accuracy_from(&table, &em.labels),
        map_at_5: map_at_k_from(&table, &em.labels, k),
    })
}

/// Metrics for precomputed known/unknown embeddings.
pub fn evaluate_embeddings(
    known: &EmbeddingMatrix,
    unknown: &EmbeddingMatrix,
    manifest_hash: &str,
    metric: Metric,
) -> Result<EvalReport> {
    if known.dim() != unknown.dim() {
        return Err(Error::Config("known and unknown embeddings differ in dimension".into()));
    }
    let meta = &known.meta;
    Ok(EvalReport {
        known: split_metrics(known, DEFAULT_K, metric)?,
        unknown: split_metrics(unknown, DEFAULT_K, metric)?,
        metadata: ReportMetadata {
            model_kind: meta.model_kind.clone(),
            backbone: meta.backbone.clone(),
            embed_dim: known.dim(),
            config_hash: meta.config_hash.clone(),
            seed: meta.seed,
            checkpoint_manifest_hash: meta.manifest_hash.clone(),
            manifest_hash: manifest_hash.to_string(),
            metric,
            k: DEFAULT_K,
            n_known: known.len(),
            n_unknown: unknown.len(),
        },
    })
}

/// Extract embeddings for both test sets and score them. A checkpoint trained
/// on a different manifest is refused unless `force` is set.
pub fn evaluate(
    embedder: &Embedder,
    split: &DatasetSplit,
    metric: Metric,
    force: bool,
) -> Result<EvalReport> {
    if embedder.header.manifest_hash != split.manifest_hash {
        if !force {
            return Err(Error::Config(format!(
                "checkpoint was trained on manifest {} but the split is {} (use --force to override)",
                embedder.header.manifest_hash, split.manifest_hash
            )));
        }
        log::warn!("evaluating across mismatched manifests");
    }
    let known = embedder.extract(&split.test_known, "test_known")?;
    let unknown = embedder.extract(&split.test_unknown, "test_unknown")?;
    evaluate_embeddings(&known, &unknown, &split.manifest_hash, metric)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub id: String,
    pub label: usize,
    pub x: f64,
    pub y: f64,
}

/// t-SNE of the rows of `n_classes` randomly chosen classes.
pub fn project_2d(em: &EmbeddingMatrix, n_classes: usize, cfg: &TsneConfig) -> Result<Vec<ProjectionRow>> {
    let mut classes: Vec<usize> = em.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < n_classes || n_classes == 0 {
        return Err(Error::Config(format!(
            "cannot select {n_classes} classes from {} present",
            classes.len()
        )));
    }
    classes.shuffle(&mut derived_rng(cfg.seed, "projection-classes"));
    let chosen: std::collections::BTreeSet<usize> = classes[..n_classes].iter().copied().collect();
    let sub = em.select(|i| chosen.contains(&em.labels[i]))?;
    let points: Vec<Vec<f64>> = (0..sub.len())
        .map(|i| sub.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    let y = tsne(&points, cfg)?;
    Ok((0..sub.len())
        .map(|i| ProjectionRow {
            id: sub.ids[i].clone(),
            label: sub.labels[i],
            x: y[i][0],
            y: y[i][1],
        })
        .collect())
}

pub fn projection_csv(rows: &[ProjectionRow]) -> String {
    let mut out = String::from("id,label,x,y\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.id, r.label, r.x, r.y));
    }
    out
}

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Scatter plot of a projection, one colour per label.
pub fn projection_scatter(rows: &[ProjectionRow], side: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    if rows.is_empty() {
        return img;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for r in rows {
        x0 = x0.min(r.x);
        x1 = x1.max(r.x);
        y0 = y0.min(r.y);
        y1 = y1.max(r.y);
    }
    let mut labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let margin = 8.0;
    let span = side as f64 - 2.0 * margin;
    for r in rows {
        let colour = PALETTE[labels.binary_search(&r.label).unwrap() % PALETTE.len()];
        let px = margin + (r.x - x0) / (x1 - x0).max(1e-12) * span;
        let py = margin + (r.y - y0) / (y1 - y0).max(1e-12) * span;
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                if dx * dx + dy * dy > 5 {
                    continue;
                }
                let (x, y) = (px as i64 + dx, py as i64 + dy);
                if x >= 0 && y >= 0 && (x as u32) < side && (y as u32) < side {
                    img.put_pixel(x as u32, y as u32, Rgb(colour));
                }
            }
        }
    }
    img
}

pub fn write_projection(rows: &[ProjectionRow], csv_path: &Path, png_path: Option<&Path>) -> Result<()> {
    crate::util::write_file(csv_path, projection_csv(rows).as_bytes())?;
    if let Some(p) = png_path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        projection_scatter(rows, 512).save(p)?;
    }
    Ok(())
}
