use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

pub fn distance(metric: Metric, a: &[f32], b: &[f32]) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (&x, &y) in a.iter().zip(b) {
                let (x, y) = (x as f64, y as f64);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            let denom = (na * nb).sqrt();
            if denom == 0.0 {
                1.0
            } else {
                1.0 - dot / denom
            }
        }
    }
}

/// Top-`k` gallery rows for `query`, ascending by distance with ties broken by
/// row index. Row `exclude` is left out of the gallery.
pub fn nearest(
    em: &EmbeddingMatrix,
    query: &[f32],
    k: usize,
    metric: Metric,
    exclude: Option<usize>,
) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> = (0..em.len())
        .filter(|&j| Some(j) != exclude)
        .map(|j| (j, distance(metric, query, em.row(j))))
        .collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let k = k.min(cand.len());
    if k < cand.len() && k > 0 {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_by(order);
    cand.truncate(k);
    cand
}

/// Majority label of a ranked neighbor list; a tie goes to the tied class
/// whose first member ranks highest.
pub fn vote(labels: &[usize]) -> Option<usize> {
    let mut counts: Vec<(usize, usize, usize)> = Vec::new(); // (label, count, first rank)
    for (rank, &l) in labels.iter().enumerate() {
        match counts.iter_mut().find(|c| c.0 == l) {
            Some(c) => c.1 += 1,
            None => counts.push((l, 1, rank)),
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|c| c.0)
}

/// `(sum_i P@i * rel_i) / min(R, k)`; 0 when `R = 0`.
pub fn average_precision_at_k(rel: &[bool], relevant_total: usize, k: usize) -> f64 {
    let denom = relevant_total.min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in rel.iter().take(k).enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

fn check_size(em: &EmbeddingMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if em.len() <= k {
        return Err(Error::Config(format!(
            "need more than k = {k} embeddings, got {}",
            em.len()
        )));
    }
    Ok(())
}

/// Leave-one-out `k` nearest rows of every row, nearest first.
pub fn neighbor_table(em: &EmbeddingMatrix, k: usize, metric: Metric) -> Result<Vec<Vec<usize>>> {
    check_size(em, k)?;
    Ok((0..em.len())
        .into_par_iter()
        .map(|q| {
            let nn: Vec<usize> = nearest(em, em.row(q), k, metric, Some(q))
                .into_iter()
                .map(|(j, _)| j)
                .collect();
            assert!(!nn.contains(&q), "query {q} retrieved itself");
            nn
        })
        .collect())
}

/// kNN accuracy given each row's ranked neighbours and the row labels.
pub fn knn_accuracy_from(table: &[Vec<usize>], labels: &[usize]) -> f64 {
    let correct = table
        .iter()
        .enumerate()
        .filter(|(q, nn)| {
            let votes: Vec<usize> = nn.iter().map(|&j| labels[j]).collect();
            vote(&votes) == Some(labels[*q])
        })
        .count();
    correct as f64 / table.len() as f64
}

/// mAP@k given each row's ranked neighbours and the row labels.
pub fn map_at_k_from(table: &[Vec<usize>], labels: &[usize], k: usize) -> f64 {
    let mut per_class = std::collections::HashMap::new();
    for &l in labels {
        *per_class.entry(l).or_insert(0usize) += 1;
    }
    let singletons = per_class.values().filter(|&&c| c == 1).count();
    if singletons > 0 {
        log::warn!("{singletons} classes have a single member; their queries score AP = 0");
    }
    let total: f64 = table
        .iter()
        .enumerate()
        .map(|(q, nn)| {
            let c = labels[q];
            let rel: Vec<bool> = nn.iter().map(|&j| labels[j] == c).collect();
            average_precision_at_k(&rel, per_class[&c] - 1, k)
        })
        .sum();
    total / table.len() as f64
}

/// Leave-one-out kNN classification accuracy.
pub fn knn_accuracy(em: &EmbeddingMatrix, k: usize, metric: Metric) -> Result<f64> {
    Ok(knn_accuracy_from(&neighbor_table(em, k, metric)?, &em.labels))
}

/// Leave-one-out mean average precision over the top `k`.
pub fn map_at_k(em: &EmbeddingMatrix, k: usize, metric: Metric) -> Result<f64> {
    Ok(map_at_k_from(&neighbor_table(em, k, metric)?, &em.labels, k))
}
