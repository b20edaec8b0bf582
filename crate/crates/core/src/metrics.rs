//! Embedding quality and cross-embedding consistency scores. All neighbor
//! searches are exact with ties broken by the smaller id.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::embedding::Embedding;
use crate::neighbors::{k_nearest, sq_dist};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("k = {k} needs more than {k} shared points, found {shared}")]
    InsufficientShared { k: usize, shared: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("k = {k} must be below the point count {n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("embedding ids do not match the dataset")]
    IdMismatch,
    #[error("{labels} labels for {n} points")]
    LabelCount { labels: usize, n: usize },
    #[error("silhouette needs at least 2 labels, found {0}")]
    TooFewLabels(usize),
    #[error("label {0} has fewer than 2 members")]
    SingletonLabel(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub knn_overlap: f64,
    pub k: usize,
    pub n_shared: usize,
}

/// Ids of each row's `k` nearest rows.
fn neighbor_sets(coords: &[f64], dim: usize, ids: &[u64], k: usize) -> Vec<Vec<u64>> {
    (0..ids.len())
        .into_par_iter()
        .map(|i| {
            let mut set: Vec<u64> = k_nearest(coords, dim, ids, i, k).into_iter().map(|(j, _)| ids[j]).collect();
            set.sort_unstable();
            set
        })
        .collect()
}

fn mean_intersection(a: &[Vec<u64>], b: &[Vec<u64>], k: usize) -> f64 {
    let counts: Vec<usize> = a
        .par_iter()
        .zip(b)
        .map(|(x, y)| {
            let (mut i, mut j, mut c) = (0, 0, 0);
            while i < x.len() && j < y.len() {
                match x[i].cmp(&y[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        c += 1;
                        i += 1;
                        j += 1;
                    }
                }
            }
            c
        })
        .collect();
    counts.iter().sum::<usize>() as f64 / (k * a.len()) as f64
}

/// Mean fraction of shared `k`-nearest neighbors between `a` and `b`,
/// both restricted to the ids they have in common.
pub fn knn_overlap(a: &Embedding, b: &Embedding, k: usize) -> Result<ConsistencyScore, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let in_b: HashSet<u64> = b.ids().iter().copied().collect();
    let mut shared: Vec<u64> = a.ids().iter().copied().filter(|id| in_b.contains(id)).collect();
    shared.sort_unstable();
    if shared.len() <= k {
        return Err(MetricsError::InsufficientShared {
            k,
            shared: shared.len(),
        });
    }
    let a = a.subset(&shared).expect("shared ids exist in a");
    let b = b.subset(&shared).expect("shared ids exist in b");
    let na = neighbor_sets(a.coords(), a.dim(), &shared, k);
    let nb = neighbor_sets(b.coords(), b.dim(), &shared, k);
    Ok(ConsistencyScore {
        knn_overlap: mean_intersection(&na, &nb, k),
        k,
        n_shared: shared.len(),
    })
}

/// Mean fraction of each point's high-dimensional `k` nearest neighbors
/// that are also among its `k` nearest in the embedding.
pub fn neighborhood_recall(dataset: &Dataset, embedding: &Embedding, k: usize) -> Result<f64, MetricsError> {
    let n = dataset.len();
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if k >= n {
        return Err(MetricsError::KOutOfRange { k, n });
    }
    let mut sorted = dataset.ids().to_vec();
    sorted.sort_unstable();
    let mut emb_ids = embedding.ids().to_vec();
    emb_ids.sort_unstable();
    if sorted != emb_ids {
        return Err(MetricsError::IdMismatch);
    }
    let emb = embedding.subset(&sorted).map_err(|_| MetricsError::IdMismatch)?;
    let data = dataset.subset(&sorted).map_err(|_| MetricsError::IdMismatch)?;
    let high = neighbor_sets(data.points(), data.dim(), &sorted, k);
    let low = neighbor_sets(emb.coords(), emb.dim(), &sorted, k);
    Ok(mean_intersection(&high, &low, k))
}

/// Mean silhouette with Euclidean distances in the embedding.
pub fn silhouette(embedding: &Embedding, labels: &[i64]) -> Result<f64, MetricsError> {
    let n = embedding.len();
    if labels.len() != n {
        return Err(MetricsError::LabelCount { labels: labels.len(), n });
    }
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(MetricsError::TooFewLabels(groups.len()));
    }
    if let Some((&l, _)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(MetricsError::SingletonLabel(l));
    }
    let keys: Vec<i64> = groups.keys().copied().collect();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = embedding.point(i);
            let mean_dist = |members: &[usize]| {
                let total: f64 = members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| sq_dist(yi, embedding.point(j)).sqrt())
                    .sum();
                let count = members.iter().filter(|&&j| j != i).count();
                total / count as f64
            };
            let a = mean_dist(&groups[&labels[i]]);
            let b = keys
                .iter()
                .filter(|&&l| l != labels[i])
                .map(|l| mean_dist(&groups[l]))
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(coords: Vec<f64>) -> Embedding {
        let n = coords.len() / 2;
        Embedding::new(coords, 2, (0..n as u64).collect()).unwrap()
    }

    #[test]
    fn overlap_with_self_is_one() {
        let a = emb((0..40).map(|v| ((v * 13 % 17) as f64).cos()).collect());
        let s = knn_overlap(&a, &a, 3).unwrap();
        assert_eq!(s.knn_overlap, 1.0);
        assert_eq!(s.n_shared, 20);
    }

    #[test]
    fn overlap_uses_only_shared_ids() {
        let a = emb(vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let b = Embedding::new(vec![0.0, 0.0, 5.0, 5.0, 1.0, 0.0], 2, vec![0, 9, 1]).unwrap();
        assert_eq!(
            knn_overlap(&a, &b, 2),
            Err(MetricsError::InsufficientShared { k: 2, shared: 2 })
        );
        assert_eq!(knn_overlap(&a, &b, 1).unwrap().knn_overlap, 1.0);
    }

    #[test]
    fn silhouette_limits() {
        let tight = emb(vec![0.0, 0.0, 0.0, 0.0, 100.0, 0.0, 100.0, 0.0]);
        assert!((silhouette(&tight, &[0, 0, 1, 1]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(silhouette(&tight, &[0, 0, 0, 1]), Err(MetricsError::SingletonLabel(1)));
        assert_eq!(silhouette(&tight, &[3, 3, 3, 3]), Err(MetricsError::TooFewLabels(1)));
        assert!(silhouette(&tight, &[0, 1]).is_err());
    }

    #[test]
    fn silhouette_matches_hand_computation() {
        // Points 0, 1 | 3, 7 on a line.
        let e = emb(vec![0.0, 0.0, 1.0, 0.0, 3.0, 0.0, 7.0, 0.0]);
        let s = [
            (5.0 - 1.0) / 5.0,
            (4.0 - 1.0) / 4.0,
            (2.5 - 4.0) / 4.0,
            (6.5 - 4.0) / 6.5,
        ];
        let expected = s.iter().sum::<f64>() / 4.0;
        assert!((silhouette(&e, &[0, 0, 1, 1]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn recall_range_checks() {
        let ds = Dataset::from_rows("d", vec![0.0, 1.0, 2.0, 3.0], 1).unwrap();
        let e = Embedding::new(vec![0.0, 1.0, 2.0, 3.0], 1, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(neighborhood_recall(&ds, &e, 1).unwrap(), 1.0);
        assert_eq!(neighborhood_recall(&ds, &e, 4), Err(MetricsError::KOutOfRange { k: 4, n: 4 }));
        let other = Embedding::new(vec![0.0; 4], 1, vec![0, 1, 2, 5]).unwrap();
        assert_eq!(neighborhood_recall(&ds, &other, 1), Err(MetricsError::IdMismatch));
    }
}
